//! Seeded random models standing in for trained weights.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerConfig, ModelDescriptor, ModelError};
use crate::bitmath::PrecisionMode;
use crate::mac::ThresholdSet;

/// Layer widths of the tiny fully connected MNIST network, input first.
pub const TFC_WIDTHS: [usize; 5] = [784, 64, 64, 64, 10];

pub fn tfc_shape() -> Vec<usize> {
    TFC_WIDTHS.to_vec()
}

fn mode_values(mode: PrecisionMode) -> Vec<i64> {
    mode.value_range()
        .filter(|&v| mode.admits(v))
        .map(i64::from)
        .collect()
}

fn random_value(rng: &mut impl Rng, mode: PrecisionMode) -> i32 {
    if mode.is_bipolar() {
        if rng.gen::<bool>() {
            1
        } else {
            -1
        }
    } else {
        rng.gen_range(mode.value_range())
    }
}

/// Interval of accumulator values where a neuron with uniformly random
/// weights and inputs usually lands: mean ± 3σ, clipped to what the layer
/// can produce and widened to hold at least `count` distinct thresholds.
fn threshold_window(in_features: usize, mode: PrecisionMode, count: usize) -> (i64, i64) {
    let values = mode_values(mode);
    let n = values.len() as f64;
    let mean = values.iter().sum::<i64>() as f64 / n;
    let mean_sq = values.iter().map(|v| v * v).sum::<i64>() as f64 / n;
    let product_var = mean_sq * mean_sq - mean.powi(4);
    let products: Vec<i64> = values
        .iter()
        .flat_map(|a| values.iter().map(move |b| a * b))
        .collect();
    let k = in_features as i64;
    let reach_lo = k * products.iter().min().unwrap();
    let reach_hi = k * products.iter().max().unwrap();

    let center = (in_features as f64 * mean * mean).round() as i64;
    let half = (3.0 * (in_features as f64 * product_var).sqrt()).ceil() as i64 + 1;
    let mut lo = (center - half).max(reach_lo);
    let mut hi = (center + half).min(reach_hi);
    while ((hi - lo + 1) as usize) < count {
        lo -= 1;
        hi += 1;
    }
    (lo, hi)
}

fn random_thresholds(rng: &mut impl Rng, window: (i64, i64), count: usize) -> ThresholdSet {
    let (lo, hi) = window;
    let mut picks: Vec<i32> = index::sample(rng, (hi - lo + 1) as usize, count)
        .into_iter()
        .map(|offset| (lo + offset as i64) as i32)
        .collect();
    picks.sort_unstable();
    ThresholdSet::new(picks).expect("distinct sorted picks of a valid count")
}

/// Random model with layer widths `widths` (input width first) and one mode
/// per layer. Equal seeds give equal models.
pub fn generate_random_model(
    widths: &[usize],
    modes: &[PrecisionMode],
    seed: u64,
) -> Result<ModelDescriptor, ModelError> {
    if widths.len() < 2 || modes.len() != widths.len() - 1 {
        return Err(ModelError::Validation(format!(
            "{} widths need {} modes, got {}",
            widths.len(),
            widths.len().saturating_sub(1),
            modes.len()
        )));
    }
    if widths.contains(&0) {
        return Err(ModelError::Validation(
            "layer widths must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = widths
        .windows(2)
        .zip(modes)
        .enumerate()
        .map(|(index, (dims, &mode))| {
            let (in_features, out_features) = (dims[0], dims[1]);
            let weights = (0..in_features * out_features)
                .map(|_| random_value(&mut rng, mode))
                .collect();
            let thresholds = modes.get(index + 1).map(|next| {
                let count = ThresholdSet::count_for_bits(next.bits());
                let window = threshold_window(in_features, mode, count);
                (0..out_features)
                    .map(|_| random_thresholds(&mut rng, window, count))
                    .collect()
            });
            LayerConfig {
                in_features,
                out_features,
                mode,
                weights,
                thresholds,
            }
        })
        .collect();
    let model = ModelDescriptor {
        name: format!("random-{seed}"),
        input_width: widths[0],
        layers,
    };
    model.validate()?;
    Ok(model)
}

/// Uniform random input vector for the model's first layer.
pub fn generate_random_input(model: &ModelDescriptor, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = model.layers[0].mode;
    (0..model.input_width)
        .map(|_| random_value(&mut rng, mode))
        .collect()
}
