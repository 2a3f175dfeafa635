//! Reference model of mixed-precision quantized MLP inference.
//!
//! Plain integer dot products and threshold counting, with none of the
//! packed-channel machinery; this is what the accelerator models are checked
//! against. Model descriptors and their text format live here too.

mod format;
mod generate;

pub use format::{
    load_model, load_vector, parse_model, parse_vector, save_model, save_vector, write_model,
};
pub use generate::{generate_random_input, generate_random_model, tfc_shape, TFC_WIDTHS};

use std::path::PathBuf;

use thiserror::Error;

use crate::bitmath::PrecisionMode;
use crate::mac::ThresholdSet;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot open {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("expected {expected} input values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("input {index}: value {value} out of range for mode {mode}")]
    Range {
        index: usize,
        value: i32,
        mode: PrecisionMode,
    },
}

/// One dense layer: weights, precision and the thresholds that re-quantize
/// its accumulators for the next layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerConfig {
    pub in_features: usize,
    pub out_features: usize,
    pub mode: PrecisionMode,
    /// Row-major `out_features × in_features`.
    pub weights: Vec<i32>,
    /// One set per output neuron; `None` on the final layer, which returns
    /// raw accumulators.
    pub thresholds: Option<Vec<ThresholdSet>>,
}

impl LayerConfig {
    pub fn weight_row(&self, neuron: usize) -> &[i32] {
        &self.weights[neuron * self.in_features..(neuron + 1) * self.in_features]
    }

    /// Thresholds per neuron, if any.
    pub fn threshold_count(&self) -> usize {
        self.thresholds
            .as_ref()
            .and_then(|sets| sets.first())
            .map_or(0, ThresholdSet::len)
    }

    /// Check shapes and weight ranges, and that the thresholds produce
    /// outputs of `next`'s precision (or are absent when there is no next
    /// layer).
    pub fn validate(&self, next: Option<PrecisionMode>) -> Result<(), ModelError> {
        let invalid = |msg: String| Err(ModelError::Validation(msg));
        if self.in_features == 0 || self.out_features == 0 {
            return invalid("layer dimensions must be positive".into());
        }
        if self.weights.len() != self.in_features * self.out_features {
            return invalid(format!(
                "expected {} weights, got {}",
                self.in_features * self.out_features,
                self.weights.len()
            ));
        }
        if let Some(pos) = self.weights.iter().position(|&w| !self.mode.admits(w)) {
            return invalid(format!(
                "weight [{}][{}] = {} out of range for mode {}",
                pos / self.in_features,
                pos % self.in_features,
                self.weights[pos],
                self.mode
            ));
        }
        match (&self.thresholds, next) {
            (None, None) => Ok(()),
            (Some(_), None) => invalid("final layer must not carry thresholds".into()),
            (None, Some(_)) => invalid("hidden layer is missing thresholds".into()),
            (Some(sets), Some(next)) => {
                if sets.len() != self.out_features {
                    return invalid(format!(
                        "expected {} threshold rows, got {}",
                        self.out_features,
                        sets.len()
                    ));
                }
                let want = ThresholdSet::count_for_bits(next.bits());
                if let Some(n) = sets.iter().position(|s| s.len() != want) {
                    return invalid(format!(
                        "neuron {n}: {} thresholds, next layer ({next}) needs {want}",
                        sets[n].len()
                    ));
                }
                Ok(())
            }
        }
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDescriptor {
    pub name: String,
    pub input_width: usize,
    pub layers: Vec<LayerConfig>,
}

impl ModelDescriptor {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.name.is_empty() || self.name.contains(char::is_whitespace) {
            return Err(ModelError::Validation(format!(
                "model name `{}` must be a single non-empty token",
                self.name
            )));
        }
        let first = self
            .layers
            .first()
            .ok_or_else(|| ModelError::Validation("model has no layers".into()))?;
        if first.in_features != self.input_width {
            return Err(ModelError::Validation(format!(
                "input width {} does not match first layer in={}",
                self.input_width, first.in_features
            )));
        }
        for (index, layer) in self.layers.iter().enumerate() {
            let next = self.layers.get(index + 1);
            if let Some(next) = next {
                if next.in_features != layer.out_features {
                    return Err(ModelError::Validation(format!(
                        "layer {index} out={} does not feed layer {} in={}",
                        layer.out_features,
                        index + 1,
                        next.in_features
                    )));
                }
            }
            layer.validate(next.map(|l| l.mode)).map_err(|e| match e {
                ModelError::Validation(msg) => {
                    ModelError::Validation(format!("layer {index}: {msg}"))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn modes(&self) -> Vec<PrecisionMode> {
        self.layers.iter().map(|l| l.mode).collect()
    }
}

/// Map an activation level `0..=2^bits-1` onto a value of `mode`: unsigned
/// levels are used as-is, signed levels are offset by `-2^(bits-1)`, bipolar
/// levels become ±1.
pub fn level_to_value(level: i64, mode: PrecisionMode) -> i32 {
    let level = level as i32;
    if mode.is_bipolar() {
        2 * level - 1
    } else if mode.is_signed() {
        level - (1 << (mode.bits() - 1))
    } else {
        level
    }
}

pub fn check_input(input: &[i32], width: usize, mode: PrecisionMode) -> Result<(), ModelError> {
    if input.len() != width {
        return Err(ModelError::Shape {
            expected: width,
            got: input.len(),
        });
    }
    match input.iter().position(|&v| !mode.admits(v)) {
        Some(index) => Err(ModelError::Range {
            index,
            value: input[index],
            mode,
        }),
        None => Ok(()),
    }
}

/// Dot product of every neuron's weights with `input`.
pub fn reference_accumulators(layer: &LayerConfig, input: &[i32]) -> Result<Vec<i64>, ModelError> {
    check_input(input, layer.in_features, layer.mode)?;
    Ok((0..layer.out_features)
        .map(|n| {
            let mut acc = 0i64;
            for (w, x) in layer.weight_row(n).iter().zip(input) {
                acc += *w as i64 * *x as i64;
            }
            acc
        })
        .collect())
}

/// Layer output: activation levels when the layer has thresholds, raw
/// accumulators otherwise.
pub fn reference_layer(layer: &LayerConfig, input: &[i32]) -> Result<Vec<i64>, ModelError> {
    let accs = reference_accumulators(layer, input)?;
    Ok(match &layer.thresholds {
        None => accs,
        Some(sets) => accs
            .iter()
            .zip(sets)
            .map(|(&acc, set)| set.as_slice().iter().filter(|&&t| (t as i64) < acc).count() as i64)
            .collect(),
    })
}

/// Index of the first maximum.
pub fn argmax(values: &[i64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceOutput {
    /// Output of every layer; the last entry holds the final accumulators.
    pub layer_outputs: Vec<Vec<i64>>,
    pub class: usize,
}

impl ReferenceOutput {
    pub fn logits(&self) -> &[i64] {
        self.layer_outputs.last().map_or(&[], Vec::as_slice)
    }
}

pub fn reference_network(
    model: &ModelDescriptor,
    input: &[i32],
) -> Result<ReferenceOutput, ModelError> {
    model.validate()?;
    let mut activations = input.to_vec();
    let mut layer_outputs = Vec::with_capacity(model.layers.len());
    for (index, layer) in model.layers.iter().enumerate() {
        let out = reference_layer(layer, &activations)?;
        if let Some(next) = model.layers.get(index + 1) {
            activations = out
                .iter()
                .map(|&lvl| level_to_value(lvl, next.mode))
                .collect();
        }
        layer_outputs.push(out);
    }
    let class = argmax(layer_outputs.last().expect("validated non-empty"));
    Ok(ReferenceOutput {
        layer_outputs,
        class,
    })
}
