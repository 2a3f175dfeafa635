//! Multiply-accumulate extension: channel-summing input converter,
//! accumulator and multi-threshold activation.

use std::collections::VecDeque;

use thiserror::Error;

use crate::bitmath::{PackedOperand, PrecisionMode, ProductWord, PRODUCT_BITS};
use crate::fabric::{Completion, Cycle, FabricState, ReconfigAck, MULTIPLIER_LATENCY};

/// Converter tree depth (16 → 8 → 4 → 2 → 1).
pub const CONVERTER_LAYERS: usize = 4;
/// Accepted-input to accumulator-visible latency.
pub const MAC_LATENCY: u64 = MULTIPLIER_LATENCY + CONVERTER_LAYERS as u64 + 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MacError {
    #[error("accumulator overflow: {acc} + {addend} exceeds 32-bit signed range")]
    Overflow { acc: i32, addend: i32 },
    #[error("thresholds must be strictly ascending (index {index})")]
    NotAscending { index: usize },
    #[error("threshold count {0} is not one of 1, 3, 15, 255")]
    ThresholdCount(usize),
}

/// Per-lane controls of the converter's first layer for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConverterTree {
    /// Left shift applied to lane `i`, relative to its channel's base bit.
    pub shifts: [u32; PRODUCT_BITS],
    /// Value inverters sitting on sign-bit lanes.
    pub negate: [bool; PRODUCT_BITS],
}

impl ConverterTree {
    pub fn for_mode(mode: PrecisionMode) -> Self {
        let width = mode.product_width();
        let mut shifts = [0; PRODUCT_BITS];
        let mut negate = [false; PRODUCT_BITS];
        for lane in 0..PRODUCT_BITS {
            shifts[lane] = (lane % width) as u32;
            negate[lane] = mode.is_signed() && lane % width == width - 1;
        }
        Self { shifts, negate }
    }

    /// Lanes whose inverter is enabled.
    pub fn negated_lanes(&self) -> Vec<usize> {
        (0..PRODUCT_BITS).filter(|&l| self.negate[l]).collect()
    }

    /// First layer: weight and sign every lane.
    fn weigh(&self, word: ProductWord) -> [i32; PRODUCT_BITS] {
        let mut lanes = [0; PRODUCT_BITS];
        for (lane, slot) in lanes.iter_mut().enumerate() {
            let bit = (word.0 >> lane & 1) as i32;
            let weighted = bit << self.shifts[lane];
            *slot = if self.negate[lane] {
                -weighted
            } else {
                weighted
            };
        }
        lanes
    }

    /// Pairwise adder layer.
    fn reduce(values: &[i32]) -> Vec<i32> {
        values.chunks(2).map(|pair| pair.iter().sum()).collect()
    }
}

/// Sum of all channel values of a product word.
pub fn convert_channels(word: ProductWord, mode: PrecisionMode) -> i32 {
    let tree = ConverterTree::for_mode(mode);
    let mut values = tree.weigh(word).to_vec();
    for _ in 0..CONVERTER_LAYERS {
        values = ConverterTree::reduce(&values);
    }
    values[0]
}

/// Running 32-bit signed sum; overflow is an error rather than a wrap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Accumulator {
    sum: i32,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self) -> i32 {
        self.sum
    }

    pub fn reset(&mut self) {
        self.sum = 0;
    }

    pub fn add(&mut self, addend: i32) -> Result<i32, MacError> {
        self.sum = self.sum.checked_add(addend).ok_or(MacError::Overflow {
            acc: self.sum,
            addend,
        })?;
        Ok(self.sum)
    }

    pub fn accumulate(
        &mut self,
        product: ProductWord,
        mode: PrecisionMode,
    ) -> Result<i32, MacError> {
        self.add(convert_channels(product, mode))
    }
}

/// Ascending multi-threshold set with 1, 3, 15 or 255 entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdSet(Vec<i32>);

impl ThresholdSet {
    pub fn new(thresholds: Vec<i32>) -> Result<Self, MacError> {
        if !matches!(thresholds.len(), 1 | 3 | 15 | 255) {
            return Err(MacError::ThresholdCount(thresholds.len()));
        }
        if let Some(index) = thresholds.windows(2).position(|w| w[0] >= w[1]) {
            return Err(MacError::NotAscending { index: index + 1 });
        }
        Ok(Self(thresholds))
    }

    /// Number of thresholds needed to produce a `bits`-wide output.
    pub fn count_for_bits(bits: usize) -> usize {
        (1 << bits) - 1
    }

    pub fn as_slice(&self) -> &[i32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Width of the activation output.
    pub fn output_bits(&self) -> usize {
        (self.0.len() + 1).trailing_zeros() as usize
    }
}

/// Number of thresholds strictly below `acc`.
pub fn activate(acc: i32, thresholds: &ThresholdSet) -> u32 {
    thresholds.0.partition_point(|&t| t < acc) as u32
}

/// Single-comparator activation: one threshold per cycle. Returns the level
/// and the cycles spent.
pub fn activate_sequential(acc: i32, thresholds: &ThresholdSet) -> (u32, u64) {
    let mut level = 0;
    let mut cycles = 0;
    for &t in thresholds.as_slice() {
        cycles += 1;
        if t < acc {
            level += 1;
        }
    }
    (level, cycles)
}

/// Accumulator update observed at the end of a MAC step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacUpdate {
    pub sum: i32,
    pub accepted_at: Cycle,
    pub visible_at: Cycle,
}

#[derive(Debug, Clone)]
struct ConverterSlot {
    values: Vec<i32>,
    accepted_at: Cycle,
}

/// Cycle-accurate MAC: a multiplier fabric followed by the four converter
/// layers and the accumulate stage.
#[derive(Debug, Clone)]
pub struct MacState {
    fabric: FabricState,
    layers: [Option<ConverterSlot>; CONVERTER_LAYERS],
    accumulator: Accumulator,
    completions: VecDeque<Completion>,
}

impl MacState {
    pub fn with_mode(mode: PrecisionMode) -> Self {
        Self {
            fabric: FabricState::with_mode(mode),
            layers: Default::default(),
            accumulator: Accumulator::new(),
            completions: VecDeque::new(),
        }
    }

    pub fn mode(&self) -> PrecisionMode {
        self.fabric.mode()
    }

    pub fn cycle(&self) -> Cycle {
        self.fabric.cycle()
    }

    pub fn sum(&self) -> i32 {
        self.accumulator.value()
    }

    /// Start a new dot product.
    pub fn reset_sum(&mut self) {
        self.accumulator.reset();
    }

    pub fn configure(&mut self, mode: PrecisionMode) -> ReconfigAck {
        self.fabric.configure(mode)
    }

    pub fn offer_input(&mut self, a: PackedOperand, b: PackedOperand) -> bool {
        self.fabric.offer_input(a, b)
    }

    pub fn is_idle(&self) -> bool {
        self.fabric.in_flight() == 0 && self.layers.iter().all(Option::is_none)
    }

    /// Advance one cycle. Returns the new running sum if a product reached
    /// the accumulator in this cycle.
    pub fn step(&mut self) -> Result<Option<MacUpdate>, MacError> {
        let mut update = None;
        if let Some(slot) = self.layers[CONVERTER_LAYERS - 1].take() {
            let sum = self.accumulator.add(slot.values[0])?;
            update = Some(MacUpdate {
                sum,
                accepted_at: slot.accepted_at,
                visible_at: self.fabric.cycle() + 1,
            });
        }
        for layer in (1..CONVERTER_LAYERS).rev() {
            self.layers[layer] = self.layers[layer - 1].take().map(|slot| ConverterSlot {
                values: ConverterTree::reduce(&slot.values),
                accepted_at: slot.accepted_at,
            });
        }
        // The first layer weighs and negates lanes, then adds pairs.
        self.layers[0] = self.completions.pop_front().map(|c| ConverterSlot {
            values: ConverterTree::reduce(&ConverterTree::for_mode(c.mode).weigh(c.word)),
            accepted_at: c.accepted_at,
        });
        self.completions.extend(self.fabric.step());
        Ok(update)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitmath::{self, decode_product};

    fn mode(label: &str) -> PrecisionMode {
        label.parse().unwrap()
    }

    #[test]
    fn convert_examples() {
        for m in PrecisionMode::ALL {
            assert_eq!(convert_channels(ProductWord(0), m), 0);
        }
        assert_eq!(convert_channels(ProductWord(0x0E0F), mode("4u")), 29);
        assert_eq!(
            convert_channels(ProductWord(0xFFFF), PrecisionMode::BIPOLAR),
            -8
        );
    }

    #[test]
    fn neg_lanes() {
        assert_eq!(
            ConverterTree::for_mode(mode("4s")).negated_lanes(),
            vec![7, 15]
        );
        assert_eq!(
            ConverterTree::for_mode(mode("8s")).negated_lanes(),
            vec![15]
        );
        assert_eq!(
            ConverterTree::for_mode(PrecisionMode::BIPOLAR).negated_lanes(),
            vec![1, 3, 5, 7, 9, 11, 13, 15]
        );
        assert!(ConverterTree::for_mode(mode("2u"))
            .negated_lanes()
            .is_empty());
    }

    #[test]
    fn convert_matches_decode_sum_sampled() {
        for m in PrecisionMode::ALL {
            for w in (0..=u16::MAX).step_by(13) {
                let word = ProductWord(w);
                let expected: i32 = decode_product(word, m).iter().sum();
                assert_eq!(convert_channels(word, m), expected, "{m} {w:#06x}");
            }
        }
    }

    #[test]
    fn accumulate_examples() {
        let mut acc = Accumulator::new();
        for _ in 0..5 {
            acc.accumulate(ProductWord(0), mode("8s")).unwrap();
        }
        assert_eq!(acc.value(), 0);
        acc.accumulate(ProductWord(0x0E0F), mode("4u")).unwrap();
        assert_eq!(acc.accumulate(ProductWord(0x0E0F), mode("4u")).unwrap(), 58);
    }

    #[test]
    fn accumulator_overflow_is_an_error() {
        let mut acc = Accumulator::new();
        acc.add(i32::MAX - 10).unwrap();
        assert_eq!(
            acc.add(11),
            Err(MacError::Overflow {
                acc: i32::MAX - 10,
                addend: 11
            })
        );
        assert_eq!(acc.value(), i32::MAX - 10);
    }

    #[test]
    fn threshold_validation() {
        assert!(ThresholdSet::new(vec![0]).is_ok());
        assert_eq!(
            ThresholdSet::new(vec![0, 1]),
            Err(MacError::ThresholdCount(2))
        );
        assert_eq!(
            ThresholdSet::new(vec![0, 0, 1]),
            Err(MacError::NotAscending { index: 1 })
        );
        assert_eq!(
            ThresholdSet::new((0..255).collect()).unwrap().output_bits(),
            8
        );
        assert_eq!(ThresholdSet::count_for_bits(2), 3);
    }

    #[test]
    fn activate_examples() {
        let t = ThresholdSet::new(vec![0]).unwrap();
        assert_eq!(activate(i32::MIN, &t), 0);
        assert_eq!(activate(5, &t), 1);
        assert_eq!(activate(0, &t), 0);
        let t = ThresholdSet::new(vec![-2, 0, 3]).unwrap();
        assert_eq!(activate(1, &t), 2);
        assert_eq!(activate_sequential(1, &t), (2, 3));
        assert_eq!(activate(i32::MAX, &t), 3);
    }

    #[test]
    fn mac_latency_is_27() {
        let m = mode("4u");
        let mut mac = MacState::with_mode(m);
        assert!(mac.offer_input(PackedOperand(0x73), PackedOperand(0x25)));
        let mut seen = None;
        for _ in 0..40 {
            if let Some(update) = mac.step().unwrap() {
                seen = Some(update);
            }
        }
        let update = seen.unwrap();
        assert_eq!(update.visible_at - update.accepted_at, MAC_LATENCY);
        assert_eq!(MAC_LATENCY, 27);
        assert_eq!(update.sum, 29);
        assert!(mac.is_idle());
    }

    #[test]
    fn mac_dot_product_matches_flat_sum() {
        let m = mode("2s");
        let pairs = [(0x9Cu8, 0x9Cu8), (0x1B, 0xE4), (0xFF, 0x01)];
        let mut mac = MacState::with_mode(m);
        let mut last = 0;
        for &(a, b) in &pairs {
            assert!(mac.offer_input(PackedOperand(a), PackedOperand(b)));
            if let Some(u) = mac.step().unwrap() {
                last = u.sum;
            }
        }
        while !mac.is_idle() {
            if let Some(u) = mac.step().unwrap() {
                last = u.sum;
            }
        }
        let expected: i32 = pairs
            .iter()
            .map(|&(a, b)| {
                let x = bitmath::unpack(PackedOperand(a), m);
                let y = bitmath::unpack(PackedOperand(b), m);
                x.iter().zip(&y).map(|(p, q)| p * q).sum::<i32>()
            })
            .sum();
        assert_eq!(last, expected);
        assert_eq!(mac.sum(), expected);
    }
}
