//! Combinational model of the multi-precision multiplier.
//!
//! An 8-bit operand carries 1, 2, 4 or 8 channels. Every product is computed
//! the same way regardless of precision: build the 8×8 grid of one-bit
//! sub-partial products `a_i·b_j`, filter it with the precision mask, sum each
//! anti-diagonal `i + j = k` into a signed partial product `P_k`, then add the
//! `P_k` back together with a `k`-bit left shift. Carries are confined to the
//! channel they originate in, so the 16-bit result holds `channels`
//! independent `2·bits`-wide products, channel 0 at the least-significant end.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use thiserror::Error;

/// Width of an operand word in bits.
pub const OPERAND_BITS: usize = 8;
/// Width of a product word in bits.
pub const PRODUCT_BITS: usize = 16;
/// Number of anti-diagonals of the 8×8 grid.
pub const NUM_PARTIALS: usize = 2 * OPERAND_BITS - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitmathError {
    #[error("unsupported precision: {0} bits (expected 1, 2, 4 or 8)")]
    UnsupportedPrecision(u32),
    #[error("unknown precision mode label `{0}`")]
    UnknownMode(String),
    #[error("expected {expected} channel values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("channel {channel}: value {value} out of range for mode {mode}")]
    Range {
        channel: usize,
        value: i32,
        mode: PrecisionMode,
    },
}

/// Operand width, signedness and derived channel layout.
///
/// A 1-bit signed mode is the bipolar (XNOR) mode: a stored `0` means −1 and
/// a stored `1` means +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrecisionMode {
    bits: u8,
    signed: bool,
}

impl PrecisionMode {
    pub const U8: Self = Self::from_parts(8, false);
    pub const S8: Self = Self::from_parts(8, true);
    pub const U4: Self = Self::from_parts(4, false);
    pub const S4: Self = Self::from_parts(4, true);
    pub const U2: Self = Self::from_parts(2, false);
    pub const S2: Self = Self::from_parts(2, true);
    pub const U1: Self = Self::from_parts(1, false);
    pub const BIPOLAR: Self = Self::from_parts(1, true);

    /// Every supported mode, widest first.
    pub const ALL: [Self; 8] = [
        Self::S8,
        Self::U8,
        Self::S4,
        Self::U4,
        Self::S2,
        Self::U2,
        Self::U1,
        Self::BIPOLAR,
    ];

    const fn from_parts(bits: u8, signed: bool) -> Self {
        Self { bits, signed }
    }

    pub fn new(bits: u32, signed: bool) -> Result<Self, BitmathError> {
        match bits {
            1 | 2 | 4 | 8 => Ok(Self::from_parts(bits as u8, signed)),
            other => Err(BitmathError::UnsupportedPrecision(other)),
        }
    }

    pub fn bits(self) -> usize {
        self.bits as usize
    }

    pub fn is_signed(self) -> bool {
        self.signed
    }

    /// True for the 1-bit signed mode, whose channels hold ±1.
    pub fn is_bipolar(self) -> bool {
        self.bits == 1 && self.signed
    }

    pub fn channels(self) -> usize {
        OPERAND_BITS / self.bits()
    }

    /// Width of one channel of the product word.
    pub fn product_width(self) -> usize {
        2 * self.bits()
    }

    /// All channel-valid bits set.
    pub fn all_channels(self) -> u8 {
        ((1u16 << self.channels()) - 1) as u8
    }

    /// Inclusive range of a channel value. Bipolar channels only admit the
    /// endpoints.
    pub fn value_range(self) -> RangeInclusive<i32> {
        let bits = self.bits() as u32;
        if self.is_bipolar() {
            -1..=1
        } else if self.signed {
            -(1 << (bits - 1))..=(1 << (bits - 1)) - 1
        } else {
            0..=(1 << bits) - 1
        }
    }

    pub fn admits(self, value: i32) -> bool {
        if self.is_bipolar() {
            value == -1 || value == 1
        } else {
            self.value_range().contains(&value)
        }
    }

    /// Short label: `8s`, `4u`, `1u`, `1bnn`, ...
    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_bipolar() {
            write!(f, "1bnn")
        } else {
            write!(f, "{}{}", self.bits, if self.signed { 's' } else { 'u' })
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = BitmathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim().to_ascii_lowercase();
        match label.as_str() {
            "1bnn" | "1-bnn" | "1b" | "bnn" | "1s" => return Ok(Self::BIPOLAR),
            _ => {}
        }
        let unknown = || BitmathError::UnknownMode(s.to_string());
        let (digits, suffix) = label.split_at(label.len().saturating_sub(1));
        let signed = match suffix {
            "s" => true,
            "u" => false,
            _ => return Err(unknown()),
        };
        let bits: u32 = digits.parse().map_err(|_| unknown())?;
        Self::new(bits, signed)
    }
}

/// Packed 8-bit multi-channel operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PackedOperand(pub u8);

/// Packed 16-bit multi-channel product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ProductWord(pub u16);

impl fmt::Display for PackedOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:02X}", self.0)
    }
}

impl fmt::Display for ProductWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:04X}", self.0)
    }
}

fn decode_field(code: u32, width: usize, signed: bool) -> i32 {
    if signed {
        let shift = 32 - width as u32;
        ((code << shift) as i32) >> shift
    } else {
        code as i32
    }
}

pub fn pack(values: &[i32], mode: PrecisionMode) -> Result<PackedOperand, BitmathError> {
    if values.len() != mode.channels() {
        return Err(BitmathError::Shape {
            expected: mode.channels(),
            got: values.len(),
        });
    }
    let bits = mode.bits();
    let field_mask = (1u32 << bits) - 1;
    let mut word = 0u32;
    for (channel, &value) in values.iter().enumerate() {
        if !mode.admits(value) {
            return Err(BitmathError::Range {
                channel,
                value,
                mode,
            });
        }
        let code = if mode.is_bipolar() {
            ((value + 1) / 2) as u32
        } else {
            value as u32 & field_mask
        };
        word |= code << (channel * bits);
    }
    Ok(PackedOperand(word as u8))
}

pub fn unpack(word: PackedOperand, mode: PrecisionMode) -> Vec<i32> {
    let bits = mode.bits();
    let field_mask = (1u32 << bits) - 1;
    (0..mode.channels())
        .map(|channel| {
            let code = (word.0 as u32 >> (channel * bits)) & field_mask;
            if mode.is_bipolar() {
                2 * code as i32 - 1
            } else {
                decode_field(code, bits, mode.is_signed())
            }
        })
        .collect()
}

/// Channel values of a product word. Bipolar products are two's complement
/// like signed ones.
pub fn decode_product(word: ProductWord, mode: PrecisionMode) -> Vec<i32> {
    let width = mode.product_width();
    let field_mask = (1u32 << width) - 1;
    (0..mode.channels())
        .map(|channel| {
            let code = (word.0 as u32 >> (channel * width)) & field_mask;
            decode_field(code, width, mode.is_signed())
        })
        .collect()
}

/// Inverse of [`decode_product`]; values are truncated to the channel width.
pub fn encode_product(values: &[i32], mode: PrecisionMode) -> ProductWord {
    let width = mode.product_width();
    let field_mask = (1u32 << width) - 1;
    let word = values
        .iter()
        .take(mode.channels())
        .enumerate()
        .fold(0u32, |acc, (channel, &v)| {
            acc | ((v as u32 & field_mask) << (channel * width))
        });
    ProductWord(word as u16)
}

/// Location class of a grid cell. Region I is the main diagonal, II the rest
/// of the 2×2 diagonal blocks, III the rest of the 4×4 blocks, IV everything
/// else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    I,
    II,
    III,
    IV,
}

impl Region {
    pub fn of(i: usize, j: usize) -> Self {
        if i == j {
            Region::I
        } else if i / 2 == j / 2 {
            Region::II
        } else if i / 4 == j / 4 {
            Region::III
        } else {
            Region::IV
        }
    }

    /// Narrowest precision that uses cells of this region.
    pub fn min_bits(self) -> usize {
        match self {
            Region::I => 1,
            Region::II => 2,
            Region::III => 4,
            Region::IV => 8,
        }
    }

    pub fn is_active(self, mode: PrecisionMode) -> bool {
        mode.bits() >= self.min_bits()
    }
}

/// Sub-partial-product mask: cell `(i, j)` is bit `8·i + j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaskPattern(u64);

impl MaskPattern {
    pub fn is_active(self, i: usize, j: usize) -> bool {
        self.0 >> (i * OPERAND_BITS + j) & 1 == 1
    }

    pub fn active_count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn is_subset_of(self, other: MaskPattern) -> bool {
        self.0 & !other.0 == 0
    }
}

pub fn mask_pattern(mode: PrecisionMode) -> MaskPattern {
    let mut raw = 0u64;
    for i in 0..OPERAND_BITS {
        for j in 0..OPERAND_BITS {
            if Region::of(i, j).is_active(mode) {
                raw |= 1 << (i * OPERAND_BITS + j);
            }
        }
    }
    MaskPattern(raw)
}

/// How a grid cell enters its partial product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignAction {
    Add,
    Subtract,
    /// Bipolar XNOR cell: counted as-is, mapped to ±1 during assembly.
    Bipolar,
    Inactive,
}

pub type SignActionGrid = [[SignAction; OPERAND_BITS]; OPERAND_BITS];

pub fn sign_actions(mode: PrecisionMode) -> SignActionGrid {
    let mask = mask_pattern(mode);
    let bits = mode.bits();
    let mut grid = [[SignAction::Inactive; OPERAND_BITS]; OPERAND_BITS];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, action) in row.iter_mut().enumerate() {
            if !mask.is_active(i, j) {
                continue;
            }
            *action = if mode.is_bipolar() {
                SignAction::Bipolar
            } else if mode.is_signed() {
                // Sign bit of the block both cells live in.
                let sign = (i / bits) * bits + bits - 1;
                if (i == sign) != (j == sign) {
                    SignAction::Subtract
                } else {
                    SignAction::Add
                }
            } else {
                SignAction::Add
            };
        }
    }
    grid
}

/// The masked 8×8 one-bit grid together with its sign actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubPartialGrid {
    cells: u64,
    actions: SignActionGrid,
    mode: PrecisionMode,
}

impl SubPartialGrid {
    pub fn cell(&self, i: usize, j: usize) -> bool {
        self.cells >> (i * OPERAND_BITS + j) & 1 == 1
    }

    pub fn action(&self, i: usize, j: usize) -> SignAction {
        self.actions[i][j]
    }

    pub fn mode(&self) -> PrecisionMode {
        self.mode
    }

    pub fn ones(&self) -> u32 {
        self.cells.count_ones()
    }
}

pub fn sub_partial_grid(a: PackedOperand, b: PackedOperand, mode: PrecisionMode) -> SubPartialGrid {
    sub_partial_grid_gated(a, b, mode, mode.all_channels())
}

/// Like [`sub_partial_grid`], but cells of channels whose bit is clear in
/// `valid` are forced inactive, so those channels produce zero.
pub fn sub_partial_grid_gated(
    a: PackedOperand,
    b: PackedOperand,
    mode: PrecisionMode,
    valid: u8,
) -> SubPartialGrid {
    let mut actions = sign_actions(mode);
    let bits = mode.bits();
    let mut cells = 0u64;
    for (i, row) in actions.iter_mut().enumerate() {
        let a_bit = a.0 >> i & 1;
        for (j, action) in row.iter_mut().enumerate() {
            if valid >> (i / bits) & 1 == 0 {
                *action = SignAction::Inactive;
            }
            let b_bit = b.0 >> j & 1;
            let value = match *action {
                SignAction::Inactive => 0,
                SignAction::Bipolar => !(a_bit ^ b_bit) & 1,
                SignAction::Add | SignAction::Subtract => a_bit & b_bit,
            };
            cells |= (value as u64) << (i * OPERAND_BITS + j);
        }
    }
    SubPartialGrid {
        cells,
        actions,
        mode,
    }
}

/// Signed anti-diagonal sums `P_0..P_14`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PartialProducts {
    pub sums: [i32; NUM_PARTIALS],
    /// Channels whose sums still carry the raw XNOR count and need the
    /// bipolar mapping `x ↦ 2x − 1` during assembly.
    pub bipolar_channels: u8,
}

pub fn partial_products(grid: &SubPartialGrid) -> PartialProducts {
    let mut out = PartialProducts::default();
    let bits = grid.mode.bits();
    for i in 0..OPERAND_BITS {
        for j in 0..OPERAND_BITS {
            let cell = grid.cell(i, j) as i32;
            let k = i + j;
            match grid.actions[i][j] {
                SignAction::Add => out.sums[k] += cell,
                SignAction::Subtract => out.sums[k] -= cell,
                SignAction::Bipolar => {
                    out.sums[k] += cell;
                    out.bipolar_channels |= 1 << (i / bits);
                }
                SignAction::Inactive => {}
            }
        }
    }
    out
}

/// Split the `k`-bit shift of `P_k` into (shift inside its channel, channel
/// offset). The two always add up to `k`.
pub fn shift_split(k: usize, mode: PrecisionMode) -> (usize, usize) {
    let width = mode.product_width();
    (k % width, k / width * width)
}

pub fn assemble_product(p: &PartialProducts, mode: PrecisionMode) -> ProductWord {
    let width = mode.product_width();
    let field_mask = (1u32 << width) - 1;
    let mut word = 0u32;
    for channel in 0..mode.channels() {
        let base = channel * width;
        let mut acc: i32 = (base..(base + width).min(NUM_PARTIALS))
            .map(|k| p.sums[k] << shift_split(k, mode).0)
            .sum();
        if p.bipolar_channels >> channel & 1 == 1 {
            acc = 2 * acc - 1;
        }
        // Bits above the channel width are dropped, never carried onward.
        word |= (acc as u32 & field_mask) << base;
    }
    ProductWord(word as u16)
}

pub fn multiply(a: PackedOperand, b: PackedOperand, mode: PrecisionMode) -> ProductWord {
    multiply_gated(a, b, mode, mode.all_channels())
}

/// Multiply with per-channel valid bits; invalid channels yield zero.
pub fn multiply_gated(
    a: PackedOperand,
    b: PackedOperand,
    mode: PrecisionMode,
    valid: u8,
) -> ProductWord {
    let grid = sub_partial_grid_gated(a, b, mode, valid);
    assemble_product(&partial_products(&grid), mode)
}
