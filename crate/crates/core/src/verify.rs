//! Oracle sweeps over operand pairs.
//!
//! The functional sweep checks [`bitmath::multiply`] against plain integer
//! multiplication of the unpacked channels. The fabric sweep streams pairs
//! through independent [`FabricState`] instances (one per shard, in
//! parallel) and checks every completion against [`bitmath::multiply`], its
//! latency, and the back-to-back throughput of each shard.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bitmath::{self, encode_product, unpack, PackedOperand, PrecisionMode, ProductWord};
use crate::fabric::{self, MULTIPLIER_LATENCY};

/// Product computed with native integer arithmetic on the unpacked channels.
pub fn native_product(a: PackedOperand, b: PackedOperand, mode: PrecisionMode) -> ProductWord {
    let products: Vec<i32> = unpack(a, mode)
        .iter()
        .zip(unpack(b, mode))
        .map(|(x, y)| x * y)
        .collect();
    encode_product(&products, mode)
}

/// Every byte pair, `a` major.
pub fn exhaustive_pairs() -> Vec<(u8, u8)> {
    (0..=255u8)
        .flat_map(|a| (0..=255u8).map(move |b| (a, b)))
        .collect()
}

pub fn random_pairs(count: usize, seed: u64) -> Vec<(u8, u8)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (rng.gen(), rng.gen())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mismatch {
    pub a: PackedOperand,
    pub b: PackedOperand,
    pub expected: ProductWord,
    pub got: ProductWord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepResult {
    pub mode: PrecisionMode,
    pub checked: u64,
    pub passed: u64,
    pub first_mismatch: Option<Mismatch>,
}

impl SweepResult {
    pub fn ok(&self) -> bool {
        self.checked == self.passed && self.first_mismatch.is_none()
    }
}

pub fn functional_sweep(mode: PrecisionMode, pairs: &[(u8, u8)]) -> SweepResult {
    let mut result = SweepResult {
        mode,
        checked: 0,
        passed: 0,
        first_mismatch: None,
    };
    for &(a, b) in pairs {
        let (a, b) = (PackedOperand(a), PackedOperand(b));
        let expected = native_product(a, b, mode);
        let got = bitmath::multiply(a, b, mode);
        result.checked += 1;
        if got == expected {
            result.passed += 1;
        } else if result.first_mismatch.is_none() {
            result.first_mismatch = Some(Mismatch {
                a,
                b,
                expected,
                got,
            });
        }
    }
    result
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FabricSweep {
    pub products: SweepResult,
    pub min_latency: u64,
    pub max_latency: u64,
    /// Every shard finished `n` back-to-back inputs `n + 21` cycles after
    /// its first acceptance.
    pub throughput_ok: bool,
}

impl FabricSweep {
    pub fn latency_ok(&self) -> bool {
        self.min_latency == MULTIPLIER_LATENCY && self.max_latency == MULTIPLIER_LATENCY
    }

    pub fn ok(&self) -> bool {
        self.products.ok() && self.latency_ok() && self.throughput_ok
    }
}

pub fn fabric_sweep(mode: PrecisionMode, pairs: &[(u8, u8)], shards: usize) -> FabricSweep {
    let chunk = pairs.len().div_ceil(shards.max(1)).max(1);
    let partials: Vec<FabricSweep> = pairs
        .par_chunks(chunk)
        .map(|slice| {
            let done = fabric::run_stream(mode, slice.iter().copied());
            let mut sweep = FabricSweep {
                products: SweepResult {
                    mode,
                    checked: slice.len() as u64,
                    passed: 0,
                    first_mismatch: None,
                },
                min_latency: u64::MAX,
                max_latency: 0,
                throughput_ok: done.len() == slice.len(),
            };
            for (c, &(a, b)) in done.iter().zip(slice) {
                let (a, b) = (PackedOperand(a), PackedOperand(b));
                let expected = bitmath::multiply(a, b, mode);
                let latency = c.completed_at - c.accepted_at;
                sweep.min_latency = sweep.min_latency.min(latency);
                sweep.max_latency = sweep.max_latency.max(latency);
                if c.a == a && c.b == b && c.word == expected {
                    sweep.products.passed += 1;
                } else if sweep.products.first_mismatch.is_none() {
                    sweep.products.first_mismatch = Some(Mismatch {
                        a,
                        b,
                        expected,
                        got: c.word,
                    });
                }
            }
            if let (Some(first), Some(last)) = (done.first(), done.last()) {
                sweep.throughput_ok &= last.completed_at - first.accepted_at
                    == slice.len() as u64 + MULTIPLIER_LATENCY - 1;
            }
            sweep
        })
        .collect();

    partials.into_iter().fold(
        FabricSweep {
            products: SweepResult {
                mode,
                checked: 0,
                passed: 0,
                first_mismatch: None,
            },
            min_latency: u64::MAX,
            max_latency: 0,
            throughput_ok: true,
        },
        |mut acc, part| {
            acc.products.checked += part.products.checked;
            acc.products.passed += part.products.passed;
            acc.products.first_mismatch =
                acc.products.first_mismatch.or(part.products.first_mismatch);
            acc.min_latency = acc.min_latency.min(part.min_latency);
            acc.max_latency = acc.max_latency.max(part.max_latency);
            acc.throughput_ok &= part.throughput_ok;
            acc
        },
    )
}
