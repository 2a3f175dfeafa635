//! Functional and cycle-accurate models of a runtime-reconfigurable bitwise
//! systolic multiplier supporting 8/4/2/1-channel 1/2/4/8-bit signed and
//! unsigned (and bipolar 1-bit) multiplication, its multiply-accumulate
//! extension, and two 64-multiplier MLP accelerators built from it.
//!
//! - [`bitmath`]: golden combinational model (masks, partial products, assembly)
//! - [`fabric`]: register-level simulator of the multiplier
//! - [`mac`]: channel-summing converter, accumulator, multi-threshold activation
//! - [`accel`]: single-layer and systolic accelerator schedules
//! - [`refnet`]: plain-integer reference network, model files, random models
//! - [`verify`]: exhaustive oracle sweeps

pub mod accel;
pub mod bitmath;
pub mod fabric;
pub mod mac;
pub mod refnet;
pub mod verify;

pub use bitmath::{PackedOperand, PrecisionMode, ProductWord};
