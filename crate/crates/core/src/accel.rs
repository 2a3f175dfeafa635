//! Cycle accounting for the two accelerator organisations built from 64
//! multipliers, and end-to-end execution of mixed-precision MLPs on them.
//!
//! Weights and activations are resident on chip; only compute,
//! reconfiguration and activation cycles are counted.
//!
//! Per layer, with `ch` channels per packed operand, `P = ceil(in / ch)`
//! packed operand pairs per neuron, `N = ceil(P / 8)` and `T = ceil(out / 8)`:
//!
//! * **single layer**: 8 neurons of 8 multipliers. Neurons run in groups of
//!   8; a group issues 8 packed pairs per neuron per cycle for `N` cycles,
//!   waits [`MAC_LATENCY`] for its pipelines to drain, then compares against
//!   its thresholds one per cycle. Compute is `T·(N + 27)`, activation
//!   `T·thresholds`.
//! * **systolic**: an 8×8 output-stationary grid. MAC `(r, c)` accumulates
//!   neuron `8t + r` over packed positions `c, c + 8, ...`; output tiles are
//!   streamed back to back so the pipeline fills once per layer (MAC latency
//!   plus a 14-cycle wavefront across the grid), and a tile's threshold
//!   comparisons overlap the next tile's compute. Compute is `T·N + 41`; the
//!   layer ends at `41 + max(T·N + thr, N + T·thr)`.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::bitmath::{self, PackedOperand, PrecisionMode};
use crate::fabric::RECONFIG_CYCLES;
use crate::mac::{activate_sequential, Accumulator, MacError, MAC_LATENCY};
use crate::refnet::{check_input, level_to_value, LayerConfig, ModelDescriptor, ModelError};

pub const MULTIPLIERS: usize = 64;
/// Neurons (single layer) or grid rows/columns (systolic).
pub const LANES: usize = 8;
/// Extra fill of the systolic grid: the operand wavefront needs 7 + 7 hops
/// to reach the far corner.
pub const SYSTOLIC_SKEW: u64 = 2 * (LANES as u64 - 1);

#[derive(Debug, Error)]
pub enum AccelError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("cannot write report to {path}")]
    Report {
        path: String,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    SingleLayer,
    Systolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AcceleratorTopology {
    pub kind: TopologyKind,
}

impl AcceleratorTopology {
    pub const SINGLE_LAYER: Self = Self {
        kind: TopologyKind::SingleLayer,
    };
    pub const SYSTOLIC: Self = Self {
        kind: TopologyKind::Systolic,
    };

    pub fn multipliers(self) -> usize {
        MULTIPLIERS
    }

    pub fn loaders(self) -> usize {
        match self.kind {
            TopologyKind::SingleLayer => 16 * LANES,
            TopologyKind::Systolic => 16,
        }
    }

    pub fn reconfig_cycles(self) -> u64 {
        RECONFIG_CYCLES
    }

    /// Cycles from the last issue of a pipeline run to its visible result.
    pub fn pipe_fill(self) -> u64 {
        match self.kind {
            TopologyKind::SingleLayer => MAC_LATENCY,
            TopologyKind::Systolic => MAC_LATENCY + SYSTOLIC_SKEW,
        }
    }
}

impl fmt::Display for AcceleratorTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.kind {
            TopologyKind::SingleLayer => "single",
            TopologyKind::Systolic => "systolic",
        })
    }
}

impl std::str::FromStr for AcceleratorTopology {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" | "single-layer" | "single_layer" => Ok(Self::SINGLE_LAYER),
            "systolic" => Ok(Self::SYSTOLIC),
            other => Err(format!(
                "unknown topology `{other}` (expected single or systolic)"
            )),
        }
    }
}

/// Cycle components of one layer, reconfiguration excluded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LayerCycles {
    pub compute: u64,
    /// Activation cycles not hidden behind compute.
    pub activation: u64,
    /// Σ over multipliers of cycles spent on a packed operand pair.
    pub mult_busy: u64,
}

impl LayerCycles {
    pub fn total(&self) -> u64 {
        self.compute + self.activation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerReport {
    pub mode: PrecisionMode,
    pub compute_cycles: u64,
    pub reconfig_cycles: u64,
    pub activation_cycles: u64,
    pub mult_busy_cycles: u64,
}

impl LayerReport {
    pub fn total(&self) -> u64 {
        self.compute_cycles + self.reconfig_cycles + self.activation_cycles
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub layers: Vec<LayerReport>,
}

pub const CSV_HEADER: [&str; 6] = [
    "layer",
    "mode",
    "compute_cycles",
    "reconfig_cycles",
    "activation_cycles",
    "mult_busy_cycles",
];

impl CycleReport {
    pub fn compute_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.compute_cycles).sum()
    }

    pub fn reconfig_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.reconfig_cycles).sum()
    }

    pub fn activation_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.activation_cycles).sum()
    }

    pub fn mult_busy_cycles(&self) -> u64 {
        self.layers.iter().map(|l| l.mult_busy_cycles).sum()
    }

    pub fn total_cycles(&self) -> u64 {
        self.layers.iter().map(LayerReport::total).sum()
    }

    /// Number of 3-cycle reconfiguration windows.
    pub fn reconfig_windows(&self) -> usize {
        self.layers.iter().filter(|l| l.reconfig_cycles > 0).count()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(CSV_HEADER)?;
        for (index, l) in self.layers.iter().enumerate() {
            writer.write_record([
                index.to_string(),
                l.mode.to_string(),
                l.compute_cycles.to_string(),
                l.reconfig_cycles.to_string(),
                l.activation_cycles.to_string(),
                l.mult_busy_cycles.to_string(),
            ])?;
        }
        writer.write_record([
            "total".to_string(),
            "-".to_string(),
            self.compute_cycles().to_string(),
            self.reconfig_cycles().to_string(),
            self.activation_cycles().to_string(),
            self.mult_busy_cycles().to_string(),
        ])?;
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), AccelError> {
        let path = path.as_ref();
        let err = |source| AccelError::Report {
            path: path.display().to_string(),
            source,
        };
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.write_csv(file).map_err(err)
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Packed operands of a vector with the per-channel valid bits of the last,
/// possibly partial, word.
fn pack_stream(values: &[i32], mode: PrecisionMode) -> Vec<(PackedOperand, u8)> {
    let ch = mode.channels();
    // Padding must be a legal value; its lanes are marked invalid.
    let filler = if mode.is_bipolar() { 1 } else { 0 };
    values
        .chunks(ch)
        .map(|chunk| {
            let mut lanes = chunk.to_vec();
            let valid = ((1u16 << chunk.len()) - 1) as u8;
            lanes.resize(ch, filler);
            let word = bitmath::pack(&lanes, mode).expect("values range-checked by caller");
            (word, valid)
        })
        .collect()
}

/// Closed-form cycle count of a layer under `topology`'s schedule.
pub fn schedule_cycles(topology: AcceleratorTopology, layer: &LayerConfig) -> LayerCycles {
    let packed = ceil_div(layer.in_features, layer.mode.channels()) as u64;
    let issue = ceil_div(packed as usize, LANES) as u64;
    let tiles = ceil_div(layer.out_features, LANES) as u64;
    let act = layer.threshold_count() as u64;
    let fill = topology.pipe_fill();
    let mult_busy = layer.out_features as u64 * packed;
    match topology.kind {
        TopologyKind::SingleLayer => LayerCycles {
            compute: tiles * (issue + fill),
            activation: tiles * act,
            mult_busy,
        },
        TopologyKind::Systolic => {
            let compute = tiles * issue + fill;
            let end = fill + (tiles * issue + act).max(issue + tiles * act);
            LayerCycles {
                compute,
                activation: end - compute,
                mult_busy,
            }
        }
    }
}

/// Result of running one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRun {
    pub accumulators: Vec<i32>,
    /// Activation levels, or the accumulators on a layer without thresholds.
    pub outputs: Vec<i32>,
    pub cycles: LayerCycles,
}

struct Datapath {
    mode: PrecisionMode,
    inputs: Vec<(PackedOperand, u8)>,
    weights: Vec<Vec<(PackedOperand, u8)>>,
    busy: u64,
}

impl Datapath {
    fn new(layer: &LayerConfig, input: &[i32]) -> Self {
        Self {
            mode: layer.mode,
            inputs: pack_stream(input, layer.mode),
            weights: (0..layer.out_features)
                .map(|n| pack_stream(layer.weight_row(n), layer.mode))
                .collect(),
            busy: 0,
        }
    }

    /// One multiplier issue: neuron `n`, packed position `pos`.
    fn mac(&mut self, acc: &mut Accumulator, n: usize, pos: usize) -> Result<(), MacError> {
        let (x, valid) = self.inputs[pos];
        let (w, _) = self.weights[n][pos];
        let word = bitmath::multiply_gated(x, w, self.mode, valid);
        acc.accumulate(word, self.mode)?;
        self.busy += 1;
        Ok(())
    }

    fn packed_len(&self) -> usize {
        self.inputs.len()
    }
}

/// Sum of the per-multiplier accumulators of one neuron.
fn reduce(accs: &[Accumulator]) -> Result<i32, MacError> {
    let mut total = Accumulator::new();
    for acc in accs {
        total.add(acc.value())?;
    }
    Ok(total.value())
}

/// Comparator pass over a tile of neurons; returns cycles spent (all
/// neurons of the tile compare in parallel).
fn activate_tile(
    layer: &LayerConfig,
    neurons: std::ops::Range<usize>,
    accs: &[i32],
    outputs: &mut [i32],
) -> u64 {
    let Some(sets) = &layer.thresholds else {
        outputs[neurons.clone()].copy_from_slice(&accs[neurons]);
        return 0;
    };
    let mut cycles = 0;
    for n in neurons {
        let (level, spent) = activate_sequential(accs[n], &sets[n]);
        outputs[n] = level as i32;
        cycles = cycles.max(spent);
    }
    cycles
}

fn run_single_layer(layer: &LayerConfig, dp: &mut Datapath) -> Result<LayerRun, AccelError> {
    let out = layer.out_features;
    let packed = dp.packed_len();
    let fill = AcceleratorTopology::SINGLE_LAYER.pipe_fill();
    let mut accumulators = vec![0; out];
    let mut outputs = vec![0; out];
    let mut cycles = LayerCycles::default();

    for group_start in (0..out).step_by(LANES) {
        let group = group_start..(group_start + LANES).min(out);
        let mut accs = vec![[Accumulator::new(); LANES]; group.len()];
        let mut pos = 0;
        while pos < packed {
            for (slot, n) in group.clone().enumerate() {
                for (m, acc) in accs[slot].iter_mut().enumerate() {
                    if pos + m < packed {
                        dp.mac(acc, n, pos + m)?;
                    }
                }
            }
            pos += LANES;
            cycles.compute += 1;
        }
        cycles.compute += fill;
        for (slot, n) in group.clone().enumerate() {
            accumulators[n] = reduce(&accs[slot])?;
        }
        cycles.activation += activate_tile(layer, group, &accumulators, &mut outputs);
    }
    cycles.mult_busy = dp.busy;
    Ok(LayerRun {
        accumulators,
        outputs,
        cycles,
    })
}

fn run_systolic(layer: &LayerConfig, dp: &mut Datapath) -> Result<LayerRun, AccelError> {
    let out = layer.out_features;
    let packed = dp.packed_len();
    let fill = AcceleratorTopology::SYSTOLIC.pipe_fill();
    let mut accumulators = vec![0; out];
    let mut outputs = vec![0; out];
    let mut clock = 0u64;
    let mut comparator_free_at = 0u64;
    let mut last_ready = 0u64;

    for tile_start in (0..out).step_by(LANES) {
        let tile = tile_start..(tile_start + LANES).min(out);
        // grid[r][c] is the output-stationary accumulator of MAC (r, c).
        let mut grid = vec![[Accumulator::new(); LANES]; tile.len()];
        let mut base = 0;
        while base < packed {
            for (r, n) in tile.clone().enumerate() {
                for (c, acc) in grid[r].iter_mut().enumerate() {
                    if base + c < packed {
                        dp.mac(acc, n, base + c)?;
                    }
                }
            }
            base += LANES;
            clock += 1;
        }
        for (r, n) in tile.clone().enumerate() {
            accumulators[n] = reduce(&grid[r])?;
        }
        let ready = clock + fill;
        let start = ready.max(comparator_free_at);
        comparator_free_at = start + activate_tile(layer, tile, &accumulators, &mut outputs);
        last_ready = ready;
    }
    let end = comparator_free_at.max(last_ready);
    Ok(LayerRun {
        accumulators,
        outputs,
        cycles: LayerCycles {
            compute: last_ready,
            activation: end - last_ready,
            mult_busy: dp.busy,
        },
    })
}

/// Run one layer on the accelerator datapath.
pub fn run_layer(
    topology: AcceleratorTopology,
    layer: &LayerConfig,
    input: &[i32],
) -> Result<LayerRun, AccelError> {
    check_input(input, layer.in_features, layer.mode)?;
    let mut dp = Datapath::new(layer, input);
    match topology.kind {
        TopologyKind::SingleLayer => run_single_layer(layer, &mut dp),
        TopologyKind::Systolic => run_systolic(layer, &mut dp),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkRun {
    /// Output of each layer; the last holds the final accumulators.
    pub layer_outputs: Vec<Vec<i32>>,
    pub class: usize,
    pub report: CycleReport,
}

impl NetworkRun {
    pub fn logits(&self) -> &[i32] {
        self.layer_outputs.last().map_or(&[], Vec::as_slice)
    }
}

/// Layer settings queue of the controlling state machine.
#[derive(Debug)]
struct Controller {
    settings: VecDeque<PrecisionMode>,
    current: Option<PrecisionMode>,
}

impl Controller {
    fn new(model: &ModelDescriptor) -> Self {
        let settings: VecDeque<_> = model.modes().into();
        // The first layer's precision is loaded before timing starts.
        let current = settings.front().copied();
        Self { settings, current }
    }

    /// Pop the next layer's precision; returns the reconfiguration cycles
    /// spent rewriting the multiplier settings.
    fn next_layer(&mut self, reconfig: u64) -> u64 {
        let mode = self.settings.pop_front().expect("one setting per layer");
        if self.current == Some(mode) {
            0
        } else {
            self.current = Some(mode);
            reconfig
        }
    }
}

pub fn run_network(
    topology: AcceleratorTopology,
    model: &ModelDescriptor,
    input: &[i32],
) -> Result<NetworkRun, AccelError> {
    model.validate()?;
    let mut controller = Controller::new(model);
    let mut activations = input.to_vec();
    let mut layer_outputs = Vec::with_capacity(model.layers.len());
    let mut report = CycleReport::default();
    for (index, layer) in model.layers.iter().enumerate() {
        let reconfig_cycles = controller.next_layer(topology.reconfig_cycles());
        let run = run_layer(topology, layer, &activations)?;
        report.layers.push(LayerReport {
            mode: layer.mode,
            compute_cycles: run.cycles.compute,
            reconfig_cycles,
            activation_cycles: run.cycles.activation,
            mult_busy_cycles: run.cycles.mult_busy,
        });
        if let Some(next) = model.layers.get(index + 1) {
            activations = run
                .outputs
                .iter()
                .map(|&lvl| level_to_value(lvl as i64, next.mode))
                .collect();
        }
        layer_outputs.push(run.outputs);
    }
    let logits = layer_outputs.last().expect("validated non-empty");
    let class = logits
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > logits[best] { i } else { best });
    Ok(NetworkRun {
        layer_outputs,
        class,
        report,
    })
}

/// Cycle report from the closed-form schedule alone; weights are not read.
pub fn schedule_network(topology: AcceleratorTopology, model: &ModelDescriptor) -> CycleReport {
    let mut report = CycleReport::default();
    let mut previous = model.layers.first().map(|l| l.mode);
    for layer in &model.layers {
        let cycles = schedule_cycles(topology, layer);
        let reconfig_cycles = if previous == Some(layer.mode) {
            0
        } else {
            topology.reconfig_cycles()
        };
        previous = Some(layer.mode);
        report.layers.push(LayerReport {
            mode: layer.mode,
            compute_cycles: cycles.compute,
            reconfig_cycles,
            activation_cycles: cycles.activation,
            mult_busy_cycles: cycles.mult_busy,
        });
    }
    report
}
