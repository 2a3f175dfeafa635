//! Cycle-accurate structural model of the bitwise systolic multiplier.
//!
//! Data path, one register stage per arrow:
//!
//! ```text
//! offer → input register → loaders (diagonal skew) → 8×8 PE grid
//!       → per-diagonal adder trees (3 levels) → D_0..D_14
//!       → output generator pipeline (15 shift-add stages, carry-cutters)
//!       → output register
//! ```
//!
//! Bit `i` of operand A travels along PE row `i` and bit `j` of operand B down
//! PE column `j`, so both reach PE `(i, j)` exactly `i + j` cycles after the
//! wavefront head and every cell of anti-diagonal `k` fires in the same cycle.
//! Each register carries a valid bit, an occupancy bit and the precision mode
//! the operation was accepted under, so work in flight during a
//! reconfiguration finishes under its original mode.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::bitmath::{
    self, PackedOperand, PrecisionMode, ProductWord, Region, SignAction, SignActionGrid,
    NUM_PARTIALS, OPERAND_BITS,
};

/// Accepted-input to completed-product latency.
pub const MULTIPLIER_LATENCY: u64 = 22;
/// Cycles spent rewriting the mode registers.
pub const RECONFIG_CYCLES: u64 = 3;

const N: usize = OPERAND_BITS;

/// Cycle in which an offered operand pair is first seen by the input register.
pub type Cycle = u64;

/// Processing element flavour. Type I sits on the main diagonal and can
/// switch to XNOR; Type II elsewhere switches between AND and a constant 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeType {
    TypeI,
    TypeII,
}

impl PeType {
    pub fn at(i: usize, j: usize) -> Self {
        if i == j {
            PeType::TypeI
        } else {
            PeType::TypeII
        }
    }
}

/// Two output bits of a processing element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PeOutput {
    pub bit: bool,
    pub valid: bool,
}

/// Input index layout of a PE truth table.
pub mod pe_input {
    pub const A: usize = 1 << 0;
    pub const B: usize = 1 << 1;
    pub const A_VALID: usize = 1 << 2;
    pub const B_VALID: usize = 1 << 3;
    /// Type I: set selects XNOR, clear selects AND.
    /// Type II: set selects AND, clear forces 0.
    pub const PATTERN: usize = 1 << 4;
    /// Tied high in the fabric; with it low both outputs read 0.
    pub const ENABLE: usize = 1 << 5;
}

/// Exhaustive 6-input/2-output table of one processing element type.
pub fn pe_truth_table(ty: PeType) -> [PeOutput; 64] {
    use pe_input::*;
    let mut table = [PeOutput::default(); 64];
    for (index, entry) in table.iter_mut().enumerate() {
        if index & ENABLE == 0 {
            continue;
        }
        let a = index & A != 0;
        let b = index & B != 0;
        let pattern = index & PATTERN != 0;
        let bit = match (ty, pattern) {
            (PeType::TypeI, true) => a == b,
            (PeType::TypeI, false) | (PeType::TypeII, true) => a && b,
            (PeType::TypeII, false) => false,
        };
        *entry = PeOutput {
            bit,
            valid: index & A_VALID != 0 && index & B_VALID != 0,
        };
    }
    table
}

/// Pattern control bit of the PE at `(i, j)` under `mode`.
pub fn pe_pattern(i: usize, j: usize, mode: PrecisionMode) -> bool {
    match PeType::at(i, j) {
        PeType::TypeI => mode.is_bipolar(),
        PeType::TypeII => Region::of(i, j).is_active(mode),
    }
}

/// Carry-cutter placement: one cutter after every odd diagonal `D_1, D_3, ...
/// D_13`, i.e. on every possible 2-bit channel boundary of the output.
pub const CARRY_CUTTER_POSITIONS: [usize; 7] = [1, 3, 5, 7, 9, 11, 13];

/// Carry-cutter enables for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CarryCutters {
    pub enabled: [bool; 7],
}

impl CarryCutters {
    pub fn for_mode(mode: PrecisionMode) -> Self {
        let width = mode.product_width();
        Self {
            enabled: CARRY_CUTTER_POSITIONS.map(|k| (k + 1) % width == 0),
        }
    }

    /// Diagonal indices `k` whose cutter is enabled.
    pub fn enabled_after(&self) -> Vec<usize> {
        CARRY_CUTTER_POSITIONS
            .iter()
            .zip(self.enabled)
            .filter_map(|(&k, on)| on.then_some(k))
            .collect()
    }

    pub fn cuts_after(&self, k: usize) -> bool {
        CARRY_CUTTER_POSITIONS
            .iter()
            .position(|&p| p == k)
            .is_some_and(|idx| self.enabled[idx])
    }
}

/// One bit lane of a loader or PE pass-through register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lane {
    bit: bool,
    valid: bool,
    live: bool,
    mode: PrecisionMode,
}

impl Lane {
    const IDLE: Lane = Lane {
        bit: false,
        valid: false,
        live: false,
        mode: PrecisionMode::U8,
    };
}

/// An operand pair parked in the input register.
#[derive(Debug, Clone, Copy)]
struct Issue {
    a: u8,
    b: u8,
    valid_channels: u8,
    mode: PrecisionMode,
}

/// Eight-deep FIFO of 8-bit registers. A new operand is written along the
/// diagonal (bit `i` into row `i`) and rows move one step toward the output
/// every cycle, so bit `i` leaves the loader `i` cycles after bit 0.
#[derive(Debug, Clone)]
pub struct InputLoader {
    rows: [[Lane; N]; N],
}

impl Default for InputLoader {
    fn default() -> Self {
        Self {
            rows: [[Lane::IDLE; N]; N],
        }
    }
}

impl InputLoader {
    fn output(&self) -> [Lane; N] {
        self.rows[0]
    }

    fn clock(&mut self, intake: Option<(u8, u8, PrecisionMode)>) {
        self.rows.rotate_left(1);
        self.rows[N - 1] = [Lane::IDLE; N];
        if let Some((word, valid_channels, mode)) = intake {
            let bits = mode.bits();
            for i in 0..N {
                self.rows[i][i] = Lane {
                    bit: word >> i & 1 == 1,
                    valid: valid_channels >> (i / bits) & 1 == 1,
                    live: true,
                    mode,
                };
            }
        }
    }

    /// Number of occupied bit slots.
    pub fn occupancy(&self) -> usize {
        self.rows.iter().flatten().filter(|l| l.live).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PeCell {
    a: Lane,
    b: Lane,
    out: PeOutput,
    live: bool,
    mode: PrecisionMode,
}

impl PeCell {
    const IDLE: PeCell = PeCell {
        a: Lane::IDLE,
        b: Lane::IDLE,
        out: PeOutput {
            bit: false,
            valid: false,
        },
        live: false,
        mode: PrecisionMode::U8,
    };
}

/// Signed partial sum travelling through an adder tree or the output pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Partial {
    value: i32,
    live: bool,
    mode: PrecisionMode,
}

impl Partial {
    const IDLE: Partial = Partial {
        value: 0,
        live: false,
        mode: PrecisionMode::U8,
    };
}

/// Cells `(i, k - i)` on anti-diagonal `k`, row-major.
fn diagonal_cells(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (k.saturating_sub(N - 1)..=k.min(N - 1)).map(move |i| (i, k - i))
}

/// Three registered levels reducing up to eight cells to one sum: 8 → 4 → 2 → 1.
#[derive(Debug, Clone)]
struct DiagonalAdder {
    level1: [Partial; 4],
    level2: [Partial; 2],
    level3: Partial,
}

impl Default for DiagonalAdder {
    fn default() -> Self {
        Self {
            level1: [Partial::IDLE; 4],
            level2: [Partial::IDLE; 2],
            level3: Partial::IDLE,
        }
    }
}

fn merge(x: Partial, y: Partial) -> Partial {
    let carrier = if x.live { x } else { y };
    Partial {
        value: x.value + y.value,
        live: x.live || y.live,
        mode: carrier.mode,
    }
}

/// Shift-and-add stage registers of the output generator plus its output
/// register.
#[derive(Debug, Clone)]
pub struct OutputPipeline {
    stages: [Partial; NUM_PARTIALS],
    out: Option<(ProductWord, PrecisionMode)>,
    cutters: CarryCutters,
}

impl OutputPipeline {
    fn new(mode: PrecisionMode) -> Self {
        Self {
            stages: [Partial::IDLE; NUM_PARTIALS],
            out: None,
            cutters: CarryCutters::for_mode(mode),
        }
    }

    /// Cutter enables held in the mode registers.
    pub fn carry_cutters(&self) -> CarryCutters {
        self.cutters
    }
}

/// Instrumentation record for an accepted operand pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct InFlight {
    accepted_at: Cycle,
    a: PackedOperand,
    b: PackedOperand,
}

/// A product leaving the output register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Completion {
    pub word: ProductWord,
    pub a: PackedOperand,
    pub b: PackedOperand,
    pub mode: PrecisionMode,
    pub accepted_at: Cycle,
    /// Value of the cycle counter after the step that produced it.
    pub completed_at: Cycle,
}

/// Answer to [`FabricState::configure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconfigAck {
    pub mode: PrecisionMode,
    /// First cycle in which an offer is accepted again.
    pub ready_at: Cycle,
}

#[derive(Debug, Clone, Copy)]
enum Config {
    Unconfigured,
    Reconfiguring {
        target: PrecisionMode,
        remaining: u64,
    },
    Ready,
}

/// Full register state of one multiplier.
#[derive(Debug, Clone)]
pub struct FabricState {
    cycle: Cycle,
    mode: PrecisionMode,
    config: Config,
    pending: Option<Issue>,
    input_reg: Option<Issue>,
    loader_a: InputLoader,
    loader_b: InputLoader,
    grid: [[PeCell; N]; N],
    adders: Vec<DiagonalAdder>,
    pipeline: OutputPipeline,
    actions: Vec<(PrecisionMode, SignActionGrid)>,
    tables: [[PeOutput; 64]; 2],
    in_flight: VecDeque<InFlight>,
    trace: Option<Vec<String>>,
}

impl Default for FabricState {
    fn default() -> Self {
        Self::new()
    }
}

impl FabricState {
    /// A fabric that has never been configured; offers are refused until
    /// [`configure`](Self::configure) completes.
    pub fn new() -> Self {
        let mut fabric = Self::with_mode(PrecisionMode::U8);
        fabric.config = Config::Unconfigured;
        fabric
    }

    /// A fabric whose mode registers already hold `mode`.
    pub fn with_mode(mode: PrecisionMode) -> Self {
        Self {
            cycle: 0,
            mode,
            config: Config::Ready,
            pending: None,
            input_reg: None,
            loader_a: InputLoader::default(),
            loader_b: InputLoader::default(),
            grid: [[PeCell::IDLE; N]; N],
            adders: vec![DiagonalAdder::default(); NUM_PARTIALS],
            pipeline: OutputPipeline::new(mode),
            actions: PrecisionMode::ALL
                .iter()
                .map(|&m| (m, bitmath::sign_actions(m)))
                .collect(),
            tables: [
                pe_truth_table(PeType::TypeI),
                pe_truth_table(PeType::TypeII),
            ],
            in_flight: VecDeque::new(),
            trace: None,
        }
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    /// Trace lines recorded so far, in event order.
    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn cycle(&self) -> Cycle {
        self.cycle
    }

    /// Mode currently held in the mode registers.
    pub fn mode(&self) -> PrecisionMode {
        self.mode
    }

    /// Cutter enables of the most recently requested mode. Work already in
    /// flight is cut according to the mode tag it was accepted with.
    pub fn carry_cutters(&self) -> CarryCutters {
        match self.config {
            Config::Reconfiguring { target, .. } => CarryCutters::for_mode(target),
            _ => self.pipeline.carry_cutters(),
        }
    }

    pub fn is_ready(&self) -> bool {
        matches!(self.config, Config::Ready)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Start rewriting the mode registers. Offers are refused during the
    /// next [`RECONFIG_CYCLES`] cycles; work already accepted drains under
    /// its own mode. Calling again inside the window restarts it.
    pub fn configure(&mut self, mode: PrecisionMode) -> ReconfigAck {
        self.config = Config::Reconfiguring {
            target: mode,
            remaining: RECONFIG_CYCLES,
        };
        ReconfigAck {
            mode,
            ready_at: self.cycle + RECONFIG_CYCLES,
        }
    }

    /// Present an operand pair for the current cycle.
    pub fn offer_input(&mut self, a: PackedOperand, b: PackedOperand) -> bool {
        self.offer_input_gated(a, b, self.mode.all_channels())
    }

    /// Present an operand pair with per-channel valid bits; lanes of invalid
    /// channels carry a cleared valid signal through the array.
    pub fn offer_input_gated(
        &mut self,
        a: PackedOperand,
        b: PackedOperand,
        valid_channels: u8,
    ) -> bool {
        if !self.is_ready() || self.pending.is_some() {
            return false;
        }
        self.pending = Some(Issue {
            a: a.0,
            b: b.0,
            valid_channels: valid_channels & self.mode.all_channels(),
            mode: self.mode,
        });
        self.in_flight.push_back(InFlight {
            accepted_at: self.cycle,
            a,
            b,
        });
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!(
                "cycle={} event=accept a={} b={} out=-",
                self.cycle, a, b
            ));
        }
        true
    }

    /// Output of PE `(i, j)` as latched in its output register.
    pub fn pe_output(&self, i: usize, j: usize) -> PeOutput {
        self.grid[i][j].out
    }

    /// Number of occupied register slots across the whole data path.
    pub fn occupancy(&self) -> usize {
        self.input_reg.is_some() as usize
            + self.loader_a.occupancy()
            + self.loader_b.occupancy()
            + self.grid.iter().flatten().filter(|c| c.live).count()
            + self
                .adders
                .iter()
                .map(|d| {
                    d.level1.iter().chain(&d.level2).filter(|p| p.live).count()
                        + d.level3.live as usize
                })
                .sum::<usize>()
            + self.pipeline.stages.iter().filter(|p| p.live).count()
            + self.pipeline.out.is_some() as usize
    }

    fn sign_grid(&self, mode: PrecisionMode) -> &SignActionGrid {
        &self
            .actions
            .iter()
            .find(|(m, _)| *m == mode)
            .expect("all modes are tabulated")
            .1
    }

    /// Advance every register by one clock and return the products that left
    /// the output register.
    pub fn step(&mut self) -> Vec<Completion> {
        // Pipeline output stage.
        let last = self.pipeline.stages[NUM_PARTIALS - 1];
        self.pipeline.out = last
            .live
            .then_some((ProductWord(last.value as u32 as u16), last.mode));

        // Output generator: stage k adds D_k << k to stage k-1.
        let diag: Vec<Partial> = self.adders.iter().map(|d| d.level3).collect();
        let old_stages = self.pipeline.stages;
        for k in 0..NUM_PARTIALS {
            let prev = if k == 0 {
                Partial {
                    value: 0,
                    live: diag[0].live,
                    mode: diag[0].mode,
                }
            } else {
                old_stages[k - 1]
            };
            let mut value = prev.value + (diag[k].value << k);
            if CarryCutters::for_mode(prev.mode).cuts_after(k) {
                value &= (1 << (k + 1)) - 1;
            }
            self.pipeline.stages[k] = Partial {
                value,
                live: prev.live,
                mode: prev.mode,
            };
        }

        // Adder trees, deepest level first so each reads last cycle's values.
        for k in 0..NUM_PARTIALS {
            let adder = &mut self.adders[k];
            adder.level3 = merge(adder.level2[0], adder.level2[1]);
            adder.level2 = [
                merge(adder.level1[0], adder.level1[1]),
                merge(adder.level1[2], adder.level1[3]),
            ];
            let mut level1 = [Partial::IDLE; 4];
            for (slot, (i, j)) in diagonal_cells(k).enumerate() {
                let cell = self.grid[i][j];
                let value = if cell.out.valid {
                    match self.sign_grid(cell.mode)[i][j] {
                        SignAction::Add => cell.out.bit as i32,
                        SignAction::Subtract => -(cell.out.bit as i32),
                        // XNOR output x counts as 2x - 1.
                        SignAction::Bipolar => 2 * cell.out.bit as i32 - 1,
                        SignAction::Inactive => 0,
                    }
                } else {
                    0
                };
                let contribution = Partial {
                    value,
                    live: cell.live,
                    mode: cell.mode,
                };
                level1[slot / 2] = merge(level1[slot / 2], contribution);
            }
            self.adders[k].level1 = level1;
        }

        // PE grid: operands hop one PE right (A) or down (B) per cycle.
        let from_a = self.loader_a.output();
        let from_b = self.loader_b.output();
        let old_grid = self.grid;
        for i in 0..N {
            for j in 0..N {
                let a = if j == 0 {
                    from_a[i]
                } else {
                    old_grid[i][j - 1].a
                };
                let b = if i == 0 {
                    from_b[j]
                } else {
                    old_grid[i - 1][j].b
                };
                let live = a.live && b.live;
                let mode = a.mode;
                let ty = PeType::at(i, j);
                let mut index = pe_input::ENABLE;
                if a.bit {
                    index |= pe_input::A;
                }
                if b.bit {
                    index |= pe_input::B;
                }
                if a.valid {
                    index |= pe_input::A_VALID;
                }
                if b.valid {
                    index |= pe_input::B_VALID;
                }
                if pe_pattern(i, j, mode) {
                    index |= pe_input::PATTERN;
                }
                let out = self.tables[(ty == PeType::TypeII) as usize][index];
                self.grid[i][j] = PeCell {
                    a,
                    b,
                    out,
                    live,
                    mode,
                };
            }
        }

        // Loaders take the operand parked in the input register.
        let intake = self.input_reg.take();
        self.loader_a
            .clock(intake.map(|x| (x.a, x.valid_channels, x.mode)));
        self.loader_b
            .clock(intake.map(|x| (x.b, x.valid_channels, x.mode)));
        self.input_reg = self.pending.take();

        if let Config::Reconfiguring { target, remaining } = self.config {
            self.config = if remaining <= 1 {
                self.mode = target;
                self.pipeline.cutters = CarryCutters::for_mode(target);
                Config::Ready
            } else {
                Config::Reconfiguring {
                    target,
                    remaining: remaining - 1,
                }
            };
        }

        self.cycle += 1;

        let mut done = Vec::new();
        if let Some((word, mode)) = self.pipeline.out {
            let record = self
                .in_flight
                .pop_front()
                .expect("every output has an accepted input");
            let completion = Completion {
                word,
                a: record.a,
                b: record.b,
                mode,
                accepted_at: record.accepted_at,
                completed_at: self.cycle,
            };
            if let Some(trace) = self.trace.as_mut() {
                let mut line = String::new();
                let _ = write!(
                    line,
                    "cycle={} event=complete a={} b={} out={}",
                    completion.completed_at, completion.a, completion.b, completion.word
                );
                trace.push(line);
            }
            done.push(completion);
        }
        done
    }

    /// Step until no work remains in flight, collecting completions.
    pub fn drain(&mut self) -> Vec<Completion> {
        let mut done = Vec::new();
        while !self.in_flight.is_empty() {
            done.extend(self.step());
        }
        done
    }
}

/// Stream `pairs` back to back through a fresh fabric in `mode` and return
/// every completion in order.
pub fn run_stream(
    mode: PrecisionMode,
    pairs: impl IntoIterator<Item = (u8, u8)>,
) -> Vec<Completion> {
    let mut fabric = FabricState::with_mode(mode);
    let mut done = Vec::new();
    for (a, b) in pairs {
        let accepted = fabric.offer_input(PackedOperand(a), PackedOperand(b));
        debug_assert!(accepted);
        done.extend(fabric.step());
    }
    done.extend(fabric.drain());
    done
}
