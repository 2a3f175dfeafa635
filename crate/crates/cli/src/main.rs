use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use bitsys::accel::{run_network, schedule_network, AcceleratorTopology};
use bitsys::bitmath::{self, decode_product, unpack};
use bitsys::fabric::{FabricState, MULTIPLIER_LATENCY};
use bitsys::refnet::{
    generate_random_input, generate_random_model, load_model, load_vector, reference_network,
    save_model, save_vector,
};
use bitsys::verify::{exhaustive_pairs, fabric_sweep, functional_sweep, random_pairs, Mismatch};
use bitsys::{PackedOperand, PrecisionMode};

#[derive(Parser)]
#[command(
    name = "bitsys",
    version,
    about = "Reconfigurable multi-precision multiplier and accelerator models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Multiply two packed operands in one precision mode.
    Mul(MulArgs),
    /// Check the multiplier models against their oracles.
    Verify(VerifyArgs),
    /// Run a model on the accelerator and print its logits.
    Infer(InferArgs),
    /// Print the cycle report of a model as CSV without running it.
    Cycles(CyclesArgs),
    /// Write a random model (and optionally an input vector).
    GenModel(GenModelArgs),
}

#[derive(Args)]
struct MulArgs {
    #[arg(long, value_parser = ["1", "2", "4", "8"])]
    bits: String,
    #[arg(long, conflicts_with_all = ["unsigned", "bnn"])]
    signed: bool,
    #[arg(long, conflicts_with = "bnn")]
    unsigned: bool,
    /// Bipolar 1-bit mode (bit 0 is -1, bit 1 is +1).
    #[arg(long)]
    bnn: bool,
    #[arg(long, value_parser = parse_operand)]
    a: u8,
    #[arg(long, value_parser = parse_operand)]
    b: u8,
    /// Also stream the pair through the cycle-accurate fabric and print its trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Check all 65536 operand pairs instead of a random sample.
    #[arg(long)]
    exhaustive: bool,
    /// Comma-separated modes, e.g. `8s,4u,1bnn`.
    #[arg(long, default_value = "8s,8u,4s,4u,2s,2u,1u,1bnn")]
    modes: String,
    /// Also check the cycle-accurate fabric.
    #[arg(long)]
    fabric: bool,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Independent fabric instances to shard the sweep across.
    #[arg(long, default_value_t = 8)]
    shards: usize,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "single")]
    topology: AcceleratorTopology,
    /// Write the cycle report CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Compare against the reference model.
    #[arg(long)]
    oracle_check: bool,
}

#[derive(Args)]
struct CyclesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "single")]
    topology: AcceleratorTopology,
}

#[derive(Args)]
struct GenModelArgs {
    #[arg(long)]
    out: PathBuf,
    /// Layer widths, input first.
    #[arg(long, default_value = "784,64,64,64,10", value_delimiter = ',')]
    widths: Vec<usize>,
    /// One mode per layer.
    #[arg(long, default_value = "1bnn,2s,4s,8s")]
    modes: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a random input vector for the model.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    input_seed: u64,
}

/// Failure classes mapped onto exit codes.
enum Outcome {
    Pass,
    VerificationFailed,
}

fn parse_operand(text: &str) -> Result<u8, String> {
    let digits = text
        .strip_prefix("0x")
        .or_else(|| text.strip_prefix("0X"))
        .unwrap_or(text);
    u8::from_str_radix(digits, 16).map_err(|_| format!("`{text}` is not an 8-bit hex operand"))
}

fn parse_modes(list: &str) -> Result<Vec<PrecisionMode>> {
    let modes = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<PrecisionMode>()
                .with_context(|| format!("bad mode `{s}`"))
        })
        .collect::<Result<Vec<_>>>()?;
    if modes.is_empty() {
        bail!("empty mode list");
    }
    Ok(modes)
}

fn join(values: &[i32]) -> String {
    values
        .iter()
        .map(i32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_mul(args: MulArgs) -> Result<Outcome> {
    let bits: u32 = args.bits.parse()?;
    if args.bnn && bits != 1 {
        bail!("--bnn requires --bits 1");
    }
    if args.signed && bits == 1 {
        bail!("1-bit signed is the bipolar mode; use --bnn");
    }
    let mode = PrecisionMode::new(bits, args.signed || args.bnn)?;
    let (a, b) = (PackedOperand(args.a), PackedOperand(args.b));
    let word = bitmath::multiply(a, b, mode);

    println!(
        "mode={mode} a={a} b={b} a_ch={} b_ch={}",
        join(&unpack(a, mode)),
        join(&unpack(b, mode))
    );
    let channels: Vec<String> = decode_product(word, mode)
        .iter()
        .enumerate()
        .map(|(i, v)| format!("ch{i}={v}"))
        .collect();
    println!("out={word} {}", channels.join(" "));

    if args.trace {
        let mut fabric = FabricState::with_mode(mode);
        fabric.enable_trace();
        fabric.offer_input(a, b);
        let done = fabric.drain();
        for line in fabric.trace() {
            println!("{line}");
        }
        if done.first().map(|c| c.word) != Some(word) {
            println!("fabric: mismatch");
            return Ok(Outcome::VerificationFailed);
        }
    }
    Ok(Outcome::Pass)
}

fn describe(m: &Option<Mismatch>) -> String {
    match m {
        Some(m) => format!(
            " first: a={} b={} expected={} got={}",
            m.a, m.b, m.expected, m.got
        ),
        None => String::new(),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<Outcome> {
    let modes = parse_modes(&args.modes)?;
    let pairs = if args.exhaustive {
        exhaustive_pairs()
    } else {
        random_pairs(args.samples, args.seed)
    };
    let mut all_ok = true;
    for mode in modes {
        let f = functional_sweep(mode, &pairs);
        let status = if f.ok() { "ok" } else { "FAIL" };
        println!(
            "mode={mode} functional {}/{} {status}{}",
            f.passed,
            f.checked,
            describe(&f.first_mismatch)
        );
        all_ok &= f.ok();

        if args.fabric {
            let s = fabric_sweep(mode, &pairs, args.shards);
            let lat = if s.latency_ok() {
                format!("latency={MULTIPLIER_LATENCY} ok")
            } else {
                format!("latency={}..{} FAIL", s.min_latency, s.max_latency)
            };
            let thr = if s.throughput_ok { "ok" } else { "FAIL" };
            let status = if s.products.ok() { "ok" } else { "FAIL" };
            println!(
                "mode={mode} fabric {}/{} {status} {lat} throughput={thr}{}",
                s.products.passed,
                s.products.checked,
                describe(&s.products.first_mismatch)
            );
            all_ok &= s.ok();
        }
    }
    Ok(if all_ok {
        Outcome::Pass
    } else {
        Outcome::VerificationFailed
    })
}

fn cmd_infer(args: InferArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    let input = load_vector(&args.input)?;
    let run = run_network(args.topology, &model, &input)?;
    println!("model={} topology={}", model.name, args.topology);
    println!("logits={}", join(run.logits()));
    println!("class={}", run.class);
    println!("cycles={}", run.report.total_cycles());
    if let Some(path) = &args.report {
        run.report.save_csv(path)?;
    }
    if args.oracle_check {
        let reference = reference_network(&model, &input)?;
        let same = run.class == reference.class
            && run.layer_outputs.len() == reference.layer_outputs.len()
            && run
                .layer_outputs
                .iter()
                .zip(&reference.layer_outputs)
                .all(|(a, r)| a.iter().map(|&v| v as i64).eq(r.iter().copied()));
        println!("bit-exact: {same}");
        if !same {
            return Ok(Outcome::VerificationFailed);
        }
    }
    Ok(Outcome::Pass)
}

fn cmd_cycles(args: CyclesArgs) -> Result<Outcome> {
    let model = load_model(&args.model)?;
    print!("{}", schedule_network(args.topology, &model).to_csv());
    Ok(Outcome::Pass)
}

fn cmd_gen_model(args: GenModelArgs) -> Result<Outcome> {
    let modes = parse_modes(&args.modes)?;
    let model = generate_random_model(&args.widths, &modes, args.seed)?;
    save_model(&model, &args.out)?;
    println!("wrote {}", args.out.display());
    if let Some(path) = &args.input {
        save_vector(&generate_random_input(&model, args.input_seed), path)?;
        println!("wrote {}", path.display());
    }
    Ok(Outcome::Pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Mul(args) => cmd_mul(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Cycles(args) => cmd_cycles(args),
        Command::GenModel(args) => cmd_gen_model(args),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
