use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use cmm_bench::{
    emit_records, fit_slope, group_by_connector, output_digest, parse_records, run_sweep,
    run_verify, Connector, HarnessError, RecordFormat, SweepSpec, VerifyOptions,
    DEFAULT_REPEATS, DEFAULT_WARMUP,
};
use cmm_core::{
    cmm_forward, generate_inputs, generate_weights, load_bundle, save_bundle, CmmConfig,
    SsmBackendChoice,
};
use sha2::{Digest, Sha256};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "bench", version, about = "Benchmark and verify the cross-modal fusion connectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time forward passes over a sweep of token counts and emit records.
    Sweep(SweepArgs),
    /// Fit log-log slopes of median wall time against T.
    Fit(FitArgs),
    /// Write a seeded weight bundle and report digests of its forward pass.
    GenFixtures(GenArgs),
    /// Run the ablation grid and invariant suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ShapeArgs {
    #[arg(long = "G", default_value_t = 5)]
    grids: usize,
    #[arg(long = "D", default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value = "diagonal_lti")]
    backend: SsmBackendChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated connectors: cmm, prepend, cross_attend.
    #[arg(long, value_delimiter = ',', default_value = "cmm")]
    connector: Vec<Connector>,
    /// Comma-separated token counts.
    #[arg(long = "T", value_delimiter = ',', default_value = "256,512,1024,2048,4096,8192")]
    tokens: Vec<usize>,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: usize,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: RecordFormat,
    /// Run independent sweep points concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Records written by `sweep`.
    input: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<RecordFormat>,
    /// Write the reports here as JSON lines instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "T", default_value_t = 16)]
    tokens: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long = "T", default_value_t = 16)]
    tokens: usize,
    #[arg(long = "G", default_value_t = 5)]
    grids: usize,
    #[arg(long = "D", default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn sweep(args: SweepArgs) -> Result<u8> {
    let spec = SweepSpec {
        connectors: args.connector,
        backend: args.shape.backend,
        tokens: args.tokens,
        grids: args.shape.grids,
        d_model: args.shape.d_model,
        heads: args.shape.heads,
        top_k: args.shape.k,
        repeats: args.repeats,
        warmup: args.warmup,
        seed: args.shape.seed,
        parallel: args.parallel,
    };
    spec.validate()?;
    let mode = if spec.parallel { "parallel" } else { "sequential" };
    eprintln!("sweep: {} points, {mode} mode", spec.points().len());
    let records = run_sweep(&spec)?;
    emit_records(&records, args.format, open_output(args.out.as_deref())?)?;
    Ok(0)
}

fn infer_format(path: &Path) -> RecordFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("ndjson") | Some("json") => RecordFormat::JsonLines,
        _ => RecordFormat::Csv,
    }
}

fn fit(args: FitArgs) -> Result<u8> {
    let format = args.format.unwrap_or_else(|| infer_format(&args.input));
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let records = parse_records(BufReader::new(file), format)?;
    let mut out = open_output(args.out.as_deref())?;
    for (_, group) in group_by_connector(&records) {
        let report = fit_slope(&group)?;
        serde_json::to_writer(&mut out, &report)?;
        writeln!(out)?;
    }
    Ok(0)
}

fn gen_fixtures(args: GenArgs) -> Result<u8> {
    let s = &args.shape;
    let cfg = CmmConfig::new(args.tokens, s.grids, s.d_model)
        .with_heads(s.heads)
        .with_top_k(s.k)
        .with_backend(s.backend);
    cfg.validate().map_err(|e| HarnessError::Usage {
        field: "config",
        reason: e.to_string(),
    })?;
    let weights = generate_weights(&cfg, s.seed)?;
    let inputs = generate_inputs(cfg.tokens, cfg.grids, cfg.d_text, cfg.d_vision, s.seed)?;
    let direct = cmm_forward(&inputs.xt, &inputs.xv, &weights, &cfg)?;
    save_bundle(&weights, &cfg, s.seed, &args.out)?;
    let bytes = std::fs::read(&args.out)?;
    let bundle = load_bundle(&args.out)?;
    let loaded = cmm_forward(&inputs.xt, &inputs.xv, &bundle.weights, bundle.config())?;
    let summary = serde_json::json!({
        "path": args.out.display().to_string(),
        "seed": s.seed,
        "bundle_sha256": hex::encode(Sha256::digest(&bytes)),
        "forward_digest": output_digest(&direct),
        "roundtrip_forward_digest": output_digest(&loaded),
    });
    println!("{summary}");
    Ok(0)
}

fn verify(args: VerifyArgs) -> Result<u8> {
    let report = run_verify(&VerifyOptions {
        tokens: args.tokens,
        grids: args.grids,
        d_model: args.d_model,
        heads: args.heads,
        seed: args.seed,
    })?;
    for check in &report.checks {
        println!("{check}");
    }
    let failed = report.failures().count();
    println!("{} checks, {failed} failed", report.checks.len());
    Ok(if report.all_passed() { 0 } else { EXIT_VERIFY })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Fit(a) => fit(a),
        Command::GenFixtures(a) => gen_fixtures(a),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_usage);
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_FAILURE })
        }
    }
}
