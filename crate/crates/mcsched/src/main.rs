use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcsched::bound::bound_table;
use mcsched::config::{ExperimentConfig, FULL_HORIZON};
use mcsched::report::{emit_records, read_rows, summarize, write_records, Format};
use mcsched::sweep::run_sweep;
use mcsched::verify::{run_verify, Suite, VerifyOptions};
use mcsched::HarnessError;
use mcsched_core::model::ArrivalSpec;
use mcsched_core::policies::{MatchingRoute, PolicyKind};
use serde::Serialize;

const EXIT_VERIFY: u8 = 2;
const EXIT_UNSTABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "mcsched", version, about = "Delay-based multi-channel scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one policy at one system size.
    Run(RunArgs),
    /// Run a configured grid of policies, sizes and seeds.
    Sweep(SweepArgs),
    /// Tabulate the rate-function upper bound.
    Bound(BoundArgs),
    /// Run randomized property suites.
    Verify(VerifyArgs),
    /// Fit rate functions to a result file.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    slots: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    b: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the output file's extension, else CSV.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Use the 10^7-slot horizon.
    #[arg(long)]
    paper_scale: bool,
    /// Matching kernel for dwm, dwmn and hybrid: vertex_greedy or potentials.
    #[arg(long, value_parser = parse_route)]
    route: Option<MatchingRoute>,
}

fn parse_route(s: &str) -> Result<MatchingRoute, String> {
    match s {
        "vertex_greedy" | "greedy" => Ok(MatchingRoute::VertexGreedy),
        "potentials" | "hungarian" => Ok(MatchingRoute::Potentials),
        _ => Err(format!("unknown route `{s}` (expected vertex_greedy|potentials)")),
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "dssg")]
    policy: PolicyKind,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Validate schedules and check the fluid max-weight condition.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    policy: Option<Vec<PolicyKind>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep complete cells from an interrupted run.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, default_value_t = 0.75)]
    q: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    burst: u32,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8")]
    b: Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run; all when omitted.
    #[arg(long, value_enum, value_delimiter = ',')]
    suite: Vec<Suite>,
    /// Trials per suite; suite defaults when omitted.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Model for the path-based suites.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result file from `run` or `sweep`.
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, HarnessError> {
    match cmd {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Bound(a) => bound(a),
        Command::Verify(a) => verify(a),
        Command::Report(a) => report(a),
    }
}

fn base_config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if c.paper_scale {
        cfg.horizon = FULL_HORIZON;
    }
    if let Some(s) = c.slots {
        cfg.horizon = s;
    }
    if c.warmup.is_some() {
        cfg.warmup = c.warmup;
    }
    if let Some(b) = &c.b {
        cfg.b = b.clone();
    }
    if c.out.is_some() {
        cfg.output = c.out.clone();
    }
    if let Some(r) = c.route {
        cfg.matching_route = r;
    }
    Ok(cfg)
}

fn format_for(format: Option<Format>, out: Option<&PathBuf>) -> Format {
    format.unwrap_or_else(|| out.map(|p| Format::from_path(p)).unwrap_or_default())
}

fn print_records<T: Serialize>(rows: &[T], format: Format) -> Result<(), HarnessError> {
    write_records(rows, format, std::io::stdout().lock()).map_err(|e| HarnessError::Csv("<stdout>".into(), e))
}

fn run(a: RunArgs) -> Result<ExitCode, HarnessError> {
    let mut cfg = base_config(&a.common)?;
    cfg.policies = vec![a.policy];
    cfg.n_grid = vec![a.n];
    cfg.seeds = vec![a.seed];
    cfg.replications = 1;
    cfg.verify |= a.verify;
    let format = format_for(a.common.format, cfg.output.as_ref());
    let outcome = run_sweep(&cfg, format, false)?;
    if cfg.output.is_none() {
        print_records(&outcome.rows, format)?;
    }
    if let Some(f) = outcome.mwf_failures.first() {
        eprintln!("fluid max-weight check failed at slot {}: {}", f.slot, f.detail);
        return Ok(ExitCode::from(EXIT_VERIFY));
    }
    if outcome.unstable_rows() > 0 {
        eprintln!("{} at n={} exceeded {} queued packets; the system looks unstable", a.policy, a.n, cfg.packet_cap);
        return Ok(ExitCode::from(EXIT_UNSTABLE));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode, HarnessError> {
    let mut cfg = base_config(&a.common)?;
    if let Some(p) = a.policy {
        cfg.policies = p;
    }
    if let Some(n) = a.n {
        cfg.n_grid = n;
    }
    if let Some(s) = a.seed {
        cfg.seeds = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    cfg.verify |= a.verify;
    if a.resume && cfg.output.is_none() {
        return Err(HarnessError::Config("--resume needs an output file".into()));
    }
    let format = format_for(a.common.format, cfg.output.as_ref());
    let outcome = run_sweep(&cfg, format, a.resume)?;
    if cfg.output.is_none() {
        print_records(&outcome.rows, format)?;
    }
    if outcome.resumed_cells > 0 {
        eprintln!("resumed {} complete cell(s)", outcome.resumed_cells);
    }
    let unstable = outcome.unstable_rows();
    if unstable > 0 {
        eprintln!("warning: {unstable} row(s) flagged unstable");
    }
    if !outcome.mwf_failures.is_empty() {
        for f in outcome.mwf_failures.iter().take(5) {
            eprintln!("fluid max-weight check failed: n={} seed={} slot={}: {}", f.n, f.seed, f.slot, f.detail);
        }
        return Ok(ExitCode::from(EXIT_VERIFY));
    }
    Ok(ExitCode::SUCCESS)
}

fn bound(a: BoundArgs) -> Result<ExitCode, HarnessError> {
    let rows = bound_table(a.q, &ArrivalSpec::IidBernoulli { alpha: a.alpha, burst: a.burst }, &a.b)?;
    let format = format_for(a.format, a.out.as_ref());
    match &a.out {
        Some(p) => emit_records(&rows, format, p)?,
        None => print_records(&rows, format)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: VerifyArgs) -> Result<ExitCode, HarnessError> {
    let mut opts = VerifyOptions { trials: a.trials, seed: a.seed, ..Default::default() };
    if let Some(p) = &a.config {
        opts.model = ExperimentConfig::load(p)?.model;
    }
    let suites = if a.suite.is_empty() { Suite::ALL.to_vec() } else { a.suite };
    let mut ok = true;
    for s in suites {
        let rep = run_verify(s, &opts);
        println!("{rep}");
        ok &= rep.passed();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VERIFY) })
}

fn report(a: ReportArgs) -> Result<ExitCode, HarnessError> {
    let rows = read_rows(&a.input, Format::from_path(&a.input))?;
    let fits = summarize(&rows);
    let format = format_for(a.format, a.out.as_ref());
    match &a.out {
        Some(p) => emit_records(&fits, format, p)?,
        None => print_records(&fits, format)?,
    }
    Ok(ExitCode::SUCCESS)
}
