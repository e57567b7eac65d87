//! `gapseq`: run declarative experiments and query the engines directly.
//!
//! Exit codes: 0 when every verdict passes, 2 when a verdict fails, 1 on
//! any execution error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gapseq::coverage::{self, SumsetTable};
use gapseq::experiments::{self, ExperimentConfig, RunOptions, Severity};
use gapseq::modular_chain::{build_chain, empirical_equidistribution, SquareMatrix};
use gapseq::semigroup;
use gapseq::sequence::{generate, WeightSequence};
use gapseq::{DistSpec, GapDistribution};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Experiment(#[from] experiments::ExperimentError),
    #[error(transparent)]
    Dist(#[from] gapseq::distributions::DistributionError),
    #[error(transparent)]
    Sequence(#[from] gapseq::sequence::SequenceError),
    #[error(transparent)]
    Semigroup(#[from] semigroup::SemigroupError),
    #[error(transparent)]
    Chain(#[from] gapseq::modular_chain::ChainError),
    #[error(transparent)]
    Coverage(#[from] coverage::CoverageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(name = "gapseq", version, about = "Random gap processes and distinct-sum coverage")]
struct Cli {
    /// Worker thread cap for seed fans.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for reports, traces and CSV files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and summary lines on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run { config: PathBuf },
    /// Check a config and print its diagnostics.
    Validate { config: PathBuf },
    /// Frobenius number, stamp bounds and membership for a generator set.
    Semigroup(SemigroupArgs),
    /// The residue chain of a gap law mod M.
    Chain(ChainArgs),
    /// Coverage of a window by sums of m distinct weights.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct SemigroupArgs {
    /// Strictly increasing generators, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    gens: Vec<u64>,
    /// Report membership and a witness for one integer.
    #[arg(long)]
    x: Option<u64>,
    /// CSV membership table over LO..HI (inclusive).
    #[arg(long)]
    table: Option<String>,
}

#[derive(Args)]
struct ChainArgs {
    /// Gap law as JSON, or a path to a JSON file.
    #[arg(long)]
    dist: String,
    #[arg(long)]
    modulus: u64,
    /// Matrix power to print.
    #[arg(long, default_value_t = 1)]
    power: u64,
    /// Empirical conditional frequencies: k,N,trials.
    #[arg(long, value_delimiter = ',')]
    empirical: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CoverageArgs {
    /// Gap law as JSON, or a path to a JSON file.
    #[arg(long, required_unless_present = "from_dump")]
    dist: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "from_dump")]
    horizon: Option<u64>,
    /// Number of distinct weights per sum.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Inclusive window LO..HI.
    #[arg(long)]
    window: String,
    /// Use sums of any number of distinct weights instead of exactly m.
    #[arg(long)]
    distinct_sums: bool,
    /// Also apply Brown's criterion to the weight sequence.
    #[arg(long)]
    brown: bool,
    /// Write the generated sequence to this file.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Read the sequence from a dump instead of generating it.
    #[arg(long)]
    from_dump: Option<PathBuf>,
}

fn parse_range(s: &str) -> Result<(u64, u64), CliError> {
    let bad = || CliError::Usage(format!("expected LO..HI, got {s:?}"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo = lo.trim().parse().map_err(|_| bad())?;
    let hi = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_dist(arg: &str) -> Result<GapDistribution, CliError> {
    let text = if arg.trim_start().starts_with('{') { arg.to_string() } else { std::fs::read_to_string(arg)? };
    let spec: DistSpec = serde_json::from_str(&text)?;
    Ok(GapDistribution::from_spec(&spec)?)
}

/// `x` with 12 significant digits.
fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (11 - x.abs().log10().floor() as i32).clamp(0, 30) as usize;
    format!("{x:.decimals$}")
}

fn matrix_csv(m: &SquareMatrix) -> String {
    let mut s = String::new();
    for i in 0..m.size {
        let row: Vec<String> = m.row(i).iter().map(|&x| sig12(x)).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

struct Ctx {
    out: Option<PathBuf>,
    quiet: bool,
    threads: Option<usize>,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn out_path(&self, name: &str) -> Result<Option<PathBuf>, CliError> {
        match &self.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                Ok(Some(dir.join(name)))
            }
            None => Ok(None),
        }
    }
}

/// Returns whether every verdict passed.
fn cmd_run(ctx: &Ctx, path: &Path) -> Result<bool, CliError> {
    let mut config = ExperimentConfig::load(path)?;
    let stem = config.name.clone().unwrap_or_else(|| config.experiment.name().to_string());
    let trace = ctx.out_path(&format!("{stem}.trace.jsonl"))?;
    if config.output.report.is_none() {
        config.output.report = ctx.out_path(&format!("{stem}.report.json"))?;
    }
    for d in experiments::validate(&config) {
        ctx.note(d.to_string());
    }
    let opts = RunOptions { threads: ctx.threads, trace };
    let report = experiments::run_with(&config, &opts)?;
    if config.output.report.is_none() {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        serde_json::to_writer_pretty(&mut lock, &report)?;
        writeln!(lock)?;
    }
    let a = &report.aggregates;
    ctx.note(format!(
        "{stem}: {} ({}/{} seeds pass; {}) in {:.2}s",
        if report.verdict.pass { "PASS" } else { "FAIL" },
        a.passed,
        a.seeds,
        report.verdict.predicate,
        report.timing.wall_seconds
    ));
    Ok(report.verdict.pass)
}

fn cmd_validate(path: &Path) -> Result<bool, CliError> {
    let config = ExperimentConfig::load(path)?;
    let diags = experiments::validate(&config);
    if diags.is_empty() {
        println!("ok");
    }
    for d in &diags {
        println!("{d}");
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(CliError::Usage(format!("{} is invalid", path.display())));
    }
    Ok(true)
}

fn cmd_semigroup(ctx: &Ctx, args: &SemigroupArgs) -> Result<bool, CliError> {
    let desc = semigroup::build(&args.gens)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "generators: {:?}", desc.generators)?;
    writeln!(out, "d: {}", desc.d)?;
    writeln!(out, "frobenius_reduced: {}", desc.frobenius_reduced)?;
    if desc.d == 1 {
        writeln!(out, "frobenius: {}", desc.frobenius_reduced)?;
    }
    let (n0, cert) = semigroup::stamp_bound_n0(&desc.reduced)?;
    let cert: Vec<String> = cert.iter().map(|c| c.to_string()).collect();
    writeln!(out, "bezout: [{}]", cert.join(", "))?;
    writeln!(out, "n0: {n0}")?;
    writeln!(out, "n0_prime: {}", semigroup::stamp_bound_n0_prime(&args.gens)?)?;
    if let Some(x) = args.x {
        writeln!(out, "member({x}): {}", desc.member(x))?;
        if let Some(c) = desc.representation(x) {
            writeln!(out, "representation({x}): {c:?}")?;
        }
    }
    if let Some(range) = &args.table {
        let (lo, hi) = parse_range(range)?;
        let mut csv = String::from("x,member,representation\n");
        for x in lo..=hi {
            let rep = desc
                .representation(x)
                .map(|c| c.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" "))
                .unwrap_or_default();
            csv.push_str(&format!("{x},{},{rep}\n", desc.member(x)));
        }
        match ctx.out_path("semigroup.csv")? {
            Some(p) => std::fs::write(&p, csv)?,
            None => out.write_all(csv.as_bytes())?,
        }
    }
    Ok(true)
}

fn cmd_chain(ctx: &Ctx, args: &ChainArgs) -> Result<bool, CliError> {
    let dist = parse_dist(&args.dist)?;
    let chain = build_chain(&dist, args.modulus)?;
    ctx.note(format!(
        "modulus {}: regular_at={:?} stochasticity_error={:e} mass_truncation_error={:e}",
        chain.modulus,
        chain.is_regular(),
        chain.stochasticity_error(),
        chain.mass_truncation_error
    ));
    let power = chain.power_rows(args.power)?;
    let mut text = matrix_csv(&power);
    if let Some(e) = &args.empirical {
        if e.len() != 3 {
            return Err(CliError::Usage("--empirical expects k,N,trials".into()));
        }
        let table = empirical_equidistribution(&dist, args.modulus, e[0], e[1], e[2], args.seed)?;
        for w in &table.warnings {
            ctx.note(format!("warning: {w}"));
        }
        ctx.note(format!("empirical max |freq - 1/M| = {}", sig12(table.max_deviation())));
        let mut emp = String::new();
        for row in &table.frequencies {
            let cells: Vec<String> = row.iter().map(|&x| sig12(x)).collect();
            emp.push_str(&cells.join(","));
            emp.push('\n');
        }
        match ctx.out_path("empirical.csv")? {
            Some(p) => std::fs::write(p, emp)?,
            None => {
                text.push('\n');
                text.push_str(&emp);
            }
        }
    }
    match ctx.out_path("chain.csv")? {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(true)
}

fn cmd_coverage(ctx: &Ctx, args: &CoverageArgs) -> Result<bool, CliError> {
    let seq = match &args.from_dump {
        Some(p) => WeightSequence::read_dump(BufReader::new(File::open(p)?))?,
        None => {
            let dist = parse_dist(args.dist.as_deref().expect("clap enforces --dist"))?;
            generate(&dist, args.seed, args.horizon.expect("clap enforces --horizon"))?
        }
    };
    if let Some(p) = &args.dump {
        let mut w = BufWriter::new(File::create(p)?);
        seq.write_dump(&mut w)?;
        w.flush()?;
    }
    let window = parse_range(&args.window)?;
    let horizon = seq.horizon;
    let set = if args.distinct_sums {
        coverage::build_distinct_sums(&seq.weights, horizon)?
    } else {
        SumsetTable::build(&seq.weights, args.m, horizon)?.layer(args.m)?.clone()
    };
    let rep = coverage::report(&set, window)?;
    let brown = if args.brown { Some(coverage::brown_criterion(&seq.weights)?) } else { None };
    let doc = json!({
        "seed": seq.seed,
        "dist_fingerprint": seq.dist_fingerprint,
        "horizon": horizon,
        "weights": seq.len(),
        "mode": if args.distinct_sums { "distinct_sums".to_string() } else { format!("m={}", args.m) },
        "report": rep,
        "max_uncovered": rep.max_uncovered(),
        "brown": brown,
    });
    if let Some(p) = ctx.out_path("uncovered.csv")? {
        let mut csv = String::from("uncovered\n");
        for x in &rep.uncovered {
            csv.push_str(&format!("{x}\n"));
        }
        std::fs::write(p, csv)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are execution errors; exit code 2 is reserved for failed verdicts.
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    let ctx = Ctx { out: cli.out.clone(), quiet: cli.quiet, threads: cli.threads };
    let result = match &cli.command {
        Command::Run { config } => cmd_run(&ctx, config),
        Command::Validate { config } => cmd_validate(config),
        Command::Semigroup(a) => cmd_semigroup(&ctx, a),
        Command::Chain(a) => cmd_chain(&ctx, a),
        Command::Coverage(a) => cmd_coverage(&ctx, a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
