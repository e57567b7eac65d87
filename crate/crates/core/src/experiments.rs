//! Declarative experiments: a JSON config names one experiment kind, a gap
//! law and a seed fan; [`run`] executes the per-seed pipeline (possibly in
//! parallel), folds the results into aggregates and applies the kind's
//! acceptance predicate.
//!
//! Per-seed results depend only on `(config, seed)`. Timing is reported
//! separately and is the only part of a report that varies between runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{self, SumsetTable};
use crate::distributions::{AdmissibilityReport, DistSpec, GapDistribution, GapKind};
use crate::modular_chain::{build_chain, empirical_equidistribution};
use crate::rng::{derive_seed, substream};
use crate::semigroup;
use crate::sequence::{generate, sample_vault};
use crate::stats::{chi_square_gof, chi_square_sf};

pub const REPORT_SCHEMA: &str = "gapseq-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Density,
    Equidistribution,
    MCompleteness,
    AsymptoticCompleteness,
    Counterexample,
    PrevaultIndependence,
    SemigroupTable,
    DifferenceSet,
    HalfMoment,
    MaxGap,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Density => "density",
            ExperimentKind::Equidistribution => "equidistribution",
            ExperimentKind::MCompleteness => "m_completeness",
            ExperimentKind::AsymptoticCompleteness => "asymptotic_completeness",
            ExperimentKind::Counterexample => "counterexample",
            ExperimentKind::PrevaultIndependence => "prevault_independence",
            ExperimentKind::SemigroupTable => "semigroup_table",
            ExperimentKind::DifferenceSet => "difference_set",
            ExperimentKind::HalfMoment => "half_moment",
            ExperimentKind::MaxGap => "max_gap",
        }
    }
}

/// Either an explicit seed list or `count` seeds derived from `base_seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Fan { base_seed: u64, count: u64 },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Fan { base_seed: 0, count: 1 }
    }
}

impl SeedSpec {
    /// The stream seed of every fan member, in index order.
    pub fn expand(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Fan { base_seed, count } => (0..*count).map(|i| derive_seed(*base_seed, i)).collect(),
        }
    }
}

/// Acceptance thresholds. Defaults are the desk-scale acceptance values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Per-seed bound on `|density - 1/E[X]|`.
    pub density_tolerance: f64,
    /// Bound on the mean deviation across seeds.
    pub density_mean_tolerance: f64,
    /// Bound on `|A^power - 1/M|`.
    pub analytic_tolerance: f64,
    /// Bound on `|conditional frequency - 1/M|`.
    pub empirical_tolerance: f64,
    /// Fraction of seeds that must pass; per-kind default when absent
    /// (0.9 for coverage kinds, 0.95 for prevault, 1.0 otherwise).
    pub min_pass_fraction: Option<f64>,
    /// `threshold_n0` must lie strictly below this; defaults to the window start.
    pub n0_below: Option<u64>,
    /// Counterexample seeds need an uncovered integer above this.
    pub min_uncovered: u64,
    pub alpha: f64,
    /// Bound on `W_n / n²`.
    pub max_scaling_ratio: f64,
    /// Diagnostics are checked at checkpoints `n >=` this.
    pub checkpoint_from: usize,
    /// Bound on `running max gap / ln n`.
    pub max_gap_envelope: f64,
    /// Soft saturation target for difference sets; reported, never gating.
    pub saturation_target: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            density_tolerance: 0.01,
            density_mean_tolerance: 0.005,
            analytic_tolerance: 1e-9,
            empirical_tolerance: 0.02,
            min_pass_fraction: None,
            n0_below: None,
            min_uncovered: 10_000,
            alpha: 0.01,
            max_scaling_ratio: 0.01,
            checkpoint_from: 1 << 10,
            max_gap_envelope: 1.5,
            saturation_target: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// Final JSON report.
    pub report: Option<PathBuf>,
    /// JSON-lines trace, one line per finished seed.
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistSpec>,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(u64, u64)>,
    /// Equidistribution: steps before the conditioning residue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    /// Equidistribution: steps after it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    /// Equidistribution: analytic matrix power (default 200).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vault_n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
    /// Prevault: sequences per meta-trial (one meta-trial per seed).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequences: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<u64>>,
    /// Difference sets: largest difference examined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff_bound: Option<u64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputPaths,
    /// Upper bound on worker threads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.iter().filter(|d| d.severity == Severity::Error).map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    ConfigInvalid(Vec<Diagnostic>),
    #[error("seed {seed} (index {index}): {message}")]
    Seed { index: usize, seed: u64, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 prefix of the config with output paths and parallelism
    /// cleared, so it identifies the computation only.
    pub fn fingerprint(&self) -> String {
        let mut core = self.clone();
        core.output = OutputPaths::default();
        core.parallelism = None;
        let json = serde_json::to_vec(&core).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    fn min_pass_fraction(&self) -> f64 {
        self.thresholds.min_pass_fraction.unwrap_or(match self.experiment {
            ExperimentKind::MCompleteness | ExperimentKind::AsymptoticCompleteness | ExperimentKind::Counterexample => 0.9,
            ExperimentKind::PrevaultIndependence => 0.95,
            _ => 1.0,
        })
    }
}

struct Checker<'a> {
    config: &'a ExperimentConfig,
    out: Vec<Diagnostic>,
}

impl Checker<'_> {
    fn push(&mut self, severity: Severity, field: &str, message: impl Into<String>) {
        self.out.push(Diagnostic { severity, field: field.into(), message: message.into() });
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.push(Severity::Error, field, message);
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.push(Severity::Warning, field, message);
    }

    fn require<T>(&mut self, field: &str, value: &Option<T>) -> bool {
        if value.is_none() {
            let kind = self.config.experiment.name();
            self.error(field, format!("required for {kind}"));
            return false;
        }
        true
    }

    fn positive(&mut self, field: &str, value: Option<u64>) {
        if value == Some(0) {
            self.error(field, "must be at least 1");
        }
    }
}

/// Schema and semantic checks. Errors make [`run`] refuse the config;
/// warnings mark runs outside the regime the theory covers.
pub fn validate(config: &ExperimentConfig) -> Vec<Diagnostic> {
    use ExperimentKind::*;
    let mut c = Checker { config, out: Vec::new() };
    let kind = config.experiment;

    let seeds = config.seeds.expand();
    if seeds.is_empty() {
        c.error("seeds", "seed fan is empty");
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        c.error("seeds", format!("duplicate seed {}", w[0]));
    }
    if config.parallelism == Some(0) {
        c.error("parallelism", "must be at least 1");
    }

    let dist = if kind == SemigroupTable {
        None
    } else if c.require("dist", &config.dist) {
        match GapDistribution::from_spec(config.dist.as_ref().unwrap()) {
            Ok(d) => Some(d),
            Err(e) => {
                c.error("dist", e.to_string());
                None
            }
        }
    } else {
        None
    };

    let needs_horizon = !matches!(kind, Equidistribution | PrevaultIndependence | SemigroupTable);
    if needs_horizon && c.require("horizon", &config.horizon) {
        c.positive("horizon", config.horizon);
    }

    let window_kinds = matches!(kind, MCompleteness | AsymptoticCompleteness | Counterexample);
    if window_kinds && c.require("window", &config.window) {
        let (lo, hi) = config.window.unwrap();
        if lo == 0 || lo > hi {
            c.error("window", format!("[{lo}, {hi}] must satisfy 1 <= lo <= hi"));
        }
        if let Some(l) = config.horizon {
            if hi > l {
                c.error("window", format!("upper end {hi} exceeds horizon {l}"));
            }
        }
    }
    if matches!(kind, MCompleteness | Counterexample) && c.require("m", &config.m) && config.m == Some(0) {
        c.error("m", "must be at least 1");
    }

    match kind {
        Density => {
            if let Some(d) = &dist {
                if d.mean().is_none() {
                    c.error("dist", "density needs a finite mean");
                }
            }
        }
        Equidistribution => {
            if c.require("modulus", &config.modulus) && config.modulus.unwrap() < 2 {
                c.error("modulus", "must be at least 2");
            }
            c.require("k", &config.k);
            if c.require("steps", &config.steps) {
                c.positive("steps", config.steps);
            }
            if c.require("trials", &config.trials) {
                c.positive("trials", config.trials);
            }
            c.positive("power", config.power);
            if let Some(d) = &dist {
                match d.support_gcd() {
                    Ok(1) => {}
                    Ok(g) => c.warn("dist", format!("support gcd is {g}; the chain is not regular and 1/M is not expected")),
                    Err(e) => c.warn("dist", e.to_string()),
                }
            }
        }
        MCompleteness => {
            if let Some(d) = &dist {
                let adm = d.admissibility();
                if !adm.m_completeness_applies {
                    let detail = match d.kind() {
                        GapKind::Geometric { p } => {
                            format!("geometric p = {p} is below the golden-ratio threshold (sqrt(5) - 1) / 2")
                        }
                        _ => format!(
                            "MGF radius {} does not exceed twice the star ratio ({})",
                            adm.mgf_radius, adm.threshold
                        ),
                    };
                    c.warn("dist", format!("{detail}; the run is exploratory"));
                }
            }
        }
        AsymptoticCompleteness => {
            if let Some(d) = &dist {
                if d.admissibility().half_moment_finite != Some(true) {
                    c.warn("dist", "E[X^(1/2)] is not known to be finite; the run is exploratory");
                }
            }
        }
        Counterexample => {
            if let Some(d) = &dist {
                if !matches!(d.kind(), GapKind::PowerOfTwoCounterexample { .. }) {
                    c.warn("dist", "counterexample runs normally use pow2_counterexample");
                }
            }
        }
        PrevaultIndependence => {
            if let Some(d) = &dist {
                if !matches!(d.kind(), GapKind::Finite { .. }) {
                    c.error("dist", "prevault independence needs a finite pmf");
                }
            }
            if c.require("vault_n", &config.vault_n) {
                c.positive("vault_n", config.vault_n);
            }
            if c.require("b", &config.b) && config.b == Some(0) {
                c.error("b", "must be at least 1");
            }
            if c.require("sequences", &config.sequences) {
                c.positive("sequences", config.sequences);
            }
            if config.vault_n.is_some_and(|n| n < 1000) || config.b.is_some_and(|b| b > 4) {
                c.warn("vault_n", "outside the tested regime n >= 1000, b <= 4");
            }
            if let (Some(d), Some(b)) = (&dist, config.b) {
                let cells = (d.support_values().len() as f64).powi(b as i32);
                if cells > 1e6 {
                    c.error("b", format!("{cells} contingency cells is too many"));
                }
            }
        }
        SemigroupTable => {
            if c.require("generators", &config.generators) {
                if let Err(e) = semigroup::build(config.generators.as_ref().unwrap()) {
                    c.error("generators", e.to_string());
                }
            }
            if let Some((lo, hi)) = config.window {
                if lo > hi {
                    c.error("window", format!("[{lo}, {hi}] is empty"));
                }
            }
        }
        DifferenceSet => {
            if c.require("diff_bound", &config.diff_bound) {
                let k = config.diff_bound.unwrap();
                if let Some(l) = config.horizon {
                    if k > l / 2 {
                        c.error("diff_bound", format!("{k} exceeds half the horizon {l}"));
                    }
                }
            }
        }
        HalfMoment => {
            if let Some(d) = &dist {
                if d.admissibility().half_moment_finite != Some(true) {
                    c.warn("dist", "E[X^(1/2)] is not known to be finite; W_n / n² need not vanish");
                }
            }
        }
        MaxGap => {
            if let Some(d) = &dist {
                if d.mgf_radius() <= 0.0 {
                    c.warn("dist", "heavy tail: no logarithmic envelope is expected");
                }
            }
        }
    }
    if let Some(f) = config.thresholds.min_pass_fraction {
        if !(0.0..=1.0).contains(&f) {
            c.error("thresholds.min_pass_fraction", "must lie in [0, 1]");
        }
    }
    c.out
}

/// Outcome of one seed's pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub index: usize,
    pub seed: u64,
    pub pass: bool,
    /// The kind's headline number; `None` when it does not exist for this
    /// seed (e.g. no threshold found).
    pub metric: Option<f64>,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub seeds: usize,
    pub passed: usize,
    pub pass_fraction: f64,
    pub metric_mean: Option<f64>,
    pub metric_min: Option<f64>,
    pub metric_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub wall_seconds: f64,
    pub seeds_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: String,
    pub config: ExperimentConfig,
    pub config_fingerprint: String,
    pub dist_fingerprint: Option<String>,
    pub admissibility: Option<AdmissibilityReport>,
    pub diagnostics: Vec<Diagnostic>,
    /// Seed-independent analytic results (equidistribution only).
    pub analytic: Option<Value>,
    pub per_seed: Vec<SeedResult>,
    pub aggregates: Aggregates,
    pub verdict: Verdict,
    pub timing: Timing,
}

impl ExperimentReport {
    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }
}

/// Mean, min and max of the metrics, summed in sorted order so the result
/// does not depend on seed order.
pub fn aggregate(results: &[SeedResult]) -> Aggregates {
    let mut metrics: Vec<f64> = results.iter().filter_map(|r| r.metric).collect();
    metrics.sort_by(f64::total_cmp);
    let passed = results.iter().filter(|r| r.pass).count();
    let mean = (!metrics.is_empty()).then(|| metrics.iter().sum::<f64>() / metrics.len() as f64);
    Aggregates {
        seeds: results.len(),
        passed,
        pass_fraction: if results.is_empty() { 0.0 } else { passed as f64 / results.len() as f64 },
        metric_mean: mean,
        metric_min: metrics.first().copied(),
        metric_max: metrics.last().copied(),
    }
}

/// The kind's acceptance predicate over per-seed results.
pub fn verdict(config: &ExperimentConfig, analytic: Option<&Value>, results: &[SeedResult]) -> Verdict {
    let agg = aggregate(results);
    let t = &config.thresholds;
    let need = config.min_pass_fraction();
    let fraction_ok = !results.is_empty() && agg.pass_fraction >= need;
    let (pass, predicate) = match config.experiment {
        ExperimentKind::Density => (
            fraction_ok && agg.metric_mean.is_some_and(|m| m < t.density_mean_tolerance),
            format!(
                "each |density - 1/E[X]| < {} and mean < {}",
                t.density_tolerance, t.density_mean_tolerance
            ),
        ),
        ExperimentKind::Equidistribution => {
            let analytic_ok = analytic.and_then(|a| a["pass"].as_bool()).unwrap_or(false);
            (
                analytic_ok && fraction_ok,
                format!(
                    "max |A^N - 1/M| < {:e} and every conditional frequency within {} of 1/M",
                    t.analytic_tolerance, t.empirical_tolerance
                ),
            )
        }
        ExperimentKind::MCompleteness | ExperimentKind::AsymptoticCompleteness => (
            fraction_ok,
            format!("threshold_n0 exists and is below the bound in at least {need} of seeds"),
        ),
        ExperimentKind::Counterexample => (
            fraction_ok,
            format!("an uncovered integer > {} in the window in at least {need} of seeds", t.min_uncovered),
        ),
        ExperimentKind::PrevaultIndependence => (
            fraction_ok,
            format!("chi-square not rejected at alpha = {} in at least {need} of meta-trials", t.alpha),
        ),
        ExperimentKind::SemigroupTable => (fraction_ok, "stamp bounds verified by witnesses".to_string()),
        ExperimentKind::DifferenceSet => {
            (fraction_ok, "every realized difference lies in the support monoid".to_string())
        }
        ExperimentKind::HalfMoment => (
            fraction_ok,
            format!("W_n / n² < {} at every checkpoint n >= {}", t.max_scaling_ratio, t.checkpoint_from),
        ),
        ExperimentKind::MaxGap => (
            fraction_ok,
            format!("max gap / ln n <= {} at every checkpoint n >= {}", t.max_gap_envelope, t.checkpoint_from),
        ),
    };
    Verdict { pass, predicate }
}

/// Validated inputs shared by every seed.
pub struct Prepared {
    config: ExperimentConfig,
    dist: Option<GapDistribution>,
}

impl Prepared {
    pub fn new(config: &ExperimentConfig) -> Result<(Self, Vec<Diagnostic>), ExperimentError> {
        let diagnostics = validate(config);
        if diagnostics.iter().any(|d| d.severity == Severity::Error) {
            return Err(ExperimentError::ConfigInvalid(diagnostics));
        }
        let dist = match &config.dist {
            Some(spec) if config.experiment != ExperimentKind::SemigroupTable => {
                Some(GapDistribution::from_spec(spec).expect("validated"))
            }
            _ => None,
        };
        Ok((Prepared { config: config.clone(), dist }, diagnostics))
    }

    fn dist(&self) -> &GapDistribution {
        self.dist.as_ref().expect("validated: dist present")
    }

    /// The pipeline of one seed.
    pub fn run_seed(&self, index: usize, seed: u64) -> Result<SeedResult, ExperimentError> {
        let fail = |message: String| ExperimentError::Seed { index, seed, message };
        let cfg = &self.config;
        let t = &cfg.thresholds;
        let (pass, metric, details) = match cfg.experiment {
            ExperimentKind::Density => {
                let l = cfg.horizon.unwrap();
                let seq = generate(self.dist(), seed, l).map_err(|e| fail(e.to_string()))?;
                let density = seq.density(l).map_err(|e| fail(e.to_string()))?;
                let expected = 1.0 / self.dist().mean().unwrap();
                let dev = (density - expected).abs();
                (dev < t.density_tolerance, Some(dev), json!({"density": density, "expected": expected, "deviation": dev, "weights": seq.len()}))
            }
            ExperimentKind::Equidistribution => {
                let m = cfg.modulus.unwrap();
                let (k, n, trials) = (cfg.k.unwrap(), cfg.steps.unwrap(), cfg.trials.unwrap());
                let table = empirical_equidistribution(self.dist(), m, k, n, trials, seed).map_err(|e| fail(e.to_string()))?;
                let dev = table.max_deviation();
                let low_rows = table.low_sample_rows.iter().filter(|&&l| l).count();
                let chain = build_chain(self.dist(), m).map_err(|e| fail(e.to_string()))?;
                let power = chain.power_rows(n).map_err(|e| fail(e.to_string()))?;
                let sigma = table.max_sigma_deviation(&power);
                (
                    dev < t.empirical_tolerance && low_rows == 0,
                    Some(dev),
                    json!({
                        "max_deviation": dev,
                        "max_sigma_vs_power": sigma,
                        "low_sample_rows": low_rows,
                        "row_events": table.row_events,
                        "frequencies": table.frequencies,
                        "warnings": table.warnings,
                    }),
                )
            }
            ExperimentKind::MCompleteness | ExperimentKind::AsymptoticCompleteness => self.completeness(seed).map_err(fail)?,
            ExperimentKind::Counterexample => self.counterexample(seed).map_err(fail)?,
            ExperimentKind::PrevaultIndependence => self.prevault(seed).map_err(fail)?,
            ExperimentKind::SemigroupTable => self.semigroup_table().map_err(fail)?,
            ExperimentKind::DifferenceSet => {
                let l = cfg.horizon.unwrap();
                let k = cfg.diff_bound.unwrap();
                let seq = generate(self.dist(), seed, l).map_err(|e| fail(e.to_string()))?;
                let gens: Vec<u64> = (1..=k.max(1)).filter(|&v| self.dist().pmf(v) > 0.0).collect();
                if gens.is_empty() {
                    return Err(fail(format!("no support value at or below {k}")));
                }
                let desc = semigroup::build(&gens).map_err(|e| fail(e.to_string()))?;
                let rep = coverage::difference_set_check(&seq, &desc, k).map_err(|e| fail(e.to_string()))?;
                let saturated = rep.saturation_fraction >= t.saturation_target;
                (
                    rep.containment_holds,
                    Some(rep.saturation_fraction),
                    json!({
                        "containment_holds": rep.containment_holds,
                        "violations": rep.violations,
                        "realized_count": rep.realized_count,
                        "member_count": rep.member_count,
                        "saturation_fraction": rep.saturation_fraction,
                        "saturation_target_met": saturated,
                        "monoid_gcd": desc.d,
                    }),
                )
            }
            ExperimentKind::HalfMoment => {
                let seq = generate(self.dist(), seed, cfg.horizon.unwrap()).map_err(|e| fail(e.to_string()))?;
                let points: Vec<(usize, f64)> = seq
                    .partial_sum_scaling()
                    .map_err(|e| fail(e.to_string()))?
                    .into_iter()
                    .filter(|&(n, _)| n >= t.checkpoint_from)
                    .collect();
                let worst = points.iter().map(|p| p.1).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))));
                let pass = worst.is_some_and(|w| w < t.max_scaling_ratio);
                (pass, worst, json!({"checkpoints": points, "weights": seq.len()}))
            }
            ExperimentKind::MaxGap => {
                let seq = generate(self.dist(), seed, cfg.horizon.unwrap()).map_err(|e| fail(e.to_string()))?;
                let points: Vec<(usize, u64, f64)> = seq
                    .max_gap_profile()
                    .map_err(|e| fail(e.to_string()))?
                    .into_iter()
                    .filter(|&(n, _)| n >= t.checkpoint_from)
                    .map(|(n, g)| (n, g, g as f64 / (n as f64).ln()))
                    .collect();
                let worst = points.iter().map(|p| p.2).fold(None, |a: Option<f64>, r| Some(a.map_or(r, |a| a.max(r))));
                let pass = worst.is_some_and(|w| w <= t.max_gap_envelope);
                (pass, worst, json!({"checkpoints": points, "weights": seq.len()}))
            }
        };
        Ok(SeedResult { index, seed, pass, metric, details })
    }

    /// Coverage is computed on `W / d` for the realized gap gcd `d`, so only
    /// multiples of `d` are examined.
    fn completeness(&self, seed: u64) -> Result<(bool, Option<f64>, Value), String> {
        let cfg = &self.config;
        let l = cfg.horizon.unwrap();
        let (lo, hi) = cfg.window.unwrap();
        let seq = generate(self.dist(), seed, l).map_err(|e| e.to_string())?;
        let d = seq.gaps.iter().copied().fold(0, crate::gcd).max(1);
        let scaled: Vec<u64> = seq.weights.iter().map(|w| w / d).collect();
        let (l_d, lo_d, hi_d) = (l / d, lo.div_ceil(d), hi / d);
        let set = match cfg.experiment {
            ExperimentKind::MCompleteness => {
                let m = cfg.m.unwrap();
                let table = SumsetTable::build(&scaled, m, l_d).map_err(|e| e.to_string())?;
                table.layer(m).map_err(|e| e.to_string())?.clone()
            }
            _ => coverage::build_distinct_sums(&scaled, l_d).map_err(|e| e.to_string())?,
        };
        let full = coverage::report(&set, (1, hi_d)).map_err(|e| e.to_string())?;
        let in_window = if lo_d <= hi_d { Some(coverage::report(&set, (lo_d, hi_d)).map_err(|e| e.to_string())?) } else { None };
        let bound = cfg.thresholds.n0_below.unwrap_or(lo);
        let n0 = full.threshold_n0.map(|t| t * d);
        let pass = n0.is_some_and(|t| t < bound);
        let window_uncovered = in_window.as_ref().map_or(0, |r| r.uncovered_total);
        let listed: Vec<u64> = full.uncovered.iter().map(|x| x * d).collect();
        Ok((
            pass,
            n0.map(|t| t as f64),
            json!({
                "threshold_n0": n0,
                "n0_bound": bound,
                "gcd": d,
                "uncovered_total": full.uncovered_total,
                "uncovered_in_window": window_uncovered,
                "uncovered": listed,
                "uncovered_truncated": full.uncovered_truncated(),
                "weights": seq.len(),
            }),
        ))
    }

    fn counterexample(&self, seed: u64) -> Result<(bool, Option<f64>, Value), String> {
        let cfg = &self.config;
        let (l, m) = (cfg.horizon.unwrap(), cfg.m.unwrap());
        let window = cfg.window.unwrap();
        let seq = generate(self.dist(), seed, l).map_err(|e| e.to_string())?;
        let table = SumsetTable::build(&seq.weights, m, l).map_err(|e| e.to_string())?;
        let rep = table.report(m, window).map_err(|e| e.to_string())?;
        let top = rep.max_uncovered();
        let pass = top.is_some_and(|x| x > cfg.thresholds.min_uncovered);
        Ok((
            pass,
            top.map(|x| x as f64),
            json!({
                "max_uncovered": top,
                "uncovered_total": rep.uncovered_total,
                "covered_count": rep.covered_count,
                "threshold_n0": rep.threshold_n0,
                "weights": seq.len(),
                "largest_weight": seq.weights.last(),
            }),
        ))
    }

    /// One meta-trial: `sequences` independent vault records on sub-streams
    /// of `seed`, tested against the product law of `b` gaps.
    fn prevault(&self, seed: u64) -> Result<(bool, Option<f64>, Value), String> {
        let cfg = &self.config;
        let (n, b, count) = (cfg.vault_n.unwrap(), cfg.b.unwrap(), cfg.sequences.unwrap());
        let dist = self.dist();
        let values = dist.support_values();
        let s = values.len();
        let cells = s.pow(b as u32);
        let mut probs = vec![1.0; cells];
        for (cell, p) in probs.iter_mut().enumerate() {
            let mut c = cell;
            for _ in 0..b {
                *p *= dist.pmf(values[c % s]);
                c /= s;
            }
        }
        let mut observed = vec![0u64; cells];
        for i in 0..count {
            let mut rng = substream(seed, i);
            let rec = sample_vault(dist, &mut rng, n, b).map_err(|e| e.to_string())?;
            let mut cell = 0;
            for &g in rec.prevault_gaps.iter().rev() {
                cell = cell * s + values.binary_search(&g).map_err(|_| format!("gap {g} outside support"))?;
            }
            observed[cell] += 1;
        }
        // Cell index: prevault_gaps[0] is the least significant digit.
        let (stat, df) = chi_square_gof(&observed, &probs);
        let p = chi_square_sf(stat, df);
        Ok((p >= cfg.thresholds.alpha, Some(p), json!({"chi_square": stat, "df": df, "p_value": p, "counts": observed})))
    }

    fn semigroup_table(&self) -> Result<(bool, Option<f64>, Value), String> {
        let gens = self.config.generators.as_ref().unwrap();
        let desc = semigroup::build(gens).map_err(|e| e.to_string())?;
        let s1 = desc.reduced[0];
        let (n0, cert) = semigroup::stamp_bound_n0(&desc.reduced).map_err(|e| e.to_string())?;
        let n0p = semigroup::stamp_bound_n0_prime(gens).map_err(|e| e.to_string())?;
        let n0_ok = (n0..=n0 + 2 * s1).all(|x| desc.member(x * desc.d));
        let n0p_ok = (n0p..=n0p + 2 * s1).all(|x| {
            desc.positive_representation(x * desc.d).is_some_and(|c| {
                c.iter().all(|&a| a >= 1) && c.iter().zip(gens).map(|(a, s)| a * s).sum::<u64>() == x * desc.d
            })
        });
        let rows: Vec<Value> = self
            .config
            .window
            .map(|(lo, hi)| {
                (lo..=hi)
                    .map(|x| json!({"x": x, "member": desc.member(x), "representation": desc.representation(x)}))
                    .collect()
            })
            .unwrap_or_default();
        let cert: Vec<String> = cert.iter().map(|c| c.to_string()).collect();
        Ok((
            n0_ok && n0p_ok,
            Some(desc.frobenius_reduced as f64),
            json!({
                "d": desc.d,
                "reduced": desc.reduced,
                "frobenius_reduced": desc.frobenius_reduced,
                "apery": desc.apery,
                "bezout": cert,
                "n0": n0,
                "n0_prime": n0p,
                "n0_verified": n0_ok,
                "n0_prime_verified": n0p_ok,
                "table": rows,
            }),
        ))
    }
}

/// Options that affect how, not what, a run computes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Thread cap from the command line; combined with the config's cap.
    pub threads: Option<usize>,
    /// Fallback trace path when the config names none.
    pub trace: Option<PathBuf>,
}

/// Runs `config` with default options.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    run_with(config, &RunOptions::default())
}

pub fn run_with(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentReport, ExperimentError> {
    let (prepared, diagnostics) = Prepared::new(config)?;
    let seeds: Vec<(usize, u64)> = match config.experiment {
        // Deterministic: one unit of work regardless of the fan.
        ExperimentKind::SemigroupTable => vec![(0, 0)],
        _ => config.seeds.expand().into_iter().enumerate().collect(),
    };
    let threads = [config.parallelism, opts.threads]
        .into_iter()
        .flatten()
        .min()
        .unwrap_or_else(rayon::current_num_threads)
        .clamp(1, seeds.len().max(1));
    let trace_path = config.output.trace.clone().or_else(|| opts.trace.clone());
    let trace = match &trace_path {
        Some(p) => Some(Mutex::new(BufWriter::new(File::create(p)?))),
        None => None,
    };

    let start = Instant::now();
    let analytic = match config.experiment {
        ExperimentKind::Equidistribution => Some(equidistribution_analytic(&prepared)?),
        _ => None,
    };
    let work = |&(index, seed): &(usize, u64)| -> Result<SeedResult, ExperimentError> {
        let result = prepared.run_seed(index, seed)?;
        if let Some(t) = &trace {
            let mut w = t.lock().expect("trace lock");
            serde_json::to_writer(&mut *w, &result)?;
            writeln!(w)?;
            w.flush()?;
        }
        Ok(result)
    };
    let per_seed: Vec<SeedResult> = if threads == 1 {
        seeds.iter().map(work).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| ExperimentError::Pool(e.to_string()))?;
        pool.install(|| seeds.par_iter().map(work).collect::<Result<_, _>>())?
    };
    let wall = start.elapsed().as_secs_f64();

    let aggregates = aggregate(&per_seed);
    let verdict = verdict(config, analytic.as_ref(), &per_seed);
    let report = ExperimentReport {
        schema: REPORT_SCHEMA.to_string(),
        config: config.clone(),
        config_fingerprint: config.fingerprint(),
        dist_fingerprint: prepared.dist.as_ref().map(|d| d.fingerprint()),
        admissibility: prepared.dist.as_ref().map(|d| d.admissibility()),
        diagnostics,
        analytic,
        per_seed,
        aggregates,
        verdict,
        timing: Timing {
            threads,
            wall_seconds: wall,
            seeds_per_second: if wall > 0.0 { seeds.len() as f64 / wall } else { 0.0 },
        },
    };
    if let Some(p) = &config.output.report {
        report.write(p)?;
    }
    Ok(report)
}

fn equidistribution_analytic(prepared: &Prepared) -> Result<Value, ExperimentError> {
    let cfg = &prepared.config;
    let m = cfg.modulus.unwrap();
    let power = cfg.power.unwrap_or(200);
    let fail = |e: crate::modular_chain::ChainError| ExperimentError::Seed { index: 0, seed: 0, message: e.to_string() };
    let chain = build_chain(prepared.dist(), m).map_err(fail)?;
    let a = chain.power_rows(power).map_err(fail)?;
    let dev = a.max_deviation_from(1.0 / m as f64);
    Ok(json!({
        "power": power,
        "max_deviation": dev,
        "regular_at": chain.is_regular(),
        "mass_truncation_error": chain.mass_truncation_error,
        "pass": dev < cfg.thresholds.analytic_tolerance,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(kind: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(r#"{{"experiment":"{kind}"{extra}}}"#)).unwrap()
    }

    fn errors(d: &[Diagnostic]) -> Vec<&Diagnostic> {
        d.iter().filter(|d| d.severity == Severity::Error).collect()
    }

    #[test]
    fn golden_ratio_warning() {
        let cfg = base(
            "m_completeness",
            r#","dist":{"kind":"geometric","p":0.5},"horizon":1000,"m":2,"window":[10,900]"#,
        );
        let d = validate(&cfg);
        assert!(errors(&d).is_empty(), "{d:?}");
        assert!(d.iter().any(|x| x.severity == Severity::Warning && x.message.contains("below the golden-ratio threshold")));

        let cfg = base(
            "m_completeness",
            r#","dist":{"kind":"geometric","p":0.8},"horizon":1000,"m":2,"window":[10,900]"#,
        );
        assert!(validate(&cfg).is_empty());
    }

    #[test]
    fn modulus_required_for_equidistribution() {
        let cfg = base("equidistribution", r#","dist":{"kind":"finite","pmf":[[2,0.5],[3,0.5]]},"k":1,"steps":5,"trials":10"#);
        let d = validate(&cfg);
        assert!(errors(&d).iter().any(|x| x.field == "modulus"), "{d:?}");
        assert!(matches!(run(&cfg), Err(ExperimentError::ConfigInvalid(_))));
    }

    #[test]
    fn short_pmf_is_an_error() {
        let cfg = base("density", r#","dist":{"kind":"finite","pmf":[[2,0.5],[3,0.4]]},"horizon":100"#);
        let d = validate(&cfg);
        assert!(errors(&d).iter().any(|x| x.field == "dist"), "{d:?}");
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let cfg = base("density", r#","dist":{"kind":"geometric","p":0.5},"horizon":100,"seeds":[1,2,1]"#);
        assert!(errors(&validate(&cfg)).iter().any(|x| x.field == "seeds"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"density","horizn":5}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment":"nope"}"#).is_err());
    }

    #[test]
    fn seed_fan_expansion() {
        let fan = SeedSpec::Fan { base_seed: 7, count: 3 };
        let seeds = fan.expand();
        assert_eq!(seeds.len(), 3);
        assert_eq!(seeds[1], derive_seed(7, 1));
        let parsed: SeedSpec = serde_json::from_str(r#"{"base_seed":7,"count":3}"#).unwrap();
        assert_eq!(parsed, fan);
        let parsed: SeedSpec = serde_json::from_str("[4,5]").unwrap();
        assert_eq!(parsed.expand(), vec![4, 5]);
    }

    #[test]
    fn fingerprint_ignores_plumbing() {
        let mut a = base("density", r#","dist":{"kind":"geometric","p":0.5},"horizon":100"#);
        let fp = a.fingerprint();
        a.parallelism = Some(3);
        a.output.report = Some("x.json".into());
        assert_eq!(a.fingerprint(), fp);
        a.horizon = Some(101);
        assert_ne!(a.fingerprint(), fp);
    }

    #[test]
    fn aggregates_are_order_free() {
        let r = |i: usize, m: f64| SeedResult { index: i, seed: i as u64, pass: m < 0.5, metric: Some(m), details: Value::Null };
        let a = vec![r(0, 0.1), r(1, 0.7), r(2, 1e-17), r(3, 0.3)];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(aggregate(&a), aggregate(&b));
        let agg = aggregate(&a);
        assert_eq!(agg.passed, 3);
        assert_eq!(agg.metric_max, Some(0.7));
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cfg = base(
            "m_completeness",
            r#","dist":{"kind":"geometric","p":0.8},"horizon":5000,"m":2,"window":[100,4000],"seeds":{"base_seed":3,"count":4}"#,
        );
        let serial = run_with(&cfg, &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
        let parallel = run_with(&cfg, &RunOptions { threads: Some(4), ..Default::default() }).unwrap();
        assert_eq!(serial.per_seed, parallel.per_seed);
        assert_eq!(serial.aggregates, parallel.aggregates);
        assert_eq!(serial.verdict, parallel.verdict);
    }

    #[test]
    fn replay_single_seed() {
        let cfg = base("density", r#","dist":{"kind":"finite","pmf":[[2,0.5],[3,0.5]]},"horizon":20000,"seeds":{"base_seed":1,"count":3}"#);
        let report = run(&cfg).unwrap();
        let (prep, _) = Prepared::new(&cfg).unwrap();
        let again = prep.run_seed(2, report.per_seed[2].seed).unwrap();
        assert_eq!(again, report.per_seed[2]);
        assert_eq!(report.schema, REPORT_SCHEMA);
    }

    #[test]
    fn semigroup_table_runs() {
        let cfg = base("semigroup_table", r#","generators":[5,6],"window":[0,20]"#);
        let report = run(&cfg).unwrap();
        assert!(report.verdict.pass);
        let d = &report.per_seed[0].details;
        assert_eq!(d["n0"], 25);
        assert_eq!(d["n0_prime"], 36);
        assert_eq!(d["frobenius_reduced"], 19);
        assert_eq!(d["table"][13]["member"], false);
    }

    #[test]
    fn trace_lines_match_results() {
        let dir = std::env::temp_dir().join(format!("gapseq-trace-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let trace = dir.join("t.jsonl");
        let cfg = base("max_gap", r#","dist":{"kind":"geometric","p":0.8},"horizon":20000,"seeds":[1,2,3]"#);
        let report = run_with(&cfg, &RunOptions { threads: Some(1), trace: Some(trace.clone()) }).unwrap();
        let lines: Vec<SeedResult> = std::fs::read_to_string(&trace)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines, report.per_seed);
        std::fs::remove_dir_all(dir).ok();
    }
}
