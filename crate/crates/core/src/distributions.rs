//! Gap distributions: exact pmfs, rejection-free samplers and the analytic
//! quantities that decide which asymptotic results apply to a gap law.
//!
//! Four laws are supported. `Finite` is an explicit value/probability table,
//! `Geometric(p)` puts mass `(1-p)^(k-1) p` on `k >= 1`, `ShiftedPoisson(λ)`
//! is `1 + Poisson(λ)`, and `Pow2Counterexample(m)` puts mass `p^k (1-p)` on
//! `2^k` with `p = 2^(-1/(m+1))`.
//!
//! # Star ratio
//!
//! The star ratio is `inf_i (-log p_i) / s_i` over the support. For the
//! geometric law the terms are `((-log p) + (k-1)(-log(1-p))) / k`, a running
//! average of `-log p` and `-log(1-p)`, so the infimum is
//! `min(-log p, -log(1-p))`: attained at `k = 1` when `p >= 1/2` and only as
//! a limit otherwise. Some published statements of the geometric threshold
//! write this quantity with `max`; the `min` reading is the one that yields
//! the golden-ratio condition `p > (√5 - 1)/2` and is what is computed here.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{open_unit, unit, Stream};

/// Default tail tolerance for truncated analytic scans.
pub const DEFAULT_TAIL_EPSILON: f64 = 1e-12;

/// Largest gap a sampler returns; larger draws are clamped and counted.
pub const MAX_GAP: u64 = 1 << 40;

/// Hard cap on the number of support points visited by analytic scans.
const MAX_SCAN: u64 = 1_000_000;

/// Finite pmfs loaded from configs must sum to 1 within this tolerance.
pub const LOAD_SUM_TOLERANCE: f64 = 1e-9;

/// Tail mass left unfolded when reducing an infinite pmf modulo `M`.
pub const FOLD_TAIL: f64 = 1e-14;

static CLAMPED_DRAWS: AtomicU64 = AtomicU64::new(0);

/// Number of draws (process-wide) that exceeded [`MAX_GAP`] and were clamped.
pub fn clamped_draws() -> u64 {
    CLAMPED_DRAWS.load(Ordering::Relaxed)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("finite pmf sums to {sum}, expected 1 within {tolerance}")]
    NotNormalized { sum: f64, tolerance: f64 },
    #[error("finite pmf has duplicate value {0}")]
    DuplicateValue(u64),
    #[error("support gcd unstable under truncation: {truncated} at the cutoff, {doubled} with the cutoff doubled")]
    UnstableGcd { truncated: u64, doubled: u64 },
}

/// Serialized form of a gap law, as it appears in config files.
///
/// `{"kind":"geometric","p":0.8}`, `{"kind":"finite","pmf":[[2,0.5],[3,0.5]]}`,
/// `{"kind":"shifted_poisson","lambda":1.5}`, `{"kind":"pow2_counterexample","m":2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistSpec {
    Finite { pmf: Vec<(u64, f64)> },
    Geometric { p: f64 },
    ShiftedPoisson { lambda: f64 },
    #[serde(rename = "pow2_counterexample")]
    Pow2Counterexample { m: u32 },
}

impl DistSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            DistSpec::Finite { .. } => "finite",
            DistSpec::Geometric { .. } => "geometric",
            DistSpec::ShiftedPoisson { .. } => "shifted_poisson",
            DistSpec::Pow2Counterexample { .. } => "pow2_counterexample",
        }
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

/// The law of the gaps, after validation.
#[derive(Debug, Clone, PartialEq)]
pub enum GapKind {
    Finite { values: Vec<u64>, probs: Vec<f64> },
    Geometric { p: f64 },
    ShiftedPoisson { lambda: f64 },
    PowerOfTwoCounterexample { m: u32, p: f64 },
}

/// Walker/Vose alias table. One 64-bit draw per sample: the high half of
/// `r * n` picks the column, the low half is the acceptance coin.
#[derive(Debug, Clone, PartialEq)]
struct AliasTable {
    threshold: Vec<u128>,
    alias: Vec<usize>,
}

impl AliasTable {
    fn new(probs: &[f64]) -> Self {
        let n = probs.len();
        let mut scaled: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small = Vec::new();
        let mut large = Vec::new();
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            scaled[i] = 1.0;
        }
        let two64 = 18_446_744_073_709_551_616.0_f64;
        let threshold = scaled
            .iter()
            .map(|&s| {
                if s >= 1.0 {
                    1u128 << 64
                } else {
                    (s.max(0.0) * two64) as u128
                }
            })
            .collect();
        AliasTable { threshold, alias }
    }

    #[inline]
    fn sample(&self, rng: &mut Stream) -> usize {
        let n = self.alias.len() as u128;
        let prod = rng.next_u64() as u128 * n;
        let col = (prod >> 64) as usize;
        let coin = prod & u64::MAX as u128;
        if coin < self.threshold[col] {
            col
        } else {
            self.alias[col]
        }
    }
}

/// A validated, immutable gap distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GapDistribution {
    kind: GapKind,
    /// Number of leading support points scanned by truncated analytic scans.
    pub support_truncation: u64,
    pub tail_epsilon: f64,
    alias: Option<AliasTable>,
}

fn ext_real_ser<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_infinite() && *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*x)
    }
}

fn ext_real_de<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(x) => Ok(x),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("expected number or \"inf\", got {s}"))),
    }
}

/// Which parts of the m-fold completeness theory apply to a gap law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub support_gcd: u64,
    /// `inf_i (-log p_i) / s_i`.
    pub star_ratio: f64,
    /// `2 * star_ratio`; the MGF radius must exceed it.
    pub threshold: f64,
    #[serde(serialize_with = "ext_real_ser", deserialize_with = "ext_real_de")]
    pub mgf_radius: f64,
    pub m_completeness_applies: bool,
    /// `None` when finiteness of `E[X^(1/2)]` is not decided analytically.
    pub half_moment_finite: Option<bool>,
}

fn check_prob(name: &str, p: f64) -> Result<(), DistributionError> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DistributionError::InvalidParameter(format!("{name} must lie in (0,1), got {p}")))
    }
}

fn ln_factorial(k: u64) -> f64 {
    statrs::function::gamma::ln_gamma(k as f64 + 1.0)
}

impl GapDistribution {
    fn with_kind(kind: GapKind) -> Self {
        let alias = match &kind {
            GapKind::Finite { probs, .. } => Some(AliasTable::new(probs)),
            _ => None,
        };
        let mut dist = GapDistribution { kind, support_truncation: 0, tail_epsilon: DEFAULT_TAIL_EPSILON, alias };
        dist.support_truncation = dist.truncation_for(DEFAULT_TAIL_EPSILON);
        dist
    }

    /// A finite pmf. Values are sorted; the masses must be positive and sum
    /// to 1 within [`LOAD_SUM_TOLERANCE`], and are renormalized exactly.
    pub fn finite(pmf: &[(u64, f64)]) -> Result<Self, DistributionError> {
        if pmf.is_empty() {
            return Err(DistributionError::InvalidParameter("finite pmf is empty".into()));
        }
        let mut pairs = pmf.to_vec();
        pairs.sort_by_key(|&(v, _)| v);
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(DistributionError::DuplicateValue(w[0].0));
            }
        }
        for &(v, p) in &pairs {
            if v == 0 {
                return Err(DistributionError::InvalidParameter("gap values must be positive".into()));
            }
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(DistributionError::InvalidParameter(format!("mass at {v} must lie in (0,1], got {p}")));
            }
        }
        let sum: f64 = pairs.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > LOAD_SUM_TOLERANCE {
            return Err(DistributionError::NotNormalized { sum, tolerance: LOAD_SUM_TOLERANCE });
        }
        let values = pairs.iter().map(|&(v, _)| v).collect();
        let probs = pairs.iter().map(|&(_, p)| p / sum).collect();
        Ok(Self::with_kind(GapKind::Finite { values, probs }))
    }

    /// Geometric law on `{1, 2, …}`; `p = 1` is accepted as the point mass at 1.
    pub fn geometric(p: f64) -> Result<Self, DistributionError> {
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(DistributionError::InvalidParameter(format!("p must lie in (0,1], got {p}")));
        }
        Ok(Self::with_kind(GapKind::Geometric { p }))
    }

    pub fn shifted_poisson(lambda: f64) -> Result<Self, DistributionError> {
        // exp(-λ) must stay a normal f64 for the inversion sampler.
        if !(lambda.is_finite() && lambda > 0.0 && lambda <= 700.0) {
            return Err(DistributionError::InvalidParameter(format!("lambda must lie in (0,700], got {lambda}")));
        }
        Ok(Self::with_kind(GapKind::ShiftedPoisson { lambda }))
    }

    pub fn pow2_counterexample(m: u32) -> Result<Self, DistributionError> {
        if m == 0 {
            return Err(DistributionError::InvalidParameter("m must be at least 1".into()));
        }
        let p = 2f64.powf(-1.0 / (m as f64 + 1.0));
        check_prob("p", p)?;
        Ok(Self::with_kind(GapKind::PowerOfTwoCounterexample { m, p }))
    }

    pub fn from_spec(spec: &DistSpec) -> Result<Self, DistributionError> {
        match spec {
            DistSpec::Finite { pmf } => Self::finite(pmf),
            DistSpec::Geometric { p } => Self::geometric(*p),
            DistSpec::ShiftedPoisson { lambda } => Self::shifted_poisson(*lambda),
            DistSpec::Pow2Counterexample { m } => Self::pow2_counterexample(*m),
        }
    }

    /// Replaces the tail tolerance and recomputes the scan cutoff.
    pub fn with_tail_epsilon(mut self, eps: f64) -> Result<Self, DistributionError> {
        if !(eps.is_finite() && eps > 0.0 && eps < 1.0) {
            return Err(DistributionError::InvalidParameter(format!("tail_epsilon must lie in (0,1), got {eps}")));
        }
        self.tail_epsilon = eps;
        self.support_truncation = self.truncation_for(eps);
        Ok(self)
    }

    pub fn spec(&self) -> DistSpec {
        match &self.kind {
            GapKind::Finite { values, probs } => {
                DistSpec::Finite { pmf: values.iter().copied().zip(probs.iter().copied()).collect() }
            }
            GapKind::Geometric { p } => DistSpec::Geometric { p: *p },
            GapKind::ShiftedPoisson { lambda } => DistSpec::ShiftedPoisson { lambda: *lambda },
            GapKind::PowerOfTwoCounterexample { m, .. } => DistSpec::Pow2Counterexample { m: *m },
        }
    }

    pub fn kind(&self) -> &GapKind {
        &self.kind
    }

    /// Content hash of the normalized `DistSpec` (16 hex digits).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.spec()).expect("spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Number of leading support points holding all but `eps` of the mass.
    fn truncation_for(&self, eps: f64) -> u64 {
        match &self.kind {
            GapKind::Finite { values, .. } => values.len() as u64,
            GapKind::Geometric { p } => {
                if *p >= 1.0 {
                    1
                } else {
                    let k = (eps.ln() / (-p).ln_1p()).ceil();
                    (k.max(1.0) as u64).min(MAX_SCAN)
                }
            }
            GapKind::ShiftedPoisson { lambda } => {
                let mut k = 0u64;
                let mut term = (-lambda).exp();
                let mut cdf = term;
                while (1.0 - cdf > eps || (k as f64) < *lambda) && k < MAX_SCAN {
                    k += 1;
                    term *= lambda / k as f64;
                    cdf += term;
                }
                k + 1
            }
            GapKind::PowerOfTwoCounterexample { p, .. } => {
                let k = (eps.ln() / p.ln()).ceil();
                k.max(1.0) as u64
            }
        }
    }

    /// Support points (increasing) within the scan cutoff. Power-of-two
    /// values are limited to `2^62` to stay representable.
    pub fn support_values(&self) -> Vec<u64> {
        self.support_values_upto(self.support_truncation)
    }

    fn support_values_upto(&self, count: u64) -> Vec<u64> {
        match &self.kind {
            GapKind::Finite { values, .. } => values.clone(),
            GapKind::Geometric { .. } => (1..=count).collect(),
            GapKind::ShiftedPoisson { .. } => (1..=count).collect(),
            GapKind::PowerOfTwoCounterexample { .. } => (0..count.min(63)).map(|k| 1u64 << k).collect(),
        }
    }

    /// Largest support value, when the support is finite.
    pub fn max_value(&self) -> Option<u64> {
        match &self.kind {
            GapKind::Finite { values, .. } => values.last().copied(),
            GapKind::Geometric { p } if *p >= 1.0 => Some(1),
            _ => None,
        }
    }

    /// `E[X]`, or `None` when it is infinite.
    pub fn mean(&self) -> Option<f64> {
        match &self.kind {
            GapKind::Finite { values, probs } => {
                Some(values.iter().zip(probs).map(|(&v, &p)| v as f64 * p).sum())
            }
            GapKind::Geometric { p } => Some(1.0 / p),
            GapKind::ShiftedPoisson { lambda } => Some(1.0 + lambda),
            // E[X] = sum (2p)^k (1-p) with 2p >= 1.
            GapKind::PowerOfTwoCounterexample { .. } => None,
        }
    }

    /// Exact mass at `value` (0 outside the support).
    pub fn pmf(&self, value: u64) -> f64 {
        if value == 0 {
            return 0.0;
        }
        match &self.kind {
            GapKind::Finite { values, probs } => match values.binary_search(&value) {
                Ok(i) => probs[i],
                Err(_) => 0.0,
            },
            GapKind::Geometric { p } => {
                if *p >= 1.0 {
                    return if value == 1 { 1.0 } else { 0.0 };
                }
                ((value - 1) as f64 * (-p).ln_1p()).exp() * p
            }
            GapKind::ShiftedPoisson { lambda } => {
                let k = value - 1;
                if k == 0 {
                    return (-lambda).exp();
                }
                (-lambda + k as f64 * lambda.ln() - ln_factorial(k)).exp()
            }
            GapKind::PowerOfTwoCounterexample { p, .. } => {
                if value.is_power_of_two() {
                    let k = value.trailing_zeros() as i32;
                    p.powi(k) * (1.0 - p)
                } else {
                    0.0
                }
            }
        }
    }

    /// One gap. Consumes a fixed number of 64-bit words per kind except for
    /// the Poisson inversion, which consumes one uniform.
    #[inline]
    pub fn sample(&self, rng: &mut Stream) -> u64 {
        match &self.kind {
            GapKind::Finite { values, .. } => {
                let table = self.alias.as_ref().expect("finite kinds carry an alias table");
                values[table.sample(rng)]
            }
            GapKind::Geometric { p } => {
                if *p >= 1.0 {
                    rng.next_u64();
                    return 1;
                }
                let u = open_unit(rng);
                let k = (u.ln() / (-p).ln_1p()).floor();
                if k >= (MAX_GAP - 1) as f64 {
                    CLAMPED_DRAWS.fetch_add(1, Ordering::Relaxed);
                    MAX_GAP
                } else {
                    1 + k as u64
                }
            }
            GapKind::ShiftedPoisson { lambda } => {
                let u = unit(rng);
                let mut k = 0u64;
                let mut term = (-lambda).exp();
                let mut cdf = term;
                let cap = (10.0 * lambda) as u64 + 1000;
                while u >= cdf && k < cap {
                    k += 1;
                    term *= lambda / k as f64;
                    cdf += term;
                }
                1 + k
            }
            GapKind::PowerOfTwoCounterexample { p, .. } => {
                let u = open_unit(rng);
                let k = (u.ln() / p.ln()).floor();
                if k >= 40.0 {
                    CLAMPED_DRAWS.fetch_add(1, Ordering::Relaxed);
                    MAX_GAP
                } else {
                    1u64 << (k as u32)
                }
            }
        }
    }

    /// gcd of the support. Infinite supports are scanned to the cutoff and
    /// the result is accepted only if it is already 1 or survives doubling
    /// the cutoff.
    pub fn support_gcd(&self) -> Result<u64, DistributionError> {
        let g = self.support_values().into_iter().fold(0, crate::gcd);
        if g == 1 || matches!(self.kind, GapKind::Finite { .. }) {
            return Ok(g);
        }
        let doubled = self
            .support_values_upto(self.support_truncation.saturating_mul(2))
            .into_iter()
            .fold(0, crate::gcd);
        if doubled == g {
            Ok(g)
        } else {
            Err(DistributionError::UnstableGcd { truncated: g, doubled })
        }
    }

    /// `inf_i (-log p_i)/s_i`: a scan of the truncated support, combined
    /// with the closed-form tail limit where one exists.
    ///
    /// For geometric laws this is `min(-ln p, -ln(1-p))`. Writing `max`
    /// instead is a known misstatement: only the `min` form gives the
    /// threshold `p > (sqrt 5 - 1) / 2`.
    pub fn star_ratio(&self) -> f64 {
        let scanned = match &self.kind {
            GapKind::PowerOfTwoCounterexample { p, .. } => (0..self.support_truncation.min(63))
                .map(|k| (-(k as f64) * p.ln() - (1.0 - p).ln()) / (1u64 << k) as f64)
                .fold(f64::INFINITY, f64::min),
            _ => self
                .support_values()
                .into_iter()
                .filter_map(|v| {
                    let mass = self.pmf(v);
                    (mass > 0.0).then(|| -mass.ln() / v as f64)
                })
                .fold(f64::INFINITY, f64::min),
        };
        let tail_limit = match &self.kind {
            GapKind::Geometric { p } if *p < 1.0 => -(-p).ln_1p(),
            GapKind::PowerOfTwoCounterexample { .. } => 0.0,
            _ => f64::INFINITY,
        };
        scanned.min(tail_limit).max(0.0)
    }

    /// Radius of convergence of `E[e^{tX}]`, per kind.
    pub fn mgf_radius(&self) -> f64 {
        match &self.kind {
            GapKind::Finite { .. } | GapKind::ShiftedPoisson { .. } => f64::INFINITY,
            GapKind::Geometric { p } => {
                if *p >= 1.0 {
                    f64::INFINITY
                } else {
                    -(-p).ln_1p()
                }
            }
            GapKind::PowerOfTwoCounterexample { .. } => 0.0,
        }
    }

    pub fn admissibility(&self) -> AdmissibilityReport {
        let star_ratio = self.star_ratio();
        let threshold = 2.0 * star_ratio;
        let mgf_radius = self.mgf_radius();
        let half_moment_finite = match &self.kind {
            // sum_k p^k (1-p) 2^(k/2) converges iff p * sqrt(2) < 1.
            GapKind::PowerOfTwoCounterexample { p, .. } => Some(p * std::f64::consts::SQRT_2 < 1.0),
            _ => Some(true),
        };
        AdmissibilityReport {
            support_gcd: self.support_gcd().unwrap_or(0),
            star_ratio,
            threshold,
            mgf_radius,
            m_completeness_applies: mgf_radius > threshold,
            half_moment_finite,
        }
    }

    /// Mass of each residue class mod `modulus`, folding infinite supports
    /// until less than [`FOLD_TAIL`] remains. Returns the classes and the
    /// unfolded tail mass.
    pub fn residue_masses(&self, modulus: u64) -> (Vec<f64>, f64) {
        let m = modulus as usize;
        let mut row = vec![0.0; m];
        let mut folded = 0.0;
        match &self.kind {
            GapKind::Finite { values, probs } => {
                for (&v, &p) in values.iter().zip(probs) {
                    row[(v % modulus) as usize] += p;
                }
                return (row, 0.0);
            }
            GapKind::Geometric { p } => {
                let q = 1.0 - p;
                let mut mass = *p;
                let mut tail = 1.0;
                let mut k = 1u64;
                while tail >= FOLD_TAIL && mass > 0.0 {
                    row[(k % modulus) as usize] += mass;
                    folded += mass;
                    tail *= q;
                    mass *= q;
                    k += 1;
                }
            }
            GapKind::ShiftedPoisson { lambda } => {
                let mut k = 0u64;
                let mut mass = (-lambda).exp();
                while k as f64 <= *lambda || 1.0 - folded >= FOLD_TAIL {
                    row[((k + 1) % modulus) as usize] += mass;
                    folded += mass;
                    k += 1;
                    mass *= lambda / k as f64;
                    if mass == 0.0 && k as f64 > *lambda {
                        break;
                    }
                }
            }
            GapKind::PowerOfTwoCounterexample { p, .. } => {
                let mut residue = 1 % modulus;
                let mut mass = 1.0 - p;
                let mut tail = 1.0;
                while tail >= FOLD_TAIL {
                    row[residue as usize] += mass;
                    folded += mass;
                    tail *= p;
                    mass *= p;
                    residue = (residue * 2) % modulus;
                }
            }
        }
        (row, (1.0 - folded).max(0.0))
    }
}
