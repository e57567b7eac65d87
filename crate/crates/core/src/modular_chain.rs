//! The Markov chain a gap law induces on `Z/MZ`.
//!
//! Reducing the weights mod `M` gives a random walk whose transition
//! probability from `i` to `j` is the mass of the gap classes
//! `t ≡ j - i (mod M)`. The matrix is circulant, hence doubly stochastic,
//! and the uniform vector is stationary. Regularity is decided on the
//! boolean support pattern only.

use serde::Serialize;
use thiserror::Error;

use crate::distributions::GapDistribution;
use crate::rng::substream;

/// Conditioning rows with fewer events than this are flagged.
pub const LOW_SAMPLE_EVENTS: u64 = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("modulus must be at least 2, got {0}")]
    InvalidModulus(u64),
    #[error("matrix power must be at least 1")]
    ZeroPower,
    #[error("trials must be at least 1")]
    NoTrials,
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareMatrix {
    pub size: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(size: usize) -> Self {
        SquareMatrix { size, data: vec![0.0; size * size] }
    }

    pub fn identity(size: usize) -> Self {
        let mut m = Self::zeros(size);
        for i in 0..size {
            m.data[i * size + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn mul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.size;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let row = other.row(k);
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    fn renormalize_rows(&mut self) {
        let n = self.size;
        for row in self.data.chunks_mut(n) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|x| *x /= s);
            }
        }
    }

    /// Largest `|entry - value|`.
    pub fn max_deviation_from(&self, value: f64) -> f64 {
        self.data.iter().map(|x| (x - value).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModularChain {
    pub modulus: u64,
    pub matrix: SquareMatrix,
    /// Tail mass dropped before renormalizing the folded pmf.
    pub mass_truncation_error: f64,
}

/// Folds the gap pmf mod `modulus` into the circulant transition matrix.
pub fn build_chain(dist: &GapDistribution, modulus: u64) -> Result<ModularChain, ChainError> {
    if modulus < 2 {
        return Err(ChainError::InvalidModulus(modulus));
    }
    let (mut first, dropped) = dist.residue_masses(modulus);
    let total: f64 = first.iter().sum();
    first.iter_mut().for_each(|x| *x /= total);
    let m = modulus as usize;
    let mut matrix = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            matrix.data[i * m + j] = first[(j + m - i) % m];
        }
    }
    Ok(ModularChain { modulus, matrix, mass_truncation_error: dropped })
}

impl ModularChain {
    fn size(&self) -> usize {
        self.modulus as usize
    }

    /// Residues reachable in one step.
    pub fn step_support(&self) -> Vec<bool> {
        self.matrix.row(0).iter().map(|&x| x > 0.0).collect()
    }

    /// Smallest `N <= M²` with every entry of the `N`-step support pattern
    /// set, or `None` if the chain is not regular.
    ///
    /// The pattern of a circulant power is itself circulant, so it is enough
    /// to track the residues reachable from 0 in exactly `N` steps.
    pub fn is_regular(&self) -> Option<u64> {
        let m = self.size();
        let step = self.step_support();
        let steps: Vec<usize> = (0..m).filter(|&r| step[r]).collect();
        let mut reach = step.clone();
        let cap = self.modulus * self.modulus;
        for n in 1..=cap {
            if reach.iter().all(|&b| b) {
                return Some(n);
            }
            let mut next = vec![false; m];
            for (r, _) in reach.iter().enumerate().filter(|(_, &b)| b) {
                for &s in &steps {
                    next[(r + s) % m] = true;
                }
            }
            reach = next;
        }
        None
    }

    /// `A^N` by square-and-multiply, renormalizing rows after each product.
    pub fn power_rows(&self, n: u64) -> Result<SquareMatrix, ChainError> {
        if n == 0 {
            return Err(ChainError::ZeroPower);
        }
        let mut result: Option<SquareMatrix> = None;
        let mut base = self.matrix.clone();
        let mut e = n;
        loop {
            if e & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => {
                        let mut p = r.mul(&base);
                        p.renormalize_rows();
                        p
                    }
                });
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = base.mul(&base);
            base.renormalize_rows();
        }
        Ok(result.expect("n >= 1"))
    }

    /// Largest deviation of `row · A` from `row` for the uniform row.
    pub fn uniform_stationarity_error(&self) -> f64 {
        let m = self.size();
        let u = 1.0 / m as f64;
        (0..m)
            .map(|j| {
                let col: f64 = (0..m).map(|i| u * self.matrix.get(i, j)).sum();
                (col - u).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn is_circulant(&self) -> bool {
        let m = self.size();
        (0..m).all(|i| (0..m).all(|j| self.matrix.get(i, j) == self.matrix.get((i + 1) % m, (j + 1) % m)))
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochasticity_error(&self) -> f64 {
        let m = self.size();
        let rows = (0..m).map(|i| (self.matrix.row(i).iter().sum::<f64>() - 1.0).abs());
        let cols = (0..m).map(|j| ((0..m).map(|i| self.matrix.get(i, j)).sum::<f64>() - 1.0).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

/// Conditional frequencies of `W_{k+N} mod M` given `W_k mod M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquidistributionTable {
    pub modulus: u64,
    pub k: u64,
    pub n: u64,
    pub trials: u64,
    /// `counts[i][j]`: trials with `W_k ≡ i` and `W_{k+N} ≡ j`.
    pub counts: Vec<Vec<u64>>,
    pub row_events: Vec<u64>,
    /// `counts[i][j] / row_events[i]`, or 0 for empty rows.
    pub frequencies: Vec<Vec<f64>>,
    /// Rows with fewer than [`LOW_SAMPLE_EVENTS`] conditioning events.
    pub low_sample_rows: Vec<bool>,
    pub support_gcd: Option<u64>,
    pub regular: bool,
    pub warnings: Vec<String>,
}

impl EquidistributionTable {
    /// Largest `|freq - 1/M|` over rows with enough events.
    pub fn max_deviation(&self) -> f64 {
        let u = 1.0 / self.modulus as f64;
        self.frequencies
            .iter()
            .zip(&self.low_sample_rows)
            .filter(|(_, &low)| !low)
            .flat_map(|(row, _)| row.iter().map(move |f| (f - u).abs()))
            .fold(0.0, f64::max)
    }

    /// Largest `|freq - P| / σ` against an analytic `N`-step matrix, with
    /// `σ² = P(1-P) / events` per row; cells with `σ = 0` must match exactly.
    pub fn max_sigma_deviation(&self, power: &SquareMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.frequencies.iter().enumerate() {
            let events = self.row_events[i];
            if events == 0 {
                continue;
            }
            for (j, &f) in row.iter().enumerate() {
                let p = power.get(i, j);
                let var = p * (1.0 - p) / events as f64;
                let dev = (f - p).abs();
                let z = if var > 0.0 {
                    dev / var.sqrt()
                } else if dev > 1e-9 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst = worst.max(z);
            }
        }
        worst
    }
}

/// Simulates `trials` independent walks (trial `t` on sub-stream `t` of
/// `seed`) and tabulates the residue of `W_{k+N}` against that of `W_k`.
pub fn empirical_equidistribution(
    dist: &GapDistribution,
    modulus: u64,
    k: u64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<EquidistributionTable, ChainError> {
    if modulus < 2 {
        return Err(ChainError::InvalidModulus(modulus));
    }
    if trials == 0 {
        return Err(ChainError::NoTrials);
    }
    let m = modulus as usize;
    let mut counts = vec![vec![0u64; m]; m];
    for t in 0..trials {
        let mut rng = substream(seed, t);
        let mut residue = 0u64;
        for _ in 0..k {
            residue = (residue + dist.sample(&mut rng) % modulus) % modulus;
        }
        let start = residue as usize;
        for _ in 0..n {
            residue = (residue + dist.sample(&mut rng) % modulus) % modulus;
        }
        counts[start][residue as usize] += 1;
    }
    let row_events: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let frequencies = counts
        .iter()
        .zip(&row_events)
        .map(|(row, &e)| row.iter().map(|&c| if e > 0 { c as f64 / e as f64 } else { 0.0 }).collect())
        .collect();
    let low_sample_rows: Vec<bool> = row_events.iter().map(|&e| e < LOW_SAMPLE_EVENTS).collect();
    let support_gcd = dist.support_gcd().ok();
    let regular = build_chain(dist, modulus)?.is_regular().is_some();
    let mut warnings = Vec::new();
    if support_gcd != Some(1) {
        warnings.push(format!("support gcd is {support_gcd:?}, not 1: no equidistribution is expected"));
    }
    if !regular {
        warnings.push(format!("the chain mod {modulus} is not regular"));
    }
    if low_sample_rows.iter().any(|&b| b) {
        warnings.push(format!("some conditioning rows have fewer than {LOW_SAMPLE_EVENTS} events"));
    }
    Ok(EquidistributionTable {
        modulus,
        k,
        n,
        trials,
        counts,
        row_events,
        frequencies,
        low_sample_rows,
        support_gcd,
        regular,
        warnings,
    })
}
