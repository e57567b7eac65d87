//! Realized weight sequences `W_n = X_1 + ⋯ + X_n` and their diagnostics.

use std::io::{BufRead, Write};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{GapDistribution, GapKind};
use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("cumulative weight overflowed u64 before reaching horizon {horizon}")]
    HorizonOverflow { horizon: u64 },
    #[error("{requested} lies beyond the sequence horizon {horizon}")]
    OutOfWindow { requested: u64, horizon: u64 },
    #[error("vaulting index {t_index} is smaller than the requested {b} prevault gaps")]
    TooFewGaps { t_index: u64, b: usize },
    #[error("sequence is empty")]
    Empty,
    #[error("malformed sequence dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A realized, immutable weight sequence, generated until the first weight
/// reaching the horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightSequence {
    pub weights: Vec<u64>,
    pub gaps: Vec<u64>,
    pub seed: u64,
    pub dist_fingerprint: String,
    pub horizon: u64,
}

/// The vaulting index `T_n` (number of weights strictly below `n`) and the
/// `b` gaps ending at `W_{T_n}`, latest first: `X_{T_n}, X_{T_n - 1}, …`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaultRecord {
    pub n: u64,
    pub t_index: u64,
    pub prevault_gaps: Vec<u64>,
}

/// Streams i.i.d. gaps from `seed` until the cumulative sum reaches `horizon`.
pub fn generate(dist: &GapDistribution, seed: u64, horizon: u64) -> Result<WeightSequence, SequenceError> {
    if horizon == 0 {
        return Err(SequenceError::ZeroHorizon);
    }
    let mut rng = stream(seed);
    let expected = dist.mean().map(|m| (horizon as f64 / m) as usize + 16).unwrap_or(64);
    let cap = expected.min(1 << 26);
    let mut weights = Vec::with_capacity(cap);
    let mut gaps = Vec::with_capacity(cap);
    let mut total = 0u64;
    while total < horizon {
        let x = dist.sample(&mut rng);
        total = total.checked_add(x).ok_or(SequenceError::HorizonOverflow { horizon })?;
        gaps.push(x);
        weights.push(total);
    }
    Ok(WeightSequence { weights, gaps, seed, dist_fingerprint: dist.fingerprint(), horizon })
}

/// Powers of two `2, 4, 8, …` not exceeding `len`.
pub fn checkpoints(len: usize) -> impl Iterator<Item = usize> {
    (1..usize::BITS).map(|j| 1usize << j).take_while(move |&n| n <= len)
}

impl WeightSequence {
    /// Rebuilds a sequence from its gaps, checking the horizon invariants.
    pub fn from_gaps(gaps: Vec<u64>, seed: u64, dist_fingerprint: String, horizon: u64) -> Result<Self, SequenceError> {
        if gaps.is_empty() {
            return Err(SequenceError::Empty);
        }
        let mut weights = Vec::with_capacity(gaps.len());
        let mut total = 0u64;
        for &x in &gaps {
            if x == 0 {
                return Err(SequenceError::Dump("zero gap".into()));
            }
            total = total.checked_add(x).ok_or(SequenceError::HorizonOverflow { horizon })?;
            weights.push(total);
        }
        let last = *weights.last().unwrap();
        let before_last = if weights.len() > 1 { weights[weights.len() - 2] } else { 0 };
        if last < horizon || before_last >= horizon {
            return Err(SequenceError::Dump(format!(
                "gaps do not stop at the first weight reaching horizon {horizon}"
            )));
        }
        Ok(WeightSequence { weights, gaps, seed, dist_fingerprint, horizon })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Number of weights `<= x`.
    pub fn count_upto(&self, x: u64) -> usize {
        self.weights.partition_point(|&w| w <= x)
    }

    /// `|{W_i <= upto}| / upto`.
    pub fn density(&self, upto: u64) -> Result<f64, SequenceError> {
        if upto == 0 || upto > self.horizon {
            return Err(SequenceError::OutOfWindow { requested: upto, horizon: self.horizon });
        }
        Ok(self.count_upto(upto) as f64 / upto as f64)
    }

    /// Running maximum gap at `n = 2, 4, 8, …`.
    pub fn max_gap_profile(&self) -> Result<Vec<(usize, u64)>, SequenceError> {
        if self.is_empty() {
            return Err(SequenceError::Empty);
        }
        let mut out = Vec::new();
        let mut running = 0u64;
        let mut next = checkpoints(self.len()).peekable();
        for (i, &x) in self.gaps.iter().enumerate() {
            running = running.max(x);
            if next.peek() == Some(&(i + 1)) {
                out.push((i + 1, running));
                next.next();
            }
        }
        Ok(out)
    }

    /// `W_n / n²` at `n = 2, 4, 8, …`.
    pub fn partial_sum_scaling(&self) -> Result<Vec<(usize, f64)>, SequenceError> {
        if self.is_empty() {
            return Err(SequenceError::Empty);
        }
        Ok(checkpoints(self.len())
            .map(|n| (n, self.weights[n - 1] as f64 / (n as f64 * n as f64)))
            .collect())
    }

    /// Vaulting index of `n` and the `b` gaps before it, by binary search.
    pub fn vault(&self, n: u64, b: usize) -> Result<VaultRecord, SequenceError> {
        if n == 0 || n > self.horizon {
            return Err(SequenceError::OutOfWindow { requested: n, horizon: self.horizon });
        }
        let t = self.weights.partition_point(|&w| w < n);
        if t < b {
            return Err(SequenceError::TooFewGaps { t_index: t as u64, b });
        }
        let prevault_gaps = self.gaps[t - b..t].iter().rev().copied().collect();
        Ok(VaultRecord { n, t_index: t as u64, prevault_gaps })
    }

    /// Writes the `gapseq v1` dump: a header line, then one gap per line.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<(), SequenceError> {
        writeln!(
            out,
            "# gapseq v1 seed={} dist={} horizon={}",
            self.seed, self.dist_fingerprint, self.horizon
        )?;
        for x in &self.gaps {
            writeln!(out, "{x}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, SequenceError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| SequenceError::Dump("missing header".into()))??;
        let rest = header
            .strip_prefix("# gapseq v1 ")
            .ok_or_else(|| SequenceError::Dump(format!("unrecognized header: {header}")))?;
        let (mut seed, mut dist, mut horizon) = (None, None, None);
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| SequenceError::Dump(format!("bad header field: {field}")))?;
            let bad = |_| SequenceError::Dump(format!("bad value for {key}: {value}"));
            match key {
                "seed" => seed = Some(value.parse::<u64>().map_err(bad)?),
                "dist" => dist = Some(value.to_string()),
                "horizon" => horizon = Some(value.parse::<u64>().map_err(bad)?),
                _ => return Err(SequenceError::Dump(format!("unknown header field: {key}"))),
            }
        }
        let (Some(seed), Some(dist), Some(horizon)) = (seed, dist, horizon) else {
            return Err(SequenceError::Dump("header needs seed, dist and horizon".into()));
        };
        let mut gaps = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let x = line
                .parse::<u64>()
                .map_err(|_| SequenceError::Dump(format!("line {}: not a gap: {line}", lineno + 2)))?;
            gaps.push(x);
        }
        Self::from_gaps(gaps, seed, dist, horizon)
    }
}

/// Draws the vaulting record at `n` of one fresh sequence without storing it.
///
/// For finite-support laws the walk is fast-forwarded: while the remaining
/// distance exceeds `(b + 2) · max_gap`, a block of `K` gaps is summed in one
/// multinomial draw, with `K` chosen from the current position only so the
/// block cannot reach within `(b + 1) · max_gap` of `n`. The last `b` gaps
/// before `n` are therefore always drawn one by one, and the record has the
/// same law as [`WeightSequence::vault`] on a fully generated sequence.
/// Other laws are walked gap by gap.
pub fn sample_vault(dist: &GapDistribution, rng: &mut Stream, n: u64, b: usize) -> Result<VaultRecord, SequenceError> {
    if n == 0 {
        return Err(SequenceError::OutOfWindow { requested: n, horizon: n });
    }
    let mut pos = 0u64;
    let mut index = 0u64;
    if let (GapKind::Finite { values, probs }, Some(max_gap)) = (dist.kind(), dist.max_value()) {
        let margin = (b as u64 + 1) * max_gap;
        while n - pos > margin + max_gap {
            let k = (n - pos - margin) / max_gap;
            pos += multinomial_sum(values, probs, k, rng);
            index += k;
        }
    }
    let mut ring = std::collections::VecDeque::with_capacity(b + 1);
    loop {
        let x = dist.sample(rng);
        let next = pos.checked_add(x).ok_or(SequenceError::HorizonOverflow { horizon: n })?;
        if next >= n {
            break;
        }
        pos = next;
        index += 1;
        if b > 0 {
            if ring.len() == b {
                ring.pop_back();
            }
            ring.push_front(x);
        }
    }
    if (ring.len() as u64) < b as u64 {
        return Err(SequenceError::TooFewGaps { t_index: index, b });
    }
    Ok(VaultRecord { n, t_index: index, prevault_gaps: ring.into_iter().collect() })
}

/// Sum of `count` i.i.d. draws from a finite pmf, via sequential binomials.
fn multinomial_sum(values: &[u64], probs: &[f64], count: u64, rng: &mut Stream) -> u64 {
    let mut remaining = count;
    let mut mass_left = 1.0;
    let mut sum = 0u64;
    for (i, (&v, &p)) in values.iter().zip(probs).enumerate() {
        if remaining == 0 {
            break;
        }
        let taken = if i + 1 == values.len() {
            remaining
        } else {
            let q = (p / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        sum += taken * v;
        remaining -= taken;
        mass_left -= p;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn unit_gaps() -> GapDistribution {
        GapDistribution::finite(&[(1, 1.0)]).unwrap()
    }

    #[test]
    fn unit_gap_examples() {
        let s = generate(&unit_gaps(), 0, 5).unwrap();
        assert_eq!(s.weights, vec![1, 2, 3, 4, 5]);
        let s = generate(&unit_gaps(), 0, 100).unwrap();
        assert_eq!(s.density(100).unwrap(), 1.0);
        assert!(s.max_gap_profile().unwrap().iter().all(|&(_, m)| m == 1));
        for (n, r) in s.partial_sum_scaling().unwrap() {
            assert_eq!(r, 1.0 / n as f64);
        }
        let v = s.vault(10, 3).unwrap();
        assert_eq!(v.t_index, 9);
        assert_eq!(v.prevault_gaps, vec![1, 1, 1]);
    }

    #[test]
    fn constant_gap_examples() {
        let two = GapDistribution::finite(&[(2, 1.0)]).unwrap();
        let s = generate(&two, 1, 100).unwrap();
        assert_eq!(s.density(100).unwrap(), 0.5);
        let v = s.vault(7, 1).unwrap();
        assert_eq!(v.t_index, 3);
        let three = GapDistribution::finite(&[(3, 1.0)]).unwrap();
        let s = generate(&three, 1, 3000).unwrap();
        for (n, r) in s.partial_sum_scaling().unwrap() {
            assert!((r - 3.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn two_three_support() {
        let d = GapDistribution::finite(&[(2, 0.5), (3, 0.5)]).unwrap();
        let s = generate(&d, 9, 10_000).unwrap();
        assert!(s.gaps.iter().all(|&x| x == 2 || x == 3));
        assert!(s.max_gap_profile().unwrap().iter().all(|&(_, m)| m <= 3));
    }

    #[test]
    fn horizon_invariants_and_errors() {
        let d = GapDistribution::geometric(0.3).unwrap();
        let s = generate(&d, 5, 1000).unwrap();
        assert!(*s.weights.last().unwrap() >= 1000);
        assert!(s.weights[s.len() - 2] < 1000);
        assert!(matches!(s.density(1001), Err(SequenceError::OutOfWindow { .. })));
        assert!(matches!(s.vault(1001, 1), Err(SequenceError::OutOfWindow { .. })));
        assert!(matches!(generate(&d, 5, 0), Err(SequenceError::ZeroHorizon)));
        let u = generate(&unit_gaps(), 0, 10).unwrap();
        assert!(matches!(u.vault(2, 2), Err(SequenceError::TooFewGaps { t_index: 1, b: 2 })));
    }

    #[test]
    fn huge_gaps_overflow_is_reported() {
        let d = GapDistribution::finite(&[(u64::MAX / 2 + 1, 1.0)]).unwrap();
        assert!(matches!(generate(&d, 0, u64::MAX), Err(SequenceError::HorizonOverflow { .. })));
    }

    #[test]
    fn geometric_half_density() {
        let d = GapDistribution::geometric(0.5).unwrap();
        let s = generate(&d, 2024, 1_000_000).unwrap();
        let dens = s.density(1_000_000).unwrap();
        assert!((0.49..=0.51).contains(&dens), "{dens}");
    }

    #[test]
    fn dump_round_trip() {
        let d = GapDistribution::shifted_poisson(2.0).unwrap();
        let s = generate(&d, 77, 500).unwrap();
        let mut buf = Vec::new();
        s.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("# gapseq v1 seed=77 dist={} horizon=500\n", d.fingerprint())));
        let back = WeightSequence::read_dump(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn dump_rejects_bad_input() {
        assert!(WeightSequence::read_dump(&b"1\n2\n"[..]).is_err());
        assert!(WeightSequence::read_dump(&b"# gapseq v1 seed=1 dist=ab horizon=5\n1\n1\n"[..]).is_err());
        assert!(WeightSequence::read_dump(&b"# gapseq v1 seed=1 dist=ab horizon=2\n1\n1\n1\n"[..]).is_err());
        assert!(WeightSequence::read_dump(&b"# gapseq v1 seed=1 dist=ab horizon=2\n1\nx\n"[..]).is_err());
        assert!(WeightSequence::read_dump(&b"# gapseq v1 seed=1 dist=ab horizon=2\n1\n1\n"[..]).is_ok());
    }

    #[test]
    fn fast_vault_matches_walk_without_skipping() {
        // With n inside the margin no block is skipped, so both paths
        // consume the stream identically.
        let d = GapDistribution::finite(&[(2, 0.5), (3, 0.5)]).unwrap();
        for t in 0..200 {
            let mut rng = substream(5, t);
            let fast = sample_vault(&d, &mut rng, 9, 2).unwrap();
            let mut rng = substream(5, t);
            let mut gaps = Vec::new();
            let mut total = 0;
            while total < 9 {
                let x = d.sample(&mut rng);
                total += x;
                gaps.push(x);
            }
            let seq = WeightSequence::from_gaps(gaps, 0, String::new(), 9).unwrap();
            assert_eq!(fast, seq.vault(9, 2).unwrap());
        }
    }

    #[test]
    fn fast_vault_law_agrees_with_full_generation() {
        // Compare the law of (T_n mod 3, X_{T_n}, X_{T_n-1}) between the
        // fast-forward sampler and vault() on generated sequences.
        let d = GapDistribution::finite(&[(2, 0.3), (3, 0.5), (5, 0.2)]).unwrap();
        let (n, b, trials) = (400u64, 2usize, 20_000u64);
        let key = |v: &VaultRecord| {
            let idx = |x: u64| [2, 3, 5].iter().position(|&y| y == x).unwrap();
            (v.t_index % 3) as usize * 9 + idx(v.prevault_gaps[0]) * 3 + idx(v.prevault_gaps[1])
        };
        let mut fast = vec![0u64; 27];
        let mut full = vec![0u64; 27];
        for t in 0..trials {
            let mut rng = substream(99, t);
            fast[key(&sample_vault(&d, &mut rng, n, b).unwrap())] += 1;
            let seq = generate(&d, crate::rng::derive_seed(1234, t), n).unwrap();
            full[key(&seq.vault(n, b).unwrap())] += 1;
        }
        let (stat, df) = crate::stats::chi_square_homogeneity(&fast, &full);
        let p = crate::stats::chi_square_sf(stat, df);
        assert!(p > 1e-3, "chi2 {stat} df {df} p {p}");
    }

    #[test]
    fn fast_vault_t_index_bounded() {
        let d = GapDistribution::finite(&[(2, 0.5), (3, 0.5)]).unwrap();
        let mut rng = substream(1, 1);
        for _ in 0..1000 {
            let v = sample_vault(&d, &mut rng, 10_000, 4).unwrap();
            assert!(v.t_index <= 10_000);
            assert!(v.t_index >= 3333 && v.t_index <= 5000);
            assert_eq!(v.prevault_gaps.len(), 4);
        }
    }
}
