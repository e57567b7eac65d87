//! Which integers are sums of distinct weights.
//!
//! [`SumsetTable`] keeps `m + 1` bit layers over `[0, L]`; layer `d` holds
//! exactly the integers that are a sum of `d` weights with pairwise distinct
//! indices. Weights are fed in increasing order and each one updates the
//! layers from `d = m` down to `d = 1`:
//!
//! ```text
//! layer[d] |= layer[d - 1] << w      (bits above L dropped)
//! ```
//!
//! Because layer `d - 1` is read before it is itself updated with `w`, every
//! new bit in layer `d` extends a sum that does not yet use `w`, so no weight
//! is used twice. Conversely every `d`-subset is produced when its largest
//! element is fed. Sums above `L` are discarded, never wrapped.
//!
//! The shift-or works on whole 64-bit words and only over the span where the
//! source layer can have bits, which is what makes half-million-weight
//! tables cheap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitset::BitSet;
use crate::semigroup::SemigroupDescriptor;
use crate::sequence::WeightSequence;

/// Uncovered lists in reports are cut at this many entries.
pub const MAX_UNCOVERED_LISTED: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoverageError {
    #[error("weights must be strictly increasing positive integers")]
    NotIncreasing,
    #[error("layer count m must be at least 1")]
    NoLayers,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("layer {layer} does not exist (table has layers 0..={m})")]
    NoSuchLayer { layer: usize, m: usize },
    #[error("window [{lo}, {hi}] exceeds horizon {horizon}")]
    WindowExceedsHorizon { lo: u64, hi: u64, horizon: u64 },
    #[error("window [{lo}, {hi}] is empty")]
    EmptyWindow { lo: u64, hi: u64 },
    #[error("prefix must be nonempty and non-decreasing")]
    BadPrefix,
    #[error("difference bound {k} exceeds half the horizon {horizon}")]
    DifferenceBoundTooLarge { k: u64, horizon: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SumsetTable {
    pub horizon: u64,
    pub m: usize,
    pub layers: Vec<BitSet>,
    pub weights_used: usize,
    last_weight: u64,
    /// Inclusive bit span `[lo, hi]` that can be nonzero in each layer.
    spans: Vec<Option<(usize, usize)>>,
}

fn check_increasing(weights: &[u64]) -> Result<(), CoverageError> {
    if weights.first() == Some(&0) || weights.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoverageError::NotIncreasing);
    }
    Ok(())
}

impl SumsetTable {
    pub fn new(m: usize, horizon: u64) -> Result<Self, CoverageError> {
        if m == 0 {
            return Err(CoverageError::NoLayers);
        }
        if horizon == 0 {
            return Err(CoverageError::ZeroHorizon);
        }
        let len = horizon as usize + 1;
        let mut layers = vec![BitSet::new(len); m + 1];
        layers[0].insert(0);
        let mut spans = vec![None; m + 1];
        spans[0] = Some((0, 0));
        Ok(SumsetTable { horizon, m, layers, weights_used: 0, last_weight: 0, spans })
    }

    /// Builds the `m`-layer table of `weights` (strictly increasing) over `[0, horizon]`.
    pub fn build(weights: &[u64], m: usize, horizon: u64) -> Result<Self, CoverageError> {
        check_increasing(weights)?;
        let mut table = Self::new(m, horizon)?;
        for &w in weights {
            if w > horizon {
                break;
            }
            table.push(w)?;
        }
        Ok(table)
    }

    /// Feeds one more weight, larger than every weight fed so far. Weights
    /// above the horizon are counted but change nothing.
    pub fn push(&mut self, w: u64) -> Result<(), CoverageError> {
        if w == 0 || w <= self.last_weight {
            return Err(CoverageError::NotIncreasing);
        }
        self.last_weight = w;
        self.weights_used += 1;
        if w > self.horizon {
            return Ok(());
        }
        let shift = w as usize;
        let top = self.horizon as usize;
        for d in (1..=self.m).rev() {
            let Some((lo, hi)) = self.spans[d - 1] else { continue };
            if lo + shift > top {
                continue;
            }
            let (below, above) = self.layers.split_at_mut(d);
            above[0].or_shifted(&below[d - 1], shift, lo, hi);
            let added = (lo + shift, (hi + shift).min(top));
            self.spans[d] = Some(match self.spans[d] {
                None => added,
                Some((a, b)) => (a.min(added.0), b.max(added.1)),
            });
        }
        Ok(())
    }

    pub fn layer(&self, d: usize) -> Result<&BitSet, CoverageError> {
        self.layers.get(d).ok_or(CoverageError::NoSuchLayer { layer: d, m: self.m })
    }

    /// Union of layers `lo..=hi` (the "at most m summands" variant).
    pub fn union_layers(&self, lo: usize, hi: usize) -> Result<BitSet, CoverageError> {
        if hi > self.m {
            return Err(CoverageError::NoSuchLayer { layer: hi, m: self.m });
        }
        let mut out = BitSet::new(self.horizon as usize + 1);
        for layer in &self.layers[lo..=hi] {
            out.union_with(layer);
        }
        Ok(out)
    }

    pub fn report(&self, layer: usize, window: (u64, u64)) -> Result<CoverageReport, CoverageError> {
        report(self.layer(layer)?, window)
    }
}

/// All finite sums of distinct weights that are `<= horizon`, by the
/// in-place subset-sum closure `set |= set << w`.
pub fn build_distinct_sums(weights: &[u64], horizon: u64) -> Result<BitSet, CoverageError> {
    check_increasing(weights)?;
    if horizon == 0 {
        return Err(CoverageError::ZeroHorizon);
    }
    let mut set = BitSet::new(horizon as usize + 1);
    set.insert(0);
    let mut hi = 0usize;
    for &w in weights {
        if w > horizon {
            break;
        }
        set.or_shifted_self(w as usize, hi);
        hi = (hi + w as usize).min(horizon as usize);
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub window: (u64, u64),
    pub covered_count: u64,
    /// First [`MAX_UNCOVERED_LISTED`] uncovered integers, ascending.
    pub uncovered: Vec<u64>,
    pub uncovered_total: u64,
    /// Smallest `t` with `[t, hi]` fully covered; `None` if `hi` is uncovered.
    pub threshold_n0: Option<u64>,
}

impl CoverageReport {
    pub fn uncovered_truncated(&self) -> bool {
        self.uncovered_total as usize > self.uncovered.len()
    }

    /// Largest uncovered integer in the window.
    pub fn max_uncovered(&self) -> Option<u64> {
        match self.threshold_n0 {
            None => Some(self.window.1),
            Some(t) if t > self.window.0 => Some(t - 1),
            Some(_) => None,
        }
    }
}

/// Scans `set` over the inclusive window `[lo, hi]`.
pub fn report(set: &BitSet, window: (u64, u64)) -> Result<CoverageReport, CoverageError> {
    let (lo, hi) = window;
    if lo > hi {
        return Err(CoverageError::EmptyWindow { lo, hi });
    }
    let horizon = set.len() as u64 - 1;
    if hi > horizon {
        return Err(CoverageError::WindowExceedsHorizon { lo, hi, horizon });
    }
    let (l, h) = (lo as usize, hi as usize);
    let covered_count = set.count_range(l, h) as u64;
    let uncovered_total = hi - lo + 1 - covered_count;
    let uncovered = set.iter_zeros_in(l, h).take(MAX_UNCOVERED_LISTED).map(|x| x as u64).collect();
    let threshold_n0 = match set.last_zero_in(l, h) {
        None => Some(lo),
        Some(z) if z == h => None,
        Some(z) => Some(z as u64 + 1),
    };
    Ok(CoverageReport { window, covered_count, uncovered, uncovered_total, threshold_n0 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrownVerdict {
    pub complete: bool,
    /// 1-based index of the first term breaking `a_1 = 1` or
    /// `a_{n+1} <= a_1 + ⋯ + a_n + 1`.
    pub first_violation_index: Option<usize>,
}

/// Brown's criterion on a non-decreasing prefix.
pub fn brown_criterion(prefix: &[u64]) -> Result<BrownVerdict, CoverageError> {
    if prefix.is_empty() || prefix.windows(2).any(|w| w[0] > w[1]) {
        return Err(CoverageError::BadPrefix);
    }
    if prefix[0] != 1 {
        return Ok(BrownVerdict { complete: false, first_violation_index: Some(1) });
    }
    let mut sum: u128 = 1;
    for (i, &a) in prefix.iter().enumerate().skip(1) {
        if a as u128 > sum + 1 {
            return Ok(BrownVerdict { complete: false, first_violation_index: Some(i + 1) });
        }
        sum += a as u128;
    }
    Ok(BrownVerdict { complete: true, first_violation_index: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceSetReport {
    pub k: u64,
    /// Every realized difference in `[0, K]` is a monoid member.
    pub containment_holds: bool,
    pub violations: Vec<u64>,
    pub realized_count: u64,
    pub member_count: u64,
    /// Share of monoid members in `[0, K]` realized as differences.
    pub saturation_fraction: f64,
}

/// Compares `(W - W) ∩ [0, K]` with the monoid of the gap support.
pub fn difference_set_check(
    seq: &WeightSequence,
    desc: &SemigroupDescriptor,
    k: u64,
) -> Result<DifferenceSetReport, CoverageError> {
    if k > seq.horizon / 2 {
        return Err(CoverageError::DifferenceBoundTooLarge { k, horizon: seq.horizon });
    }
    let mut realized = BitSet::new(k as usize + 1);
    realized.insert(0);
    let w = &seq.weights;
    for i in 0..w.len() {
        for &later in &w[i + 1..] {
            let diff = later - w[i];
            if diff > k {
                break;
            }
            realized.insert(diff as usize);
        }
    }
    let violations: Vec<u64> = realized.iter_ones().map(|x| x as u64).filter(|&x| !desc.member(x)).collect();
    let member_count = (0..=k).filter(|&x| desc.member(x)).count() as u64;
    let realized_members = realized.iter_ones().filter(|&x| desc.member(x as u64)).count() as u64;
    Ok(DifferenceSetReport {
        k,
        containment_holds: violations.is_empty(),
        violations,
        realized_count: realized.count_ones() as u64,
        member_count,
        saturation_fraction: realized_members as f64 / member_count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::GapDistribution;
    use crate::semigroup;
    use crate::sequence::generate;

    fn ones(set: &BitSet) -> Vec<u64> {
        set.iter_ones().map(|x| x as u64).collect()
    }

    /// Exhaustive d-subset sums, clipped at `horizon`.
    fn subset_sums(weights: &[u64], d: usize, horizon: u64) -> Vec<u64> {
        fn rec(w: &[u64], start: usize, left: usize, acc: u64, horizon: u64, out: &mut Vec<u64>) {
            if acc > horizon {
                return;
            }
            if left == 0 {
                out.push(acc);
                return;
            }
            for i in start..w.len() {
                rec(w, i + 1, left - 1, acc + w[i], horizon, out);
            }
        }
        let mut out = Vec::new();
        rec(weights, 0, d, 0, horizon, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    /// All distinct-index sums by direct enumeration of the 2^n subsets.
    fn all_subset_sums(weights: &[u64], horizon: u64) -> Vec<u64> {
        let n = weights.len();
        let mut out: Vec<u64> = (0u32..1 << n)
            .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| weights[i]).sum())
            .filter(|&s| s <= horizon)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    #[test]
    fn pair_sums_of_powers_of_two() {
        let t = SumsetTable::build(&[1, 2, 4, 8], 2, 15).unwrap();
        assert_eq!(ones(t.layer(2).unwrap()), vec![3, 5, 6, 9, 10, 12]);
        assert_eq!(subset_sums(&[1, 2, 4, 8], 2, 15), vec![3, 5, 6, 9, 10, 12]);
    }

    #[test]
    fn single_triple() {
        let t = SumsetTable::build(&[1, 2, 3], 3, 10).unwrap();
        assert_eq!(ones(t.layer(3).unwrap()), vec![6]);
        assert_eq!(ones(t.layer(0).unwrap()), vec![0]);
    }

    #[test]
    fn layer_one_is_the_weight_set() {
        let d = GapDistribution::finite(&[(2, 0.5), (3, 0.5)]).unwrap();
        let seq = generate(&d, 4, 500).unwrap();
        let t = SumsetTable::build(&seq.weights, 1, 500).unwrap();
        let expect: Vec<u64> = seq.weights.iter().copied().filter(|&w| w <= 500).collect();
        assert_eq!(ones(t.layer(1).unwrap()), expect);
    }

    #[test]
    fn distinct_sums_examples() {
        let powers: Vec<u64> = (0..7).map(|k| 1u64 << k).collect();
        let s = build_distinct_sums(&powers, 100).unwrap();
        assert_eq!(s.count_ones(), 101);
        let r = report(&s, (1, 100)).unwrap();
        assert!(r.uncovered.is_empty());
        assert_eq!(r.threshold_n0, Some(1));

        let s = build_distinct_sums(&[2, 4, 6], 12).unwrap();
        assert_eq!(ones(&s), vec![0, 2, 4, 6, 8, 10, 12]);
        let r = report(&s, (0, 12)).unwrap();
        assert_eq!(r.threshold_n0, Some(12));
        assert_eq!(r.uncovered, vec![1, 3, 5, 7, 9, 11]);

        let s = build_distinct_sums(&[5, 6], 11).unwrap();
        assert_eq!(ones(&s), vec![0, 5, 6, 11]);
    }

    #[test]
    fn report_against_semigroup() {
        // Multiples of 5 and 6 as distinct weights: {5,6,10,12,15,18,20,24,25}.
        let desc = semigroup::build(&[5, 6]).unwrap();
        let mut members = BitSet::new(26);
        (0..=25).filter(|&x| desc.member(x)).for_each(|x| members.insert(x as usize));
        let r = report(&members, (0, 25)).unwrap();
        for x in [13, 14, 19] {
            assert!(r.uncovered.contains(&x));
        }
        assert_eq!(r.threshold_n0, Some(20));
        assert_eq!(r.covered_count + r.uncovered_total, 26);
        assert_eq!(r.max_uncovered(), Some(19));
    }

    #[test]
    fn report_edges() {
        let t = SumsetTable::build(&[3], 1, 5).unwrap();
        let r = t.report(0, (0, 0)).unwrap();
        assert_eq!(r.covered_count, 1);
        assert_eq!(r.threshold_n0, Some(0));
        let r = t.report(1, (0, 5)).unwrap();
        assert_eq!(r.threshold_n0, None);
        assert_eq!(r.max_uncovered(), Some(5));
        assert_eq!(t.report(1, (0, 6)), Err(CoverageError::WindowExceedsHorizon { lo: 0, hi: 6, horizon: 5 }));
        assert_eq!(t.report(1, (3, 2)), Err(CoverageError::EmptyWindow { lo: 3, hi: 2 }));
        assert_eq!(t.report(2, (0, 1)), Err(CoverageError::NoSuchLayer { layer: 2, m: 1 }));
    }

    #[test]
    fn uncovered_list_is_truncated_with_exact_total() {
        let t = SumsetTable::build(&[1], 1, 50_000).unwrap();
        let r = t.report(1, (0, 50_000)).unwrap();
        assert_eq!(r.uncovered.len(), MAX_UNCOVERED_LISTED);
        assert_eq!(r.uncovered_total, 50_000);
        assert!(r.uncovered_truncated());
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(SumsetTable::build(&[2, 2], 1, 10), Err(CoverageError::NotIncreasing));
        assert_eq!(SumsetTable::build(&[2], 0, 10), Err(CoverageError::NoLayers));
        assert_eq!(build_distinct_sums(&[3, 1], 10), Err(CoverageError::NotIncreasing));
        let mut t = SumsetTable::build(&[2, 5], 2, 10).unwrap();
        assert_eq!(t.push(5), Err(CoverageError::NotIncreasing));
        assert!(t.push(11).is_ok());
        assert_eq!(t.weights_used, 3);
    }

    #[test]
    fn brown_examples() {
        let powers: Vec<u64> = (0..20).map(|k| 1u64 << k).collect();
        assert_eq!(brown_criterion(&powers).unwrap(), BrownVerdict { complete: true, first_violation_index: None });
        assert!(brown_criterion(&[1, 1, 2, 3, 5, 8, 13, 21]).unwrap().complete);
        // 1 + 2 + 4 = 7, so the fourth term may be at most 8.
        assert_eq!(brown_criterion(&[1, 2, 4, 9]).unwrap().first_violation_index, Some(4));
        assert!(brown_criterion(&[1, 2, 4, 8]).unwrap().complete);
        assert_eq!(brown_criterion(&[2, 3]).unwrap().first_violation_index, Some(1));
        assert_eq!(brown_criterion(&[]), Err(CoverageError::BadPrefix));
        assert_eq!(brown_criterion(&[1, 3, 2]), Err(CoverageError::BadPrefix));
    }

    #[test]
    fn brown_agrees_with_distinct_sums() {
        for prefix in [vec![1u64, 2, 3, 7, 14], vec![1, 2, 4, 9, 10], vec![1, 1, 3, 6, 12]] {
            let total: u64 = prefix.iter().sum();
            // Repeated values are distinct terms, so enumerate index subsets.
            let n = prefix.len();
            let sums: std::collections::BTreeSet<u64> = (0u32..1 << n)
                .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).map(|i| prefix[i]).sum())
                .collect();
            let complete_by_enum = (0..=total).all(|x| sums.contains(&x));
            assert_eq!(brown_criterion(&prefix).unwrap().complete, complete_by_enum, "{prefix:?}");
        }
    }

    #[test]
    fn difference_sets() {
        let d = GapDistribution::finite(&[(2, 0.5), (3, 0.5)]).unwrap();
        let desc = semigroup::build(&[2, 3]).unwrap();
        let seq = generate(&d, 12, 20_000).unwrap();
        let r = difference_set_check(&seq, &desc, 100).unwrap();
        assert!(r.containment_holds);
        assert_eq!(r.saturation_fraction, 1.0);
        assert!(matches!(
            difference_set_check(&seq, &desc, 10_001),
            Err(CoverageError::DifferenceBoundTooLarge { .. })
        ));

        let five = GapDistribution::finite(&[(5, 1.0)]).unwrap();
        let seq = generate(&five, 0, 1000).unwrap();
        let r = difference_set_check(&seq, &semigroup::build(&[5]).unwrap(), 100).unwrap();
        assert!(r.containment_holds);
        assert_eq!(r.realized_count, 21);
        assert_eq!(r.member_count, 21);
    }

    #[test]
    fn exactness_small_cases() {
        let weights = [3u64, 4, 9, 10, 17, 30];
        let t = SumsetTable::build(&weights, 4, 60).unwrap();
        for d in 0..=4 {
            assert_eq!(ones(t.layer(d).unwrap()), subset_sums(&weights, d, 60), "layer {d}");
        }
        assert_eq!(ones(&build_distinct_sums(&weights, 60).unwrap()), all_subset_sums(&weights, 60));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn weights() -> impl Strategy<Value = (Vec<u64>, u64)> {
            (1u64..=2000).prop_flat_map(|horizon| {
                (
                    proptest::collection::btree_set(1u64..=horizon.max(2), 0..=20)
                        .prop_map(|s| s.into_iter().collect::<Vec<_>>()),
                    Just(horizon),
                )
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(96))]

            #[test]
            fn layers_match_enumeration((w, horizon) in weights()) {
                let t = SumsetTable::build(&w, 4, horizon).unwrap();
                for d in 0..=4 {
                    prop_assert_eq!(ones(t.layer(d).unwrap()), subset_sums(&w, d, horizon));
                }
                let all = build_distinct_sums(&w, horizon).unwrap();
                prop_assert_eq!(ones(&all), all_subset_sums(&w, horizon));
                let union = t.union_layers(1, 4).unwrap();
                prop_assert!(union.is_subset(&all));
                let g = w.iter().copied().fold(0, crate::gcd);
                for d in 1..=4 {
                    for x in t.layer(d).unwrap().iter_ones() {
                        prop_assert_eq!(x as u64 % g.max(1), 0);
                    }
                }
            }

            #[test]
            fn extension_is_monotone((w, horizon) in weights(), extra in 1u64..500) {
                let t = SumsetTable::build(&w, 3, horizon).unwrap();
                let mut t2 = t.clone();
                let next = w.last().copied().unwrap_or(0) + extra;
                t2.push(next).unwrap();
                for d in 0..=3 {
                    prop_assert!(t.layer(d).unwrap().is_subset(t2.layer(d).unwrap()));
                }
            }

            #[test]
            fn report_counts_are_consistent((w, horizon) in weights(), a in 0u64..2000, b in 0u64..2000) {
                let set = build_distinct_sums(&w, horizon).unwrap();
                let (lo, hi) = (a.min(b).min(horizon), a.max(b).min(horizon));
                let r = report(&set, (lo, hi)).unwrap();
                prop_assert_eq!(r.covered_count + r.uncovered_total, hi - lo + 1);
                if let Some(t) = r.threshold_n0 {
                    prop_assert!(t == lo || !set.contains(t as usize - 1));
                    prop_assert!((t..=hi).all(|x| set.contains(x as usize)));
                } else {
                    prop_assert!(!set.contains(hi as usize));
                }
            }
        }
    }
}
