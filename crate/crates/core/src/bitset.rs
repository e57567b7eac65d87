//! Fixed-length bit sets over `[0, len)` with word-parallel shift-or.

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq)]
pub struct BitSet {
    words: Vec<u64>,
    len: usize,
}

impl std::fmt::Debug for BitSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitSet").field("len", &self.len).field("ones", &self.count_ones()).finish()
    }
}

impl BitSet {
    pub fn new(len: usize) -> Self {
        BitSet { words: vec![0; len.div_ceil(WORD)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / WORD] |= 1 << (i % WORD);
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of set bits in `[lo, hi]`.
    pub fn count_range(&self, lo: usize, hi: usize) -> usize {
        if lo > hi || lo >= self.len {
            return 0;
        }
        let hi = hi.min(self.len - 1);
        let (wl, wh) = (lo / WORD, hi / WORD);
        let lo_mask = !0u64 << (lo % WORD);
        let hi_mask = !0u64 >> (WORD - 1 - hi % WORD);
        if wl == wh {
            return (self.words[wl] & lo_mask & hi_mask).count_ones() as usize;
        }
        let mut n = (self.words[wl] & lo_mask).count_ones() as usize;
        n += self.words[wl + 1..wh].iter().map(|w| w.count_ones() as usize).sum::<usize>();
        n + (self.words[wh] & hi_mask).count_ones() as usize
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + b)
            })
        })
    }

    /// Zero bits in `[lo, hi]`, ascending.
    pub fn iter_zeros_in(&self, lo: usize, hi: usize) -> impl Iterator<Item = usize> + '_ {
        let hi = hi.min(self.len.saturating_sub(1));
        let (wl, wh) = (lo / WORD, hi / WORD);
        let empty = lo > hi || self.len == 0;
        let range = if empty { 0..0 } else { wl..wh + 1 };
        range.flat_map(move |wi| {
            let mut w = !self.words[wi];
            if wi == wl {
                w &= !0u64 << (lo % WORD);
            }
            if wi == wh {
                w &= !0u64 >> (WORD - 1 - hi % WORD);
            }
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + b)
            })
        })
    }

    /// Largest zero bit in `[lo, hi]`.
    pub fn last_zero_in(&self, lo: usize, hi: usize) -> Option<usize> {
        if lo > hi || self.len == 0 {
            return None;
        }
        let hi = hi.min(self.len - 1);
        let (wl, wh) = (lo / WORD, hi / WORD);
        for wi in (wl..=wh).rev() {
            let mut w = !self.words[wi];
            if wi == wl {
                w &= !0u64 << (lo % WORD);
            }
            if wi == wh {
                w &= !0u64 >> (WORD - 1 - hi % WORD);
            }
            if w != 0 {
                return Some(wi * WORD + WORD - 1 - w.leading_zeros() as usize);
            }
        }
        None
    }

    pub fn union_with(&mut self, other: &BitSet) {
        assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn is_subset(&self, other: &BitSet) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// `self |= (src << shift)`, truncated at `len`, reading only source
    /// bits in `[src_lo, src_hi]` (rounded out to whole words).
    pub fn or_shifted(&mut self, src: &BitSet, shift: usize, src_lo: usize, src_hi: usize) {
        assert_eq!(self.len, src.len);
        if shift >= self.len || src_lo > src_hi {
            return;
        }
        let nwords = self.words.len();
        let (q, r) = (shift / WORD, shift % WORD);
        let t0 = src_lo / WORD + q;
        // The top source word spills into one more target word when r > 0.
        let t1 = ((src_hi.min(self.len - 1)) / WORD + q + 1 + (r > 0) as usize).min(nwords);
        if t0 >= t1 {
            return;
        }
        let dst = &mut self.words[t0..t1];
        if r == 0 {
            let s = &src.words[t0 - q..t1 - q];
            for (d, &x) in dst.iter_mut().zip(s) {
                *d |= x;
            }
        } else {
            let rr = WORD - r;
            // Target word t reads source words t-q (high part) and t-q-1.
            let (first, rest) = dst.split_first_mut().expect("nonempty range");
            let lo_src = t0 - q;
            *first |= (src.words[lo_src] << r) | if lo_src > 0 { src.words[lo_src - 1] >> rr } else { 0 };
            let hi_part = &src.words[lo_src + 1..t1 - q];
            let lo_part = &src.words[lo_src..t1 - q - 1];
            for ((d, &h), &l) in rest.iter_mut().zip(hi_part).zip(lo_part) {
                *d |= (h << r) | (l >> rr);
            }
        }
        self.clear_tail();
    }

    /// `self |= (self << shift)` in place, truncated at `len`: every new
    /// bit comes from a bit that was set before the call.
    pub fn or_shifted_self(&mut self, shift: usize, src_hi: usize) {
        if shift == 0 || shift >= self.len {
            return;
        }
        let (q, r) = (shift / WORD, shift % WORD);
        let t1 = ((src_hi.min(self.len - 1)) / WORD + q + 1 + (r > 0) as usize).min(self.words.len());
        let w = &mut self.words;
        if r == 0 {
            for t in (q..t1).rev() {
                w[t] |= w[t - q];
            }
        } else {
            let rr = WORD - r;
            // Descending: w[t-q] and w[t-q-1] are still unmodified when read.
            for t in (q + 1..t1).rev() {
                w[t] |= (w[t - q] << r) | (w[t - q - 1] >> rr);
            }
            if q < t1 {
                w[q] |= w[0] << r;
            }
        }
        self.clear_tail();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_bits(len: usize, bits: &[usize]) -> BitSet {
        let mut s = BitSet::new(len);
        bits.iter().filter(|&&b| b < len).for_each(|&b| s.insert(b));
        s
    }

    #[test]
    fn basic_ops() {
        let s = from_bits(130, &[0, 63, 64, 129]);
        assert!(s.contains(63) && s.contains(64) && !s.contains(65) && !s.contains(500));
        assert_eq!(s.count_ones(), 4);
        assert_eq!(s.count_range(1, 128), 2);
        assert_eq!(s.iter_ones().collect::<Vec<_>>(), vec![0, 63, 64, 129]);
        assert_eq!(s.iter_zeros_in(60, 66).collect::<Vec<_>>(), vec![60, 61, 62, 65, 66]);
        assert_eq!(s.last_zero_in(0, 129), Some(128));
        assert_eq!(from_bits(3, &[0, 1, 2]).last_zero_in(0, 2), None);
    }

    proptest! {
        #[test]
        fn shift_or_matches_naive(
            len in 1usize..400,
            a in proptest::collection::vec(0usize..400, 0..40),
            b in proptest::collection::vec(0usize..400, 0..40),
            shift in 0usize..420,
        ) {
            let src = from_bits(len, &a);
            let mut dst = from_bits(len, &b);
            let mut expect = dst.clone();
            for x in src.iter_ones() {
                if x + shift < len {
                    expect.insert(x + shift);
                }
            }
            dst.or_shifted(&src, shift, 0, len - 1);
            prop_assert_eq!(&dst, &expect);

            let mut same = src.clone();
            let mut expect_self = src.clone();
            for x in src.iter_ones() {
                if x + shift < len {
                    expect_self.insert(x + shift);
                }
            }
            same.or_shifted_self(shift, len - 1);
            prop_assert_eq!(same, expect_self);
        }

        #[test]
        fn restricted_source_range(
            len in 1usize..300,
            a in proptest::collection::vec(0usize..300, 0..30),
            shift in 0usize..300,
        ) {
            let src = from_bits(len, &a);
            let (lo, hi) = match (src.iter_ones().next(), src.iter_ones().last()) {
                (Some(l), Some(h)) => (l, h),
                _ => return Ok(()),
            };
            let mut full = BitSet::new(len);
            full.or_shifted(&src, shift, 0, len - 1);
            let mut part = BitSet::new(len);
            part.or_shifted(&src, shift, lo, hi);
            prop_assert_eq!(full, part);
        }
    }
}
