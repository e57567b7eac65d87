//! Numerical semigroups `M(s_1, …, s_k)`: membership through the Apéry set
//! of the smallest generator, Frobenius numbers, explicit witnesses, and the
//! constructive stamp bounds.
//!
//! Everything is computed on the reduced generators `s_i / d`, with
//! `d = gcd(s_1, …, s_k)`. A non-reduced semigroup has infinitely many
//! non-members, so its Frobenius number is only reported in reduced form
//! together with `d`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcd;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SemigroupError {
    #[error("at least one generator is required")]
    NoGenerators,
    #[error("generators must be strictly increasing positive integers")]
    NotIncreasing,
    #[error("generators are not coprime (gcd {0})")]
    NotCoprime(u64),
    #[error("stamp bound does not fit in 64 bits")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemigroupDescriptor {
    pub generators: Vec<u64>,
    pub d: u64,
    /// `generators / d`.
    pub reduced: Vec<u64>,
    /// Smallest reduced-monoid element in each class mod `reduced[0]`.
    pub apery: Vec<u64>,
    /// Generator index that last improved each class (`None` for class 0).
    predecessor: Vec<Option<usize>>,
    /// Largest integer outside the reduced monoid; `-1` when it is all of N.
    pub frobenius_reduced: i64,
}

fn validate(generators: &[u64]) -> Result<(), SemigroupError> {
    if generators.is_empty() {
        return Err(SemigroupError::NoGenerators);
    }
    if generators[0] == 0 || generators.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SemigroupError::NotIncreasing);
    }
    Ok(())
}

/// Builds the descriptor of `M(generators)`.
///
/// The Apéry set of `a = s_1/d` is found by round-robin relaxation: pass
/// over every class and every generator, lowering `apery[(r + g) mod a]` to
/// `apery[r] + g`, until a full pass changes nothing.
pub fn build(generators: &[u64]) -> Result<SemigroupDescriptor, SemigroupError> {
    validate(generators)?;
    let d = generators.iter().copied().fold(0, gcd);
    let reduced: Vec<u64> = generators.iter().map(|&s| s / d).collect();
    let a = reduced[0] as usize;
    let mut apery = vec![u64::MAX; a];
    let mut predecessor = vec![None; a];
    apery[0] = 0;
    loop {
        let mut changed = false;
        for r in 0..a {
            let base = apery[r];
            if base == u64::MAX {
                continue;
            }
            for (gi, &g) in reduced.iter().enumerate().skip(1) {
                let target = (r + (g % a as u64) as usize) % a;
                let candidate = base + g;
                if candidate < apery[target] {
                    apery[target] = candidate;
                    predecessor[target] = Some(gi);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    debug_assert!(apery.iter().all(|&x| x != u64::MAX), "reduced generators are coprime");
    let frobenius_reduced = *apery.iter().max().unwrap() as i64 - a as i64;
    Ok(SemigroupDescriptor {
        generators: generators.to_vec(),
        d,
        reduced,
        apery,
        predecessor,
        frobenius_reduced,
    })
}

impl SemigroupDescriptor {
    fn modulus(&self) -> u64 {
        self.reduced[0]
    }

    /// `x ∈ M(generators)`.
    pub fn member(&self, x: u64) -> bool {
        if !x.is_multiple_of(self.d) {
            return false;
        }
        let y = x / self.d;
        self.apery[(y % self.modulus()) as usize] <= y
    }

    /// Nonnegative coefficients `n_i` with `Σ n_i s_i = x`, recovered by
    /// walking the relaxation's predecessor links.
    pub fn representation(&self, x: u64) -> Option<Vec<u64>> {
        if !self.member(x) {
            return None;
        }
        let a = self.modulus();
        let y = x / self.d;
        let mut coeffs = vec![0u64; self.reduced.len()];
        let mut class = (y % a) as usize;
        coeffs[0] = (y - self.apery[class]) / a;
        while let Some(gi) = self.predecessor[class] {
            coeffs[gi] += 1;
            let g = self.reduced[gi];
            class = ((class as u64 + a - g % a) % a) as usize;
        }
        debug_assert_eq!(class, 0);
        Some(coeffs)
    }

    /// A representation of `x` with every coefficient at least 1.
    pub fn positive_representation(&self, x: u64) -> Option<Vec<u64>> {
        let total: u64 = self.generators.iter().sum();
        let rest = x.checked_sub(total)?;
        let mut coeffs = self.representation(rest)?;
        coeffs.iter_mut().for_each(|c| *c += 1);
        Some(coeffs)
    }
}

/// Extended Euclid: `(g, u, v)` with `u·a + v·b = g = gcd(a, b)`.
fn ext_gcd(a: i128, b: i128) -> (i128, i128, i128) {
    if b == 0 {
        (a, 1, 0)
    } else {
        let (g, u, v) = ext_gcd(b, a % b);
        (g, v, u - (a / b) * v)
    }
}

/// A Bezout certificate `1 = Σ a_i s_i` for coprime generators, folded left
/// over the generators. At each fold `g' = u·g + v·s`, `u` is reduced to the
/// representative of smallest magnitude mod `s/g'` (ties go to the positive
/// one), so the certificate is canonical.
pub fn bezout(generators: &[u64]) -> Result<Vec<i128>, SemigroupError> {
    validate(generators)?;
    let mut g = generators[0] as i128;
    let mut coeffs = vec![1i128];
    for &s in &generators[1..] {
        let s = s as i128;
        let (g2, u0, _) = ext_gcd(g, s);
        let period = s / g2;
        let mut u = u0.rem_euclid(period);
        if 2 * u > period {
            u -= period;
        }
        let v = (g2 - u * g) / s;
        coeffs.iter_mut().for_each(|c| *c *= u);
        coeffs.push(v);
        g = g2;
    }
    if g != 1 {
        return Err(SemigroupError::NotCoprime(g as u64));
    }
    Ok(coeffs)
}

/// The constructive stamp threshold `n0 = Σ_{a_i < 0} s_1 · (-a_i) · s_i`
/// for the canonical Bezout certificate. Every integer `>= n0` lies in the
/// monoid. Other certificates give other, possibly smaller, valid bounds.
pub fn stamp_bound_n0(generators: &[u64]) -> Result<(u64, Vec<i128>), SemigroupError> {
    let coeffs = bezout(generators)?;
    let s1 = generators[0] as i128;
    let mut n0: i128 = 0;
    for (&a, &s) in coeffs.iter().zip(generators) {
        if a < 0 {
            let term = s1.checked_mul(-a).and_then(|t| t.checked_mul(s as i128)).ok_or(SemigroupError::Overflow)?;
            n0 = n0.checked_add(term).ok_or(SemigroupError::Overflow)?;
        }
    }
    let n0 = u64::try_from(n0).map_err(|_| SemigroupError::Overflow)?;
    Ok((n0, coeffs))
}

/// `n0 + Σ t_i` on the reduced generators `t_i = s_i / d`: every multiple
/// `n·d` with `n` at or beyond it is a combination with all coefficients
/// positive.
pub fn stamp_bound_n0_prime(generators: &[u64]) -> Result<u64, SemigroupError> {
    validate(generators)?;
    let d = generators.iter().copied().fold(0, gcd);
    let reduced: Vec<u64> = generators.iter().map(|&s| s / d).collect();
    let (n0, _) = stamp_bound_n0(&reduced)?;
    reduced.iter().try_fold(n0, |acc, &t| acc.checked_add(t)).ok_or(SemigroupError::Overflow)
}
