//! Random gap processes and the additive structure of the weight sequences
//! they generate.
//!
//! A gap process draws i.i.d. positive-integer gaps `X_1, X_2, …` and forms
//! the increasing weights `W_n = X_1 + ⋯ + X_n`. This crate provides:
//!
//! - [`distributions`]: the supported gap laws, exact samplers and the
//!   analytic quantities (support gcd, star ratio, MGF radius) deciding when
//!   the m-fold completeness result applies;
//! - [`sequence`]: realized weight sequences and their diagnostics (density,
//!   running maximum gap, `W_n / n²`, vaulting index);
//! - [`semigroup`]: an exact numerical-semigroup engine (Apéry sets,
//!   Frobenius numbers, witnesses, constructive stamp bounds);
//! - [`modular_chain`]: the circulant Markov chain a gap law induces on
//!   `Z/MZ`;
//! - [`coverage`]: word-parallel layered subset-sum tables for sums of
//!   exactly `m` distinct weights, distinct-sum closure, Brown's criterion
//!   and the difference-set check;
//! - [`experiments`]: declarative seed-fanned experiments with JSON reports.

pub mod bitset;
pub mod coverage;
pub mod distributions;
pub mod experiments;
pub mod modular_chain;
pub mod rng;
pub mod semigroup;
pub mod sequence;
pub mod stats;

pub use coverage::{CoverageReport, SumsetTable};
pub use distributions::{AdmissibilityReport, DistSpec, GapDistribution};
pub use experiments::{ExperimentConfig, ExperimentReport};
pub use modular_chain::ModularChain;
pub use semigroup::SemigroupDescriptor;
pub use sequence::{VaultRecord, WeightSequence};

/// Greatest common divisor by Euclid's algorithm; `gcd(0, x) = x`.
pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}
