//! Chi-square helpers for the statistical experiments.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson goodness-of-fit statistic of `observed` counts against cell
/// probabilities `probs`. Returns `(statistic, degrees of freedom)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> (f64, usize) {
    assert_eq!(observed.len(), probs.len(), "one probability per cell");
    let total: u64 = observed.iter().sum();
    let stat = observed
        .iter()
        .zip(probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let cells = probs.iter().filter(|&&p| p > 0.0).count();
    (stat, cells.saturating_sub(1))
}

/// Two-sample homogeneity statistic over cells where either sample is
/// nonzero. Returns `(statistic, degrees of freedom)`.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize) {
    assert_eq!(a.len(), b.len());
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let n = na + nb;
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        let ea = col * na / n;
        let eb = col * nb / n;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    (stat, cells.saturating_sub(1))
}

/// Upper tail `P(χ²_df > stat)`.
pub fn chi_square_sf(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("positive df").sf(stat)
}

/// Critical value `c` with `P(χ²_df > c) = alpha`.
pub fn chi_square_critical(alpha: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64).expect("positive df").inverse_cdf(1.0 - alpha)
}
