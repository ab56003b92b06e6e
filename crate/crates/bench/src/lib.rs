//! Fixtures shared by the benchmarks.

use designvar::{reveal, Design, ObservedData, PotentialOutcomes};

/// Deterministic heterogeneous science table with no ties.
pub fn science(n: usize) -> PotentialOutcomes {
    let y0: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 + 0.1 * i as f64).collect();
    let y1: Vec<f64> = y0.iter().enumerate().map(|(i, y)| y + 1.0 + 0.05 * (i % 3) as f64).collect();
    PotentialOutcomes::new(y0, y1).expect("valid table")
}

/// Observed data at the first support vector of `d`.
pub fn observed(d: &Design) -> ObservedData {
    let (s, _) = d.support().expect("enumerable design");
    reveal(&science(d.n()), s[0])
}
