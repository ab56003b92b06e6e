//! Baseline estimator that bounds unidentifiable products with Young's inequality.

use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimators::{check_pi, EstimatorKind, VarianceEstimate};
use crate::outcomes::ObservedData;
use crate::sum::Accumulator;

/// Horvitz-Thompson estimate of the expansion with coefficients p/(π π') - N/(N - 1), where
/// every product Y_i(a) Y_j(b) whose joint cell has probability zero is replaced by
/// (Y_i(a)² + Y_j(b)²)/2 times the absolute coefficient. Conservative by construction.
pub fn v_am(d: &Design, obs: &ObservedData) -> Result<VarianceEstimate> {
    let n = d.n();
    if obs.n() != n {
        return Err(Error::invalid("observed data and design sizes differ"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two units"));
    }
    let pi = d.exact_propensities()?;
    check_pi(pi, n)?;
    let t = d.pair_table()?;
    let (w, y) = (obs.w, &obs.y);
    let nf = n as f64;
    let r = nf / (nf - 1.0);
    let marg = |i: usize, a: bool| if a { pi[i] } else { 1.0 - pi[i] };
    let mut acc = Accumulator::new();
    let mut zero_cells = 0usize;
    for i in 0..n {
        let m = marg(i, w.get(i));
        acc.add(y[i] * y[i] / (m * m));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let cells = t.cells(i, j);
            for (k, &p) in cells.iter().enumerate() {
                let (a, b) = (k >= 2, k % 2 == 1);
                let (pa, pb) = (marg(i, a), marg(j, b));
                let kappa = p / (pa * pb) - r;
                if p > 0.0 {
                    if w.get(i) == a && w.get(j) == b {
                        let s = if a == b { 1.0 } else { -1.0 };
                        acc.add(s * kappa * y[i] * y[j] / p);
                    }
                } else {
                    zero_cells += 1;
                    let half = kappa.abs() / 2.0;
                    if w.get(i) == a {
                        acc.add(half * y[i] * y[i] / pa);
                    }
                    if w.get(j) == b {
                        acc.add(half * y[j] * y[j] / pb);
                    }
                }
            }
        }
    }
    let v = acc.value() / (nf * nf);
    Ok(VarianceEstimate::exact(
        EstimatorKind::AronowMiddleton,
        v,
        serde_json::json!({"zero_cells": zero_cells / 2}),
    ))
}
