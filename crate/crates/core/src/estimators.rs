//! Point estimators, the ψ functional and exact enumeration oracles.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::outcomes::{mean, reveal, sample_var, ObservedData, PotentialOutcomes};
use crate::sum::{ksum, Accumulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Neyman,
    Decomposition,
    Contrast,
    Pair,
    HajekMse,
    Imputation,
    AronowMiddleton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Exactness {
    Exact,
    MonteCarlo { m: usize, se: f64 },
}

/// A variance (or MSE) estimate with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub kind: EstimatorKind,
    pub exactness: Exactness,
    pub params: serde_json::Value,
    /// Set when the value is negative (possible only for decomposition estimates).
    pub negative: bool,
}

impl VarianceEstimate {
    pub(crate) fn exact(kind: EstimatorKind, value: f64, params: serde_json::Value) -> Self {
        Self { value, kind, exactness: Exactness::Exact, params, negative: value < 0.0 }
    }
}

pub(crate) fn check_pi(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::invalid(format!("{} propensities for {n} units", pi.len())));
    }
    if let Some((i, p)) = pi.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Assumption(format!(
            "positivity fails: propensity of unit {} is {p}",
            i + 1
        )));
    }
    Ok(())
}

/// Horvitz-Thompson estimate of the average treatment effect.
pub fn horvitz_thompson(obs: &ObservedData, pi: &[f64]) -> Result<f64> {
    check_pi(pi, obs.n())?;
    let n = obs.n() as f64;
    Ok(ksum((0..obs.n()).map(|i| {
        if obs.w.get(i) {
            obs.y[i] / pi[i]
        } else {
            -obs.y[i] / (1.0 - pi[i])
        }
    })) / n)
}

pub fn difference_in_means(obs: &ObservedData) -> Result<f64> {
    let (t, c) = (obs.treated_outcomes(), obs.control_outcomes());
    if t.is_empty() || c.is_empty() {
        return Err(Error::Undefined("difference in means needs both groups".into()));
    }
    Ok(mean(&t) - mean(&c))
}

/// Hájek (ratio) estimate; errors when a realized group is empty.
pub fn hajek(obs: &ObservedData, pi: &[f64]) -> Result<f64> {
    check_pi(pi, obs.n())?;
    if obs.w.n_treated() == 0 || obs.w.n_control() == 0 {
        return Err(Error::Undefined("Hajek estimator needs a nonempty treated and control group".into()));
    }
    let t: Vec<usize> = obs.w.treated().collect();
    let c: Vec<usize> = obs.w.controls().collect();
    let mt = ksum(t.iter().map(|&i| obs.y[i] / pi[i])) / ksum(t.iter().map(|&i| 1.0 / pi[i]));
    let mc = ksum(c.iter().map(|&i| obs.y[i] / (1.0 - pi[i]))) / ksum(c.iter().map(|&i| 1.0 / (1.0 - pi[i])));
    Ok(mt - mc)
}

/// c_i = (1 - π_i) Y_i(1) + π_i Y_i(0).
pub fn c_vector(po: &PotentialOutcomes, pi: &[f64]) -> Result<Vec<f64>> {
    check_pi(pi, po.n())?;
    Ok((0..po.n()).map(|i| (1.0 - pi[i]) * po.y1[i] + pi[i] * po.y0[i]).collect())
}

/// Contrast weights u_w: 1/π_i for treated units, -1/(1 - π_i) for controls.
pub fn contrast_weights(w: Assignment, pi: &[f64]) -> Vec<f64> {
    (0..w.n())
        .map(|i| if w.get(i) { 1.0 / pi[i] } else { -1.0 / (1.0 - pi[i]) })
        .collect()
}

#[inline]
fn contrast(w: Assignment, pi: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..v.len() {
        if w.get(i) {
            s += v[i] / pi[i];
        } else {
            s -= v[i] / (1.0 - pi[i]);
        }
    }
    s
}

const CHUNK: usize = 1024;

/// Σ_w p_w f(w) over the support, chunked so the reduction order is fixed.
pub fn support_expectation<F>(d: &Design, f: F) -> Result<f64>
where
    F: Fn(Assignment) -> Result<f64> + Sync,
{
    Ok(support_moments(d, f)?.0)
}

/// (Σ p f, Σ p f²) over the support.
pub fn support_moments<F>(d: &Design, f: F) -> Result<(f64, f64)>
where
    F: Fn(Assignment) -> Result<f64> + Sync,
{
    let (v, p) = d.support()?;
    let parts: Vec<Result<(f64, f64)>> = v
        .par_chunks(CHUNK)
        .zip(p.par_chunks(CHUNK))
        .map(|(vs, ps)| {
            let mut a = Accumulator::new();
            let mut b = Accumulator::new();
            for (w, &pw) in vs.iter().zip(ps) {
                let x = f(*w).map_err(|e| Error::AtRealization { w: *w, source: Box::new(e) })?;
                a.add(pw * x);
                b.add(pw * x * x);
            }
            Ok((a.value(), b.value()))
        })
        .collect();
    let mut a = Accumulator::new();
    let mut b = Accumulator::new();
    for r in parts {
        let (x, y) = r?;
        a.add(x);
        b.add(y);
    }
    Ok((a.value(), b.value()))
}

/// ψ(v) by direct enumeration of the support.
pub fn psi_direct(d: &Design, v: &[f64]) -> Result<f64> {
    let pi = d.exact_propensities()?;
    check_pi(pi, d.n())?;
    if v.len() != d.n() {
        return Err(Error::invalid("vector length does not match the design"));
    }
    let n2 = (d.n() * d.n()) as f64;
    support_expectation(d, |w| {
        let s = contrast(w, pi, v);
        Ok(s * s)
    })
    .map(|x| x / n2)
}

/// Matrix M with ψ(v) = vᵀ M v, built from the pairwise table.
pub fn psi_kernel(d: &Design) -> Result<Arc<DMatrix<f64>>> {
    if let Some(m) = d.kernel.get() {
        return Ok(m.clone());
    }
    let pi = d.exact_propensities()?;
    check_pi(pi, d.n())?;
    let t = d.pair_table()?;
    let n = d.n();
    let n2 = (n * n) as f64;
    let m = DMatrix::from_fn(n, n, |i, j| {
        let c = t.cells(i, j);
        let (ui1, ui0) = (1.0 / pi[i], -1.0 / (1.0 - pi[i]));
        let (uj1, uj0) = (1.0 / pi[j], -1.0 / (1.0 - pi[j]));
        (c[0] * ui0 * uj0 + c[1] * ui0 * uj1 + c[2] * ui1 * uj0 + c[3] * ui1 * uj1) / n2
    });
    let _ = d.kernel.set(Arc::new(m));
    Ok(d.kernel.get().expect("set above").clone())
}

/// ψ(v) as the quadratic form vᵀ M v.
pub fn psi_quadratic(d: &Design, v: &[f64]) -> Result<f64> {
    if v.len() != d.n() {
        return Err(Error::invalid("vector length does not match the design"));
    }
    let m = psi_kernel(d)?;
    let x = DVector::from_column_slice(v);
    Ok(x.dot(&(&*m * &x)))
}

/// Explicit supports up to this size are summed directly in [`psi`]; larger ones use the
/// cached kernel.
pub const PSI_DIRECT_MAX: usize = 4096;

/// ψ(v): direct enumeration for small explicit supports, the quadratic form otherwise.
pub fn psi(d: &Design, v: &[f64]) -> Result<f64> {
    if d.support_len().is_some_and(|l| l <= PSI_DIRECT_MAX) {
        psi_direct(d, v)
    } else {
        psi_quadratic(d, v)
    }
}

/// E_d[ψ(W)], treating the realized assignment as a 0/1 vector.
pub fn expected_psi_of_w(d: &Design) -> Result<f64> {
    support_expectation(d, |w| {
        let v: Vec<f64> = (0..w.n()).map(|i| w.indicator(i)).collect();
        psi(d, &v)
    })
}

/// Var_d(τ̂) = ψ(c).
pub fn true_variance(d: &Design, po: &PotentialOutcomes) -> Result<f64> {
    let pi = d.exact_propensities()?;
    psi(d, &c_vector(po, pi)?)
}

/// Var_d(τ̂) as Σ_w p_w (τ̂(w) - τ)².
pub fn true_variance_direct(d: &Design, po: &PotentialOutcomes) -> Result<f64> {
    let pi = d.exact_propensities()?;
    let tau = po.tau();
    support_expectation(d, |w| {
        let e = horvitz_thompson(&reveal(po, w), pi)? - tau;
        Ok(e * e)
    })
}

/// E_d of an arbitrary estimator evaluated on revealed data.
pub fn estimator_expectation<F>(d: &Design, po: &PotentialOutcomes, est: F) -> Result<f64>
where
    F: Fn(&ObservedData) -> Result<f64> + Sync,
{
    support_expectation(d, |w| est(&reveal(po, w)))
}

/// (E_d[V̂], Var_d(V̂)) of an estimator.
pub fn estimator_moments<F>(d: &Design, po: &PotentialOutcomes, est: F) -> Result<(f64, f64)>
where
    F: Fn(&ObservedData) -> Result<f64> + Sync,
{
    let (m1, m2) = support_moments(d, |w| est(&reveal(po, w)))?;
    Ok((m1, (m2 - m1 * m1).max(0.0)))
}

/// s²_t / N_t + s²_c / N_c.
pub fn neyman_variance(obs: &ObservedData) -> Result<VarianceEstimate> {
    let (t, c) = (obs.treated_outcomes(), obs.control_outcomes());
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::Undefined(format!(
            "Neyman variance needs two units per group, got {} treated and {} control",
            t.len(),
            c.len()
        )));
    }
    let v = sample_var(&t) / t.len() as f64 + sample_var(&c) / c.len() as f64;
    Ok(VarianceEstimate::exact(
        EstimatorKind::Neyman,
        v,
        serde_json::json!({"n_t": t.len(), "n_c": c.len()}),
    ))
}

/// Exact MSE of the Hájek estimator.
pub fn true_mse_hajek(d: &Design, po: &PotentialOutcomes) -> Result<f64> {
    let pi = d.exact_propensities()?;
    let tau = po.tau();
    support_expectation(d, |w| {
        let e = hajek(&reveal(po, w), pi)? - tau;
        Ok(e * e)
    })
}
