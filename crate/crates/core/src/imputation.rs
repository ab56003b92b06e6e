//! Imputation-based variance estimation: ψ(ĉ) with γ chosen by a [`GammaSpec`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimators::{
    c_vector, check_pi, horvitz_thompson, psi, support_expectation, EstimatorKind, Exactness, VarianceEstimate,
};
use crate::outcomes::{reveal, ObservedData, PotentialOutcomes};
use crate::sum::{ksum, Accumulator};

/// Default Monte Carlo size for [`v_imputation_mc`].
pub const DEFAULT_MC_DRAWS: usize = 100_000;

/// How γ is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum GammaSpec {
    /// Deterministic γ. A single value is used for every unit.
    Fixed(Vec<f64>),
    TauHat,
    TauLoo,
    ThetaLoo,
}

impl GammaSpec {
    pub fn constant(v: f64) -> Self {
        GammaSpec::Fixed(vec![v])
    }

    pub fn name(&self) -> &'static str {
        match self {
            GammaSpec::Fixed(_) => "fixed",
            GammaSpec::TauHat => "tau_hat",
            GammaSpec::TauLoo => "tau_loo",
            GammaSpec::ThetaLoo => "theta_loo",
        }
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSpec::Fixed(v) => {
                let s: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "fixed:{}", s.join(","))
            }
            GammaSpec::TauHat => f.write_str("tau-hat"),
            GammaSpec::TauLoo => f.write_str("tau-loo"),
            GammaSpec::ThetaLoo => f.write_str("theta-loo"),
        }
    }
}

impl FromStr for GammaSpec {
    type Err = Error;

    /// `fixed:<v>` or `fixed:<v1>,<v2>,...`, `tau-hat`, `tau-loo`, `theta-loo`.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "tau-hat" => return Ok(GammaSpec::TauHat),
            "tau-loo" => return Ok(GammaSpec::TauLoo),
            "theta-loo" => return Ok(GammaSpec::ThetaLoo),
            _ => {}
        }
        let rest = norm
            .strip_prefix("fixed:")
            .ok_or_else(|| Error::invalid(format!("unknown gamma spec '{s}'")))?;
        let vals = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::invalid(format!("bad gamma value '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("gamma values must be finite"));
        }
        Ok(GammaSpec::Fixed(vals))
    }
}

/// What the leave-one-out estimators do with partners whose conditional propensity is 0 or 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LooPolicy {
    /// Refuse: the leave-one-out weights are undefined.
    #[default]
    Error,
    /// Drop unit j from unit i's average whenever Pr(W_j = 1 | W_i = a) is 0 or 1 for either a.
    /// Dropping depends only on the design, so E[γ_i | W_i] stays the same on both arms.
    ExcludeDegenerate,
}

/// Ŷ(1) = Y on treated and Y + β on controls; Ŷ(0) = Y - β on treated and Y on controls.
pub fn impute_potential_outcomes(obs: &ObservedData, beta: &[f64]) -> Result<PotentialOutcomes> {
    if beta.len() != obs.n() {
        return Err(Error::invalid(format!("{} beta values for {} units", beta.len(), obs.n())));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta values must be finite"));
    }
    let (mut y0, mut y1) = (obs.y.clone(), obs.y.clone());
    for i in 0..obs.n() {
        if obs.w.get(i) {
            y0[i] -= beta[i];
        } else {
            y1[i] += beta[i];
        }
    }
    PotentialOutcomes::new(y0, y1)
}

/// Horvitz-Thompson estimate of θ = (1/N) Σ [(1 - π)/π Y(1) - π/(1 - π) Y(0)].
pub fn theta_ht(obs: &ObservedData, pi: &[f64]) -> Result<f64> {
    check_pi(pi, obs.n())?;
    let n = obs.n() as f64;
    Ok(ksum((0..obs.n()).map(|i| {
        let p = pi[i];
        if obs.w.get(i) {
            obs.y[i] * (1.0 - p) / (p * p)
        } else {
            -obs.y[i] * p / ((1.0 - p) * (1.0 - p))
        }
    })) / n)
}

pub fn gamma_vector(spec: &GammaSpec, obs: &ObservedData, d: &Design) -> Result<Vec<f64>> {
    gamma_vector_with(spec, obs, d, LooPolicy::Error)
}

pub fn gamma_vector_with(spec: &GammaSpec, obs: &ObservedData, d: &Design, policy: LooPolicy) -> Result<Vec<f64>> {
    let n = obs.n();
    if d.n() != n {
        return Err(Error::invalid("observed data and design sizes differ"));
    }
    match spec {
        GammaSpec::Fixed(v) => {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("gamma values must be finite"));
            }
            match v.len() {
                1 => Ok(vec![v[0]; n]),
                l if l == n => Ok(v.clone()),
                l => Err(Error::invalid(format!("{l} gamma values for {n} units"))),
            }
        }
        GammaSpec::TauHat => {
            let pi = d.exact_propensities()?;
            Ok(vec![horvitz_thompson(obs, pi)?; n])
        }
        GammaSpec::TauLoo | GammaSpec::ThetaLoo => {
            let pi = d.exact_propensities()?;
            check_pi(pi, n)?;
            let table = d.pair_table()?;
            let theta = matches!(spec, GammaSpec::ThetaLoo);
            (0..n)
                .map(|i| {
                    let wi = obs.w.get(i);
                    let mut acc = Accumulator::new();
                    let (mut count, mut nt, mut nc) = (0usize, 0usize, 0usize);
                    for j in (0..n).filter(|&j| j != i) {
                        let cond = |a: bool| table.conditional(i, a, j).unwrap_or(f64::NAN);
                        let pt = cond(wi);
                        let degenerate = |p: f64| !(p > 0.0 && p < 1.0);
                        match policy {
                            LooPolicy::Error if degenerate(pt) => {
                                return Err(Error::Assumption(format!(
                                    "Pr(W_{} = 1 | W_{} = {}) = {pt}; leave-one-out weights are undefined",
                                    j + 1,
                                    i + 1,
                                    wi as u8
                                )));
                            }
                            LooPolicy::ExcludeDegenerate if degenerate(cond(true)) || degenerate(cond(false)) => {
                                continue;
                            }
                            _ => {}
                        }
                        count += 1;
                        let (p, y) = (pi[j], obs.y[j]);
                        if obs.w.get(j) {
                            nt += 1;
                            acc.add(if theta { y * (1.0 - p) / (pt * p) } else { y / pt });
                        } else {
                            nc += 1;
                            acc.add(if theta { -y * p / ((1.0 - pt) * (1.0 - p)) } else { -y / (1.0 - pt) });
                        }
                    }
                    if nt == 0 || nc == 0 {
                        return Err(Error::Undefined(format!(
                            "leaving out unit {} leaves an empty treatment group",
                            i + 1
                        )));
                    }
                    Ok(acc.value() / count as f64)
                })
                .collect()
        }
    }
}

/// ĉ_i = (1 - π)/π Y - (1 - π) γ on treated units and π/(1 - π) Y + π γ on controls.
pub fn impute_c(obs: &ObservedData, pi: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    check_pi(pi, obs.n())?;
    if gamma.len() != obs.n() {
        return Err(Error::invalid("gamma length does not match the data"));
    }
    Ok((0..obs.n())
        .map(|i| {
            let (p, y, g) = (pi[i], obs.y[i], gamma[i]);
            if obs.w.get(i) {
                (1.0 - p) / p * y - (1.0 - p) * g
            } else {
                p / (1.0 - p) * y + p * g
            }
        })
        .collect())
}

/// The β that makes imputation reproduce [`impute_c`].
pub fn implicit_beta(obs: &ObservedData, pi: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    check_pi(pi, obs.n())?;
    if gamma.len() != obs.n() {
        return Err(Error::invalid("gamma length does not match the data"));
    }
    Ok((0..obs.n())
        .map(|i| {
            let (p, y, g) = (pi[i], obs.y[i], gamma[i]);
            if obs.w.get(i) {
                (2.0 * p - 1.0) / (p * p) * y + (1.0 - p) / p * g
            } else {
                (2.0 * p - 1.0) / ((1.0 - p) * (1.0 - p)) * y + p / (1.0 - p) * g
            }
        })
        .collect())
}

/// c computed from the table imputed with β.
pub fn c_from_beta(obs: &ObservedData, pi: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    c_vector(&impute_potential_outcomes(obs, beta)?, pi)
}

fn params(spec: &GammaSpec, policy: LooPolicy, gamma: &[f64]) -> serde_json::Value {
    serde_json::json!({"gamma": spec.name(), "spec": spec.to_string(), "loo_policy": policy, "gamma_values": gamma})
}

/// ψ(ĉ), exact.
pub fn v_imputation(d: &Design, obs: &ObservedData, spec: &GammaSpec) -> Result<VarianceEstimate> {
    v_imputation_with(d, obs, spec, LooPolicy::Error)
}

pub fn v_imputation_with(
    d: &Design,
    obs: &ObservedData,
    spec: &GammaSpec,
    policy: LooPolicy,
) -> Result<VarianceEstimate> {
    let pi = d.exact_propensities()?;
    let gamma = gamma_vector_with(spec, obs, d, policy)?;
    let c = impute_c(obs, pi, &gamma)?;
    let v = psi(d, &c)?.max(0.0);
    Ok(VarianceEstimate::exact(EstimatorKind::Imputation, v, params(spec, policy, &gamma)))
}

/// ψ(ĉ) with ĉ built by imputing a constant β into the table.
pub fn v_imputation_beta(d: &Design, obs: &ObservedData, beta: f64) -> Result<f64> {
    let pi = d.exact_propensities()?;
    Ok(psi(d, &c_from_beta(obs, pi, &vec![beta; obs.n()])?)?.max(0.0))
}

/// Sample variance of `x` (divisor M - 1) and the jackknife standard error of that variance.
pub fn variance_with_jackknife_se(x: &[f64]) -> (f64, f64) {
    let m = x.len();
    let mf = m as f64;
    let mean = ksum(x.iter().copied()) / mf;
    let ss = ksum(x.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (mf - 1.0);
    if m < 3 {
        return (var, f64::NAN);
    }
    let loo: Vec<f64> = x
        .iter()
        .map(|v| {
            let e = v - mean;
            ((ss - e * e * mf / (mf - 1.0)) / (mf - 2.0)).max(0.0)
        })
        .collect();
    let lm = ksum(loo.iter().copied()) / mf;
    let jv = (mf - 1.0) / mf * ksum(loo.iter().map(|s| (s - lm) * (s - lm)));
    (var, jv.sqrt())
}

/// Monte Carlo version: impute a table once, redraw M assignments, and return the sample
/// variance of the recomputed Horvitz-Thompson estimates.
pub fn v_imputation_mc(
    d: &Design,
    obs: &ObservedData,
    spec: &GammaSpec,
    m: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    v_imputation_mc_with(d, obs, spec, LooPolicy::Error, m, seed)
}

pub fn v_imputation_mc_with(
    d: &Design,
    obs: &ObservedData,
    spec: &GammaSpec,
    policy: LooPolicy,
    m: usize,
    seed: u64,
) -> Result<VarianceEstimate> {
    if m < 2 {
        return Err(Error::invalid("Monte Carlo size must be at least 2"));
    }
    let pi = d.propensities()?;
    let gamma = gamma_vector_with(spec, obs, d, policy)?;
    let beta = implicit_beta(obs, &pi, &gamma)?;
    let table = impute_potential_outcomes(obs, &beta)?;
    let draws = d.sample_many(m, seed)?;
    let taus: Vec<f64> = draws
        .par_iter()
        .map(|w| horvitz_thompson(&reveal(&table, *w), &pi))
        .collect::<Result<_>>()?;
    let (value, se) = variance_with_jackknife_se(&taus);
    let mut p = params(spec, policy, &gamma);
    p["seed"] = seed.into();
    Ok(VarianceEstimate {
        value,
        kind: EstimatorKind::Imputation,
        exactness: Exactness::MonteCarlo { m, se },
        params: p,
        negative: false,
    })
}

/// The two remainder terms of ψ(ĉ_β) - Var_d(τ̂) for a homogeneous table and constant β,
/// evaluated at realization `w`.
pub fn remainder_terms(d: &Design, po: &PotentialOutcomes, beta: f64, w: Assignment) -> Result<(f64, f64)> {
    let tau = po.tau();
    if !po.is_homogeneous(1e-9 * (1.0 + tau.abs())) {
        return Err(Error::Assumption("the remainder terms need a homogeneous table".into()));
    }
    let pi = d.exact_propensities()?;
    check_pi(pi, d.n())?;
    let n = d.n();
    let n2 = (n * n) as f64;
    let (a1, a2) = support_pair(d, |v| {
        let (mut uw, mut uy0, mut k) = (0.0, 0.0, -(n as f64));
        for i in 0..n {
            let u = if v.get(i) {
                k += 1.0 / pi[i];
                1.0 / pi[i]
            } else {
                -1.0 / (1.0 - pi[i])
            };
            uw += u * w.indicator(i);
            uy0 += u * po.y0[i];
        }
        let delta = uw - k;
        (delta * delta, (uy0 + tau * k) * delta)
    })?;
    let g = tau - beta;
    Ok((g * g * a1 / n2, 2.0 * g * a2 / n2))
}

fn support_pair(d: &Design, f: impl Fn(Assignment) -> (f64, f64) + Sync) -> Result<(f64, f64)> {
    let a = support_expectation(d, |v| Ok(f(v).0))?;
    let b = support_expectation(d, |v| Ok(f(v).1))?;
    Ok((a, b))
}
