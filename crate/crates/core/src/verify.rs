//! Self-contained identity checks over built-in designs.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::contrast::{v_pair, v_sub, SubstituteChoice};
use crate::decomposition::{estimate_decomposition, QMatrix};
use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimators::{estimator_expectation, expected_psi_of_w, neyman_variance, support_expectation, true_variance};
use crate::imputation::{remainder_terms, v_imputation, v_imputation_beta, GammaSpec};
use crate::outcomes::{reveal, ObservedData, PotentialOutcomes};
use crate::rng::stream_rng;
use crate::sum::rel_diff;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub prob: f64,
    pub weight: f64,
    pub estimator: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { prob: 1e-12, weight: 1e-9, estimator: 1e-10 }
    }
}

/// Identity suites. [`Suite::name`] gives the command-line spelling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    #[serde(rename = "thm2")]
    ContrastCrd,
    #[serde(rename = "thm3")]
    ContrastPairs,
    #[serde(rename = "prop3")]
    ContrastToy,
    #[serde(rename = "prop4")]
    TauHatShrink,
    #[serde(rename = "thm4")]
    ThetaLooInflation,
    #[serde(rename = "prop2")]
    FixedBeta,
    #[serde(rename = "corA1")]
    Remainder,
    #[serde(rename = "all")]
    All,
}

impl Suite {
    pub const EACH: [Suite; 7] =
        [Suite::ContrastCrd, Suite::ContrastPairs, Suite::ContrastToy, Suite::TauHatShrink, Suite::ThetaLooInflation, Suite::FixedBeta, Suite::Remainder];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ContrastCrd => "thm2",
            Suite::ContrastPairs => "thm3",
            Suite::ContrastToy => "prop3",
            Suite::TauHatShrink => "prop4",
            Suite::ThetaLooInflation => "thm4",
            Suite::FixedBeta => "prop2",
            Suite::Remainder => "corA1",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name().to_ascii_lowercase() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: String,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Tracker {
    suite: &'static str,
    name: String,
    cases: usize,
    worst: f64,
    tol: f64,
}

impl Tracker {
    fn new(suite: Suite, name: impl Into<String>, tol: f64) -> Self {
        Self { suite: suite.name(), name: name.into(), cases: 0, worst: 0.0, tol }
    }

    fn push(&mut self, residual: f64) {
        self.cases += 1;
        if residual.is_nan() {
            self.worst = f64::INFINITY;
        } else {
            self.worst = self.worst.max(residual);
        }
    }

    fn finish(self) -> Check {
        Check {
            suite: self.suite.into(),
            passed: self.worst <= self.tol,
            name: self.name,
            cases: self.cases,
            max_residual: self.worst,
            tolerance: self.tol,
        }
    }
}

fn table<R: Rng>(rng: &mut R, n: usize, homogeneous: bool) -> PotentialOutcomes {
    let u = Uniform::new(0.0, 10.0).expect("valid range");
    let e = Uniform::new(-5.0, 5.0).expect("valid range");
    let y0: Vec<f64> = (0..n).map(|_| rng.sample(u)).collect();
    if homogeneous {
        let t = rng.sample(e);
        PotentialOutcomes::homogeneous(y0, t).expect("finite")
    } else {
        let y1 = y0.iter().map(|y| y + rng.sample(e)).collect();
        PotentialOutcomes::new(y0, y1).expect("finite")
    }
}

fn toy() -> Design {
    Design::explicit(
        ["1100", "0011", "1001", "0110"].iter().map(|s| s.parse().expect("literal")).collect(),
        vec![0.25; 4],
    )
    .expect("valid toy design")
}

/// Rank-one Q = v vᵀ/16 with v = (1, -1, 1, -1), feasible for the four-vector toy design.
pub fn toy_q() -> QMatrix {
    let v = [1.0, -1.0, 1.0, -1.0];
    QMatrix::from_rows(&(0..4).map(|i| (0..4).map(|j| v[i] * v[j] / 16.0).collect()).collect::<Vec<_>>())
        .expect("square")
}

fn adjacent_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n / 2).map(|k| (2 * k, 2 * k + 1)).collect()
}

fn obs_with_pairs(po: &PotentialOutcomes, w: Assignment, pairs: &[(usize, usize)]) -> ObservedData {
    reveal(po, w).with_pairs(pairs.to_vec())
}

fn contrast_crd(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [4, 8, 12] {
        let d = Design::crd(n, n / 2)?;
        let mut t = Tracker::new(Suite::ContrastCrd, format!("v_sub = neyman on CRD({n},{})", n / 2), tol.estimator);
        let po = table(&mut stream_rng(seed, n as u64), n, false);
        for (w, _) in d.enumerate_support()? {
            let o = reveal(&po, w);
            t.push(rel_diff(v_sub(&d, &o, &SubstituteChoice::Full)?.value, neyman_variance(&o)?.value));
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn contrast_pairs(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [4, 8] {
        let pairs = adjacent_pairs(n);
        let d = Design::matched_pair(&pairs)?;
        let mut t = Tracker::new(Suite::ContrastPairs, format!("v_sub = v_pair on {} pairs", n / 2), tol.estimator);
        let po = table(&mut stream_rng(seed, 100 + n as u64), n, false);
        for (w, _) in d.enumerate_support()? {
            let o = obs_with_pairs(&po, w, &pairs);
            t.push(rel_diff(v_sub(&d, &o, &SubstituteChoice::Full)?.value, v_pair(&o)?.value));
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn contrast_toy(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let d = toy();
    let q = toy_q();
    let mut t = Tracker::new(Suite::ContrastToy, "v_sub = decomposition on the toy design", tol.estimator);
    let mut rng = stream_rng(seed, 200);
    for _ in 0..100 {
        let po = table(&mut rng, 4, false);
        for (w, _) in d.enumerate_support()? {
            let o = reveal(&po, w);
            let a = v_sub(&d, &o, &SubstituteChoice::Full)?.value;
            let b = estimate_decomposition(&d, &o, &q)?.value;
            t.push((a - b).abs() / a.abs().max(b.abs()).max(1.0));
        }
    }
    let alt = Design::explicit(
        ["1100", "0011", "1001", "0110"].iter().map(|s| s.parse().expect("literal")).collect(),
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    )?;
    let mut c = Tracker::new(Suite::ContrastToy, "weighted design: Y_1² coefficient 0.5 at W = 1001", tol.estimator);
    let o = ObservedData::new("1001".parse().expect("literal"), vec![1.0, 0.0, 0.0, 0.0])?;
    c.push((v_sub(&alt, &o, &SubstituteChoice::Full)?.value - 0.5).abs());
    Ok(vec![t.finish(), c.finish()])
}

fn tau_hat_shrink(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [4, 6, 8] {
        let d = Design::crd(n, n / 2)?;
        let nf = n as f64;
        let mut t = Tracker::new(Suite::TauHatShrink, format!("ψ(ĉ_τ̂) = neyman (N-2)/(N-1), N = {n}"), tol.estimator);
        let po = table(&mut stream_rng(seed, 300 + n as u64), n, false);
        for (w, _) in d.enumerate_support()? {
            let o = reveal(&po, w);
            let a = v_imputation(&d, &o, &GammaSpec::TauHat)?.value;
            t.push(rel_diff(a, neyman_variance(&o)?.value * (nf - 2.0) / (nf - 1.0)));
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn theta_loo_inflation(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for n in [4, 6, 8] {
        let d = Design::crd(n, n / 2)?;
        let nf = n as f64;
        let mut t = Tracker::new(Suite::ThetaLooInflation, format!("E ψ(ĉ_θloo) = Var (N-1)/(N-2), N = {n}"), tol.estimator);
        let mut rng = stream_rng(seed, 400 + n as u64);
        for _ in 0..10 {
            let po = table(&mut rng, n, true);
            let e = estimator_expectation(&d, &po, |o| Ok(v_imputation(&d, o, &GammaSpec::ThetaLoo)?.value))?;
            t.push(rel_diff(e, true_variance(&d, &po)? * (nf - 1.0) / (nf - 2.0)));
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn fixed_beta(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut rng = stream_rng(seed, 500);
    let beta_dist = Uniform::new(-5.0, 5.0).expect("valid range");
    for (label, d) in [("toy design", toy()), ("CRD(6,3)", Design::crd(6, 3)?)] {
        let ew = expected_psi_of_w(&d)?;
        let mut t = Tracker::new(Suite::FixedBeta, format!("bias = (τ-β)² E ψ(W) on {label}"), tol.estimator);
        for _ in 0..10 {
            let po = table(&mut rng, d.n(), true);
            let beta = rng.sample(beta_dist);
            let e = estimator_expectation(&d, &po, |o| Ok(v_imputation(&d, o, &GammaSpec::constant(beta))?.value))?;
            let tv = true_variance(&d, &po)?;
            let g = po.tau() - beta;
            t.push(rel_diff(e, tv + g * g * ew));
        }
        out.push(t.finish());
    }
    let pairs = adjacent_pairs(6);
    for (label, d) in [("toy design", toy()), ("3 matched pairs", Design::matched_pair(&pairs)?)] {
        let mut t = Tracker::new(Suite::FixedBeta, format!("fixed β conservative on {label}"), tol.estimator);
        for _ in 0..10 {
            let po = table(&mut rng, d.n(), false);
            let beta = rng.sample(beta_dist);
            let e = estimator_expectation(&d, &po, |o| Ok(v_imputation(&d, o, &GammaSpec::constant(beta))?.value))?;
            let tv = true_variance(&d, &po)?;
            t.push(((tv - e) / tv).max(0.0));
        }
        out.push(t.finish());
    }
    Ok(out)
}

fn remainder(seed: u64, tol: &Tolerances) -> Result<Vec<Check>> {
    let d = Design::crd(6, 4)?;
    let mut ident = Tracker::new(Suite::Remainder, "ψ(ĉ_β) = Var + A1 + A2 on CRD(6,4)", tol.weight);
    let mut mean0 = Tracker::new(Suite::Remainder, "E A2 = 0 on CRD(6,4)", tol.weight);
    let mut rng = stream_rng(seed, 600);
    for _ in 0..10 {
        let po = table(&mut rng, 6, true);
        let beta = rng.sample(Uniform::new(-5.0, 5.0).expect("valid range"));
        let tv = true_variance(&d, &po)?;
        for (w, _) in d.enumerate_support()? {
            let lhs = v_imputation_beta(&d, &reveal(&po, w), beta)?;
            let (a1, a2) = remainder_terms(&d, &po, beta, w)?;
            ident.push(rel_diff(lhs, tv + a1 + a2));
        }
        let ea2 = support_expectation(&d, |w| Ok(remainder_terms(&d, &po, beta, w)?.1))?;
        mean0.push(ea2.abs() / tv.max(1.0));
    }
    Ok(vec![ident.finish(), mean0.finish()])
}

/// Runs one suite (or all of them).
pub fn run_suite(suite: Suite, seed: u64, tol: &Tolerances) -> Result<VerifyReport> {
    let start = Instant::now();
    let suites: Vec<Suite> = if suite == Suite::All { Suite::EACH.to_vec() } else { vec![suite] };
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(match s {
            Suite::ContrastCrd => contrast_crd(seed, tol)?,
            Suite::ContrastPairs => contrast_pairs(seed, tol)?,
            Suite::ContrastToy => contrast_toy(seed, tol)?,
            Suite::TauHatShrink => tau_hat_shrink(seed, tol)?,
            Suite::ThetaLooInflation => theta_loo_inflation(seed, tol)?,
            Suite::FixedBeta => fixed_beta(seed, tol)?,
            Suite::Remainder => remainder(seed, tol)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(VerifyReport {
        suite: suite.name().into(),
        passed: checks.iter().all(|c| c.passed),
        seconds: start.elapsed().as_secs_f64(),
        checks,
    })
}
