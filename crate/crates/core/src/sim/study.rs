//! Scenario specifications and the replication runner.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::MaxAsmd;
use crate::contrast::{v_sub, SubstituteChoice};
use crate::design::{Design, DesignOptions};
use crate::error::{Error, Result};
use crate::estimators::{estimator_moments, neyman_variance, true_variance};
use crate::imputation::{v_imputation_with, GammaSpec, LooPolicy};
use crate::outcomes::{reveal, Covariates, ObservedData};
use crate::rng::stream_rng;
use crate::sum::Accumulator;

use super::am::v_am;
use super::dgp::{gen_covariate_study_a, gen_covariates_hainmueller, gen_outcomes, OutcomeModel};

/// Covariate draws tried before study A gives up on finding a non-measurable design.
pub const STUDY_A_ATTEMPTS: u64 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    Crd {
        n: usize,
        n_treated: usize,
    },
    /// Complete randomization filtered by the ASMD of one covariate on which units 1 and 2
    /// are shifted far from the rest.
    StudyA {
        n: usize,
        n_treated: usize,
        threshold: f64,
    },
    /// Complete randomization filtered by the maximum ASMD over six covariates. The design is
    /// represented by a label-symmetrized pool of `pool` accepted draws.
    StudyB {
        n: usize,
        n_treated: usize,
        threshold: f64,
        pool: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Am,
    Neyman,
    Contrast,
    Imputation {
        gamma: GammaSpec,
        #[serde(default)]
        policy: LooPolicy,
        #[serde(default)]
        label: Option<String>,
    },
}

impl EstimatorSpec {
    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Am => "am".into(),
            EstimatorSpec::Neyman => "neyman".into(),
            EstimatorSpec::Contrast => "contrast".into(),
            EstimatorSpec::Imputation { label: Some(l), .. } => l.clone(),
            EstimatorSpec::Imputation { gamma, .. } => format!("imputation_{}", gamma.name()),
        }
    }

    fn imputation(gamma: GammaSpec, policy: LooPolicy, label: &str) -> Self {
        EstimatorSpec::Imputation { gamma, policy, label: Some(label.into()) }
    }

    pub fn evaluate(&self, d: &Design, obs: &ObservedData) -> Result<f64> {
        Ok(match self {
            EstimatorSpec::Am => v_am(d, obs)?.value,
            EstimatorSpec::Neyman => neyman_variance(obs)?.value,
            EstimatorSpec::Contrast => v_sub(d, obs, &SubstituteChoice::Full)?.value,
            EstimatorSpec::Imputation { gamma, policy, .. } => v_imputation_with(d, obs, gamma, *policy)?.value,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub design: DesignSpec,
    pub outcome_model: OutcomeModel,
    pub estimators: Vec<EstimatorSpec>,
    pub n_replications: usize,
    /// Realizations used to estimate E_d and Var_d of each estimator. `None` enumerates.
    #[serde(default)]
    pub n_inner_draws: Option<usize>,
    pub seed: u64,
}

/// One estimator in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replication: usize,
    pub estimator: String,
    pub true_variance: f64,
    pub expectation: f64,
    /// (E_d V̂ - Var_d τ̂) / Var_d τ̂; `None` when the true variance is zero.
    pub relative_bias: Option<f64>,
    /// Standard deviation of the estimator over the design.
    pub sd: f64,
    /// Monte Carlo standard error of `expectation`, when it was estimated.
    pub mc_se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub records: Vec<Record>,
    /// Replications dropped because the true variance was zero.
    pub undefined: usize,
    pub notes: Vec<String>,
}

impl SimResult {
    pub fn estimators(&self) -> Vec<String> {
        self.spec.estimators.iter().map(EstimatorSpec::label).collect()
    }

    pub fn relative_biases(&self, estimator: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.estimator == estimator)
            .filter_map(|r| r.relative_bias)
            .collect()
    }
}

/// The study-A design: the first covariate draw (seed, seed + 1, ...) whose filtered design
/// never treats units 1 and 2 together. Returns the design, the covariate and the draw index.
pub fn study_a_design(n: usize, n_treated: usize, threshold: f64, seed: u64) -> Result<(Design, Vec<f64>, u64)> {
    let base = Design::crd(n, n_treated)?;
    for k in 0..STUDY_A_ATTEMPTS {
        let x = gen_covariate_study_a(n, seed.wrapping_add(k))?;
        let cov = Covariates::from_columns(vec![x.clone()])?;
        let d = match Design::rerandomized(&base, cov, Arc::new(MaxAsmd), threshold) {
            Ok(d) => d,
            Err(Error::InfeasibleThreshold) => continue,
            Err(e) => return Err(e),
        };
        let pi = d.exact_propensities()?;
        if pi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            continue;
        }
        if d.pairwise_prob(0, 1, true, true)?.value() == 0.0 {
            return Ok((d, x, k));
        }
    }
    Err(Error::Assumption(format!(
        "no covariate draw among {STUDY_A_ATTEMPTS} gave a non-measurable design"
    )))
}

fn pool_seed(seed: u64) -> u64 {
    seed ^ 0x5EED_0000_B00C_0001
}

fn inner_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64 + 1)
}

fn build_design(spec: &ScenarioSpec, notes: &mut Vec<String>) -> Result<Design> {
    match spec.design {
        DesignSpec::Crd { n, n_treated } => Design::crd(n, n_treated),
        DesignSpec::StudyA { n, n_treated, threshold } => {
            let (d, _, k) = study_a_design(n, n_treated, threshold, spec.seed)?;
            notes.push(format!(
                "covariate draw {k}: {} of {} assignments accepted; Pr(W_1 = 1, W_2 = 1) = 0",
                d.support_len().unwrap_or(0),
                crate::assignment::binomial(n, n_treated)
            ));
            Ok(d)
        }
        DesignSpec::StudyB { n, n_treated, threshold, pool } => {
            if pool == 0 {
                return Err(Error::invalid("pool size must be positive"));
            }
            let cov = gen_covariates_hainmueller(n, spec.seed)?;
            let opts = DesignOptions { allow_sampler: true, ..DesignOptions::default() };
            let base = Design::crd_with(n, n_treated, &opts)?;
            let rer = Design::rerandomized_with(&base, cov, Arc::new(MaxAsmd), threshold, &opts)?;
            let draws = rer.sample_many(pool, pool_seed(spec.seed))?;
            let d = Design::empirical(&draws, true)?;
            notes.push(format!(
                "design represented by {pool} accepted draws plus their complements ({} distinct vectors)",
                d.support_len().unwrap_or(0)
            ));
            Ok(d)
        }
    }
}

fn moments_mc(d: &Design, po: &crate::outcomes::PotentialOutcomes, est: &EstimatorSpec, m: usize, seed: u64) -> Result<(f64, f64, f64)> {
    if m < 2 {
        return Err(Error::invalid("need at least two inner draws"));
    }
    let draws = d.sample_many(m, seed)?;
    let vals: Vec<f64> = draws
        .par_iter()
        .map(|w| est.evaluate(d, &reveal(po, *w)))
        .collect::<Result<_>>()?;
    let mf = m as f64;
    let mean = vals.iter().copied().collect::<Accumulator>().value() / mf;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).collect::<Accumulator>().value() / (mf - 1.0);
    Ok((mean, var, (var / mf).sqrt()))
}

/// Runs every replication of a scenario. Replication r draws its table from stream r + 1.
pub fn run_study(spec: &ScenarioSpec) -> Result<SimResult> {
    if spec.n_replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if spec.estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    spec.outcome_model.validate()?;
    let mut notes = Vec::new();
    let d = build_design(spec, &mut notes)?;
    let n = d.n();
    let enumerate = spec.n_inner_draws.is_none();
    if enumerate && !d.is_enumerable() {
        return Err(Error::NotEnumerable("set n_inner_draws for designs that cannot be enumerated".into()));
    }
    let per_rep: Vec<Result<Vec<Record>>> = (0..spec.n_replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(spec.seed, r as u64 + 1);
            let po = gen_outcomes(&spec.outcome_model, n, &mut rng)?;
            let tv = true_variance(&d, &po)?;
            spec.estimators
                .iter()
                .map(|est| {
                    let (mean, var, se) = match spec.n_inner_draws {
                        None => {
                            let (m, v) = estimator_moments(&d, &po, |o| est.evaluate(&d, o))?;
                            (m, v, None)
                        }
                        Some(m) => {
                            let (a, b, c) = moments_mc(&d, &po, est, m, inner_seed(spec.seed, r))?;
                            (a, b, Some(c))
                        }
                    };
                    Ok(Record {
                        replication: r,
                        estimator: est.label(),
                        true_variance: tv,
                        expectation: mean,
                        relative_bias: (tv > 0.0).then(|| (mean - tv) / tv),
                        sd: var.max(0.0).sqrt(),
                        mc_se: se,
                    })
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    let mut undefined = 0;
    for rep in per_rep {
        let rep = rep?;
        if rep.first().is_some_and(|r| r.relative_bias.is_none()) {
            undefined += 1;
        }
        records.extend(rep);
    }
    Ok(SimResult { scenario: spec.name.clone(), spec: spec.clone(), records, undefined, notes })
}

fn study_models() -> [(&'static str, OutcomeModel); 4] {
    [
        ("no_effect", OutcomeModel::NoEffect),
        ("constant_fixed", OutcomeModel::ConstantFixed { delta: 5.0 }),
        ("constant_random", OutcomeModel::ConstantRandom { low: -5.0, high: 5.0 }),
        ("heterogeneous", OutcomeModel::Heterogeneous { low: -5.0, high: 5.0 }),
    ]
}

fn study_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::Am,
        EstimatorSpec::imputation(GammaSpec::ThetaLoo, LooPolicy::ExcludeDegenerate, "jack"),
        EstimatorSpec::imputation(GammaSpec::TauHat, LooPolicy::Error, "tau_hat"),
    ]
}

/// Study A: N = 12, six treated, ASMD < 0.2 on one covariate; exact enumeration.
pub fn study_a(reps: usize, seed: u64) -> Vec<ScenarioSpec> {
    study_models()
        .into_iter()
        .enumerate()
        .map(|(k, (name, model))| ScenarioSpec {
            name: format!("study_a_{}_{name}", k + 1),
            design: DesignSpec::StudyA { n: 12, n_treated: 6, threshold: 0.2 },
            outcome_model: model,
            estimators: study_estimators(),
            n_replications: reps,
            n_inner_draws: None,
            seed,
        })
        .collect()
}

/// Study B: N = 50, 25 treated, max ASMD < 0.2 over six covariates; Monte Carlo over the design.
pub fn study_b(reps: usize, seed: u64, pool: usize, inner: usize) -> Vec<ScenarioSpec> {
    study_models()
        .into_iter()
        .enumerate()
        .map(|(k, (name, model))| ScenarioSpec {
            name: format!("study_b_{}_{name}", k + 1),
            design: DesignSpec::StudyB { n: 50, n_treated: 25, threshold: 0.2, pool },
            outcome_model: model,
            estimators: study_estimators(),
            n_replications: reps,
            n_inner_draws: Some(inner),
            seed,
        })
        .collect()
}

/// The six jackknife comparison scenarios.
pub fn jackknife_comparison(reps: usize, seed: u64) -> Vec<ScenarioSpec> {
    let hom = OutcomeModel::ConstantRandom { low: -5.0, high: 5.0 };
    let het = OutcomeModel::Heterogeneous { low: -5.0, high: 5.0 };
    let layout = [(6, 3, &hom), (6, 3, &het), (6, 4, &hom), (8, 4, &hom), (8, 4, &het), (8, 5, &hom)];
    let estimators = vec![
        EstimatorSpec::imputation(GammaSpec::constant(0.0), LooPolicy::Error, "gamma_zero"),
        EstimatorSpec::imputation(GammaSpec::TauHat, LooPolicy::Error, "gamma_tau_hat"),
        EstimatorSpec::imputation(GammaSpec::TauLoo, LooPolicy::Error, "gamma_tau_loo"),
        EstimatorSpec::imputation(GammaSpec::ThetaLoo, LooPolicy::Error, "gamma_theta_loo"),
    ];
    layout
        .iter()
        .enumerate()
        .map(|(k, &(n, nt, model))| ScenarioSpec {
            name: format!("scenario_{}", k + 1),
            design: DesignSpec::Crd { n, n_treated: nt },
            outcome_model: model.clone(),
            estimators: estimators.clone(),
            n_replications: reps,
            n_inner_draws: None,
            seed,
        })
        .collect()
}
