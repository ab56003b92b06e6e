//! Covariate and potential-outcome generators.

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Bernoulli, ChiSquared, Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcomes::{Covariates, PotentialOutcomes};
use crate::rng::stream_rng;

/// Six covariates: a correlated trivariate normal, Unif(-3, 3), χ²₁ and Bernoulli(0.5).
pub fn gen_covariates_hainmueller(n: usize, seed: u64) -> Result<Covariates> {
    if n == 0 {
        return Err(Error::invalid("need at least one unit"));
    }
    let sigma = Matrix3::new(2.0, 1.0, -1.0, 1.0, 1.0, -0.5, -1.0, -0.5, 1.0);
    let l = Cholesky::new(sigma).expect("covariance is positive definite").l();
    let mut rng = stream_rng(seed, 0);
    let unif = Uniform::new(-3.0, 3.0).expect("valid range");
    let chi = ChiSquared::new(1.0).expect("valid dof");
    let bern = Bernoulli::new(0.5).expect("valid p");
    let mut cols = vec![Vec::with_capacity(n); 6];
    for _ in 0..n {
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let x = l * z;
        cols[0].push(x[0]);
        cols[1].push(x[1]);
        cols[2].push(x[2]);
        cols[3].push(unif.sample(&mut rng));
        cols[4].push(chi.sample(&mut rng));
        cols[5].push(if bern.sample(&mut rng) { 1.0 } else { 0.0 });
    }
    Covariates::from_columns(cols)
}

/// One covariate: units 1 and 2 from N(10, 1), the rest from N(0, 1).
pub fn gen_covariate_study_a(n: usize, seed: u64) -> Result<Vec<f64>> {
    if n < 3 {
        return Err(Error::invalid("need at least three units"));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..n)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            if i < 2 {
                10.0 + z
            } else {
                z
            }
        })
        .collect())
}

/// Y(0) iid Unif(0, 10); Y(1) per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    NoEffect,
    ConstantFixed { delta: f64 },
    /// One effect per table, drawn from Unif(low, high).
    ConstantRandom { low: f64, high: f64 },
    /// Unit effects drawn iid from Unif(low, high).
    Heterogeneous { low: f64, high: f64 },
}

impl OutcomeModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OutcomeModel::ConstantRandom { low, high } | OutcomeModel::Heterogeneous { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::invalid(format!("effect range ({low}, {high}) is not well ordered")));
                }
            }
            OutcomeModel::ConstantFixed { delta } if !delta.is_finite() => {
                return Err(Error::invalid("effect must be finite"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        !matches!(self, OutcomeModel::Heterogeneous { .. })
    }
}

pub fn gen_outcomes<R: Rng + ?Sized>(model: &OutcomeModel, n: usize, rng: &mut R) -> Result<PotentialOutcomes> {
    model.validate()?;
    let base = Uniform::new(0.0, 10.0).expect("valid range");
    let y0: Vec<f64> = (0..n).map(|_| base.sample(rng)).collect();
    let y1 = match *model {
        OutcomeModel::NoEffect => y0.clone(),
        OutcomeModel::ConstantFixed { delta } => y0.iter().map(|y| y + delta).collect(),
        OutcomeModel::ConstantRandom { low, high } => {
            let t = rng.sample(Uniform::new(low, high).expect("validated"));
            y0.iter().map(|y| y + t).collect()
        }
        OutcomeModel::Heterogeneous { low, high } => {
            let u = Uniform::new(low, high).expect("validated");
            y0.iter().map(|y| y + u.sample(rng)).collect()
        }
    };
    PotentialOutcomes::new(y0, y1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hainmueller_moments() {
        let x = gen_covariates_hainmueller(100_000, 11).unwrap();
        let m = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
        let cov = |a: &[f64], b: &[f64]| {
            let (ma, mb) = (m(a), m(b));
            a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
        };
        let target = [[2.0, 1.0, -1.0], [1.0, 1.0, -0.5], [-1.0, -0.5, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov(x.column(i), x.column(j)) - target[i][j]).abs() < 0.05);
            }
        }
        assert!((m(x.column(5)) - 0.5).abs() < 0.005);
        assert!((m(x.column(4)) - 1.0).abs() < 0.03);
        assert_eq!(x, gen_covariates_hainmueller(100_000, 11).unwrap());
    }

    #[test]
    fn study_a_covariate_means() {
        let (mut a, mut b) = (0.0, 0.0);
        for s in 0..10_000 {
            let x = gen_covariate_study_a(12, s).unwrap();
            a += x[0];
            b += x[2..].iter().sum::<f64>() / 10.0;
        }
        assert!((a / 1e4 - 10.0).abs() < 0.05);
        assert!((b / 1e4).abs() < 0.05);
    }

    #[test]
    fn outcome_models() {
        let mut rng = stream_rng(3, 1);
        let po = gen_outcomes(&OutcomeModel::NoEffect, 10, &mut rng).unwrap();
        assert_eq!(po.y0, po.y1);
        let po = gen_outcomes(&OutcomeModel::ConstantFixed { delta: 5.0 }, 10, &mut rng).unwrap();
        assert!(po.effects().iter().all(|e| (e - 5.0).abs() < 1e-12));
        let po = gen_outcomes(&OutcomeModel::Heterogeneous { low: -5.0, high: 5.0 }, 100_000, &mut rng).unwrap();
        assert!(po.tau().abs() < 0.05);
        assert!(gen_outcomes(&OutcomeModel::Heterogeneous { low: 5.0, high: -5.0 }, 3, &mut rng).is_err());
    }
}
