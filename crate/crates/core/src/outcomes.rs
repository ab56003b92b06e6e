//! Science tables and observed data.

use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::sum::ksum;

/// Potential outcomes (Y(0), Y(1)) for every unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl PotentialOutcomes {
    pub fn new(y0: Vec<f64>, y1: Vec<f64>) -> Result<Self> {
        if y0.len() != y1.len() || y0.is_empty() {
            return Err(Error::invalid("y0 and y1 must be nonempty and of equal length"));
        }
        if y0.iter().chain(&y1).any(|v| !v.is_finite()) {
            return Err(Error::invalid("potential outcomes must be finite"));
        }
        Ok(Self { y0, y1 })
    }

    /// Table with a constant effect `tau`.
    pub fn homogeneous(y0: Vec<f64>, tau: f64) -> Result<Self> {
        let y1 = y0.iter().map(|v| v + tau).collect();
        Self::new(y0, y1)
    }

    pub fn n(&self) -> usize {
        self.y0.len()
    }

    pub fn effects(&self) -> Vec<f64> {
        self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect()
    }

    /// Average treatment effect.
    pub fn tau(&self) -> f64 {
        ksum(self.effects()) / self.n() as f64
    }

    pub fn is_homogeneous(&self, tol: f64) -> bool {
        let e = self.effects();
        e.iter().all(|v| (v - e[0]).abs() <= tol)
    }

    /// Finite-population variances S²_1, S²_0 and S²_10 (divisor N - 1).
    pub fn s2(&self) -> (f64, f64, f64) {
        (sample_var(&self.y1), sample_var(&self.y0), sample_var(&self.effects()))
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    ksum(x.iter().copied()) / x.len() as f64
}

/// Variance with divisor len - 1.
pub(crate) fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    ksum(x.iter().map(|v| (v - m) * (v - m))) / (x.len() as f64 - 1.0)
}

/// Unit covariates stored column-wise: `cols[k][i]` is covariate k of unit i.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    cols: Vec<Vec<f64>>,
}

impl Covariates {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n = cols.first().map(|c| c.len()).unwrap_or(0);
        if n == 0 || cols.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("covariate columns must be nonempty and equal length"));
        }
        if cols.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        Ok(Self { cols })
    }

    /// From an N x k row-major table.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("ragged covariate rows"));
        }
        Self::from_columns((0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.cols[0].len()
    }

    pub fn k(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }
}

/// Realized assignment plus observed outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedData {
    pub w: Assignment,
    pub y: Vec<f64>,
    pub pairs: Option<Vec<(usize, usize)>>,
    pub covariates: Option<Covariates>,
}

impl ObservedData {
    pub fn new(w: Assignment, y: Vec<f64>) -> Result<Self> {
        if w.n() != y.len() {
            return Err(Error::invalid(format!(
                "assignment has {} units but {} outcomes were given",
                w.n(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observed outcomes must be finite"));
        }
        Ok(Self { w, y, pairs: None, covariates: None })
    }

    pub fn with_pairs(mut self, pairs: Vec<(usize, usize)>) -> Self {
        self.pairs = Some(pairs);
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn treated_outcomes(&self) -> Vec<f64> {
        self.w.treated().map(|i| self.y[i]).collect()
    }

    pub fn control_outcomes(&self) -> Vec<f64> {
        self.w.controls().map(|i| self.y[i]).collect()
    }
}

/// Observed data implied by a science table under assignment `w`. Every oracle goes through
/// this function.
pub fn reveal(po: &PotentialOutcomes, w: Assignment) -> ObservedData {
    let y = (0..po.n())
        .map(|i| if w.get(i) { po.y1[i] } else { po.y0[i] })
        .collect();
    ObservedData { w, y, pairs: None, covariates: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reveal_picks_arms() {
        let po = PotentialOutcomes::new(vec![1., 2., 3., 4.], vec![3., 4., 5., 6.]).unwrap();
        let obs = reveal(&po, "1100".parse().unwrap());
        assert_eq!(obs.y, vec![3., 4., 3., 4.]);
        assert_eq!(po.tau(), 2.0);
        assert!(po.is_homogeneous(0.0));
    }

    #[test]
    fn s2_components() {
        let po = PotentialOutcomes::new(vec![1., 2., 3., 4.], vec![1., 2., 3., 4.]).unwrap();
        let (s1, s0, s10) = po.s2();
        assert!((s1 - 5.0 / 3.0).abs() < 1e-15 && (s0 - s1).abs() < 1e-15 && s10 == 0.0);
    }

    #[test]
    fn rejects_mismatch() {
        assert!(PotentialOutcomes::new(vec![1.0], vec![]).is_err());
        assert!(ObservedData::new("10".parse().unwrap(), vec![1.0]).is_err());
        assert!(ObservedData::new("10".parse().unwrap(), vec![1.0, f64::NAN]).is_err());
    }
}
