//! Covariate balance criteria for rerandomization.

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::outcomes::{mean, sample_var, Covariates};

/// Absolute standardized mean difference |x̄_t - x̄_c| / sqrt((s²_t + s²_c) / 2).
pub fn asmd(x: &[f64], w: Assignment) -> Result<f64> {
    if x.len() != w.n() {
        return Err(Error::invalid("covariate length does not match assignment"));
    }
    let t: Vec<f64> = w.treated().map(|i| x[i]).collect();
    let c: Vec<f64> = w.controls().map(|i| x[i]).collect();
    if t.len() < 2 || c.len() < 2 {
        return Err(Error::Undefined("ASMD needs at least two units per group".into()));
    }
    let pooled = ((sample_var(&t) + sample_var(&c)) / 2.0).sqrt();
    if pooled <= 0.0 {
        return Err(Error::Undefined("ASMD has zero pooled variance".into()));
    }
    Ok((mean(&t) - mean(&c)).abs() / pooled)
}

/// A nonnegative imbalance score for an assignment given fixed covariates.
pub trait BalanceCriterion: Send + Sync {
    fn name(&self) -> &str;

    /// `None` when the score is undefined; such vectors are rejected.
    fn score(&self, x: &Covariates, w: Assignment) -> Option<f64>;
}

/// Maximum ASMD over all covariate columns.
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxAsmd;

impl BalanceCriterion for MaxAsmd {
    fn name(&self) -> &str {
        "max_asmd"
    }

    fn score(&self, x: &Covariates, w: Assignment) -> Option<f64> {
        let mut worst = 0.0f64;
        for col in x.columns() {
            worst = worst.max(asmd(col, w).ok()?);
        }
        Some(worst)
    }
}
