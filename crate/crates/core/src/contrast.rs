//! The contrast (substitution) approach.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{binomial, for_each_combination, scatter, Assignment};
use crate::design::{Design, Structure};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, VarianceEstimate};
use crate::outcomes::{mean, sample_var, ObservedData};
use crate::sum::Accumulator;

/// Largest substitute set that is generated or scanned.
pub const DEFAULT_SUBSTITUTE_CAP: u128 = 1_000_000;

const PI_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstituteMode {
    /// N/4 of the anchor's treated and N/4 of its controls are treated.
    EqualSize,
    /// k = N_t²/N of the anchor's treated and N_t - k of its controls are treated.
    Epsem,
}

/// How many of the anchor's treated and control units a substitute treats.
pub fn substitute_split(w: Assignment, mode: SubstituteMode) -> Result<(usize, usize)> {
    let n = w.n();
    let nt = w.n_treated();
    match mode {
        SubstituteMode::EqualSize => {
            if n % 4 != 0 {
                return Err(Error::SubstitutionUndefined(format!("N = {n} is not a multiple of 4")));
            }
            if nt * 2 != n {
                return Err(Error::SubstitutionUndefined(format!(
                    "N_t(w) = {nt} is not N/2 = {} for w = {w}",
                    n / 2
                )));
            }
            Ok((n / 4, n / 4))
        }
        SubstituteMode::Epsem => {
            if (nt * nt) % n != 0 {
                return Err(Error::SubstitutionUndefined(format!(
                    "k = N_t(w)^2/N = {}/{n} is not an integer for w = {w}",
                    nt * nt
                )));
            }
            let k = nt * nt / n;
            Ok((k, nt - k))
        }
    }
}

/// Substitute predicate.
pub fn is_substitute(w: Assignment, cand: Assignment, mode: SubstituteMode) -> Result<bool> {
    if w.n() != cand.n() {
        return Err(Error::invalid("assignment lengths differ"));
    }
    let (a, b) = substitute_split(w, mode)?;
    Ok(w.common_treated(&cand) == a && w.treated_among_controls(&cand) == b)
}

/// An anchor and a set of its substitutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstituteSet {
    pub anchor: Assignment,
    pub members: Vec<Assignment>,
}

impl SubstituteSet {
    pub fn is_label_closed(&self) -> bool {
        let set: std::collections::HashSet<_> = self.members.iter().collect();
        self.members.iter().all(|m| set.contains(&m.complement()))
    }
}

fn generate_split(w: Assignment, a: usize, b: usize, mut f: impl FnMut(Assignment)) {
    let n = w.n();
    let t: Vec<usize> = w.treated().collect();
    let c: Vec<usize> = w.controls().collect();
    for_each_combination(t.len(), a, |mt| {
        let bt = scatter(n, mt, &t);
        for_each_combination(c.len(), b, |mc| {
            f(Assignment::from_raw_unchecked(n, bt | scatter(n, mc, &c)));
        });
    });
}

/// All substitutes of `w` in the support. An empty member list means the substitution
/// condition fails at `w`.
pub fn full_substitute_set(d: &Design, w: Assignment, mode: SubstituteMode) -> Result<SubstituteSet> {
    if !d.contains(w)? {
        return Err(Error::invalid(format!("{w} is not in the design support")));
    }
    let (a, b) = substitute_split(w, mode)?;
    let mut members = Vec::new();
    if let Structure::Crd { .. } = d.structure() {
        let count = binomial(w.n_treated(), a).saturating_mul(binomial(w.n_control(), b));
        if count > DEFAULT_SUBSTITUTE_CAP {
            return Err(Error::SupportTooLarge { count, cap: DEFAULT_SUBSTITUTE_CAP as u64 });
        }
        generate_split(w, a, b, |m| members.push(m));
        members.sort();
    } else {
        let (v, _) = d.support()?;
        members = v
            .iter()
            .copied()
            .filter(|m| w.common_treated(m) == a && w.treated_among_controls(m) == b)
            .collect();
    }
    Ok(SubstituteSet { anchor: w, members })
}

/// Substitute sets used by the estimators: the full sets, or caller-supplied sets.
#[derive(Clone, Debug, Default)]
pub enum SubstituteChoice {
    #[default]
    Full,
    Given(HashMap<Assignment, Vec<Assignment>>),
}

enum Plan {
    /// CRD: anchors of W are its own substitutes; every set has the same size.
    FullCrd { size: f64 },
    FullScan { sizes: HashMap<Assignment, usize> },
    Given { anchors_of: HashMap<Assignment, Vec<(Assignment, usize)>>, label_closed: bool },
}

/// Validated substitute structure for a design, reusable across realizations.
pub struct ContrastPlan<'a> {
    d: &'a Design,
    mode: SubstituteMode,
    plan: Plan,
}

impl<'a> ContrastPlan<'a> {
    pub fn new(d: &'a Design, mode: SubstituteMode, choice: &SubstituteChoice) -> Result<Self> {
        let pi = d.exact_propensities()?;
        let n = d.n();
        match mode {
            SubstituteMode::EqualSize => {
                if let Some((i, p)) = pi.iter().enumerate().find(|(_, p)| (**p - 0.5).abs() > PI_TOL) {
                    return Err(Error::Assumption(format!(
                        "equal-size contrast needs π ≡ 0.5; unit {} has {p}",
                        i + 1
                    )));
                }
                if n % 4 != 0 {
                    return Err(Error::SubstitutionUndefined(format!("N = {n} is not a multiple of 4")));
                }
            }
            SubstituteMode::Epsem => {
                if pi.iter().any(|p| (p - pi[0]).abs() > PI_TOL) {
                    return Err(Error::Assumption("EPSEM fails: propensities are not constant".into()));
                }
            }
        }
        let crd = matches!(d.structure(), Structure::Crd { .. });
        if !crd {
            for (w, _) in d.enumerate_support()? {
                substitute_split(w, mode)?;
            }
        }
        let plan = match choice {
            SubstituteChoice::Full if crd => {
                let Structure::Crd { n_treated } = *d.structure() else { unreachable!() };
                let probe = Assignment::from_raw_unchecked(n, if n_treated == 64 { u64::MAX } else { (1u64 << n_treated) - 1 });
                let (a, b) = substitute_split(probe, mode)?;
                let size = binomial(n_treated, a).saturating_mul(binomial(n - n_treated, b));
                if size > DEFAULT_SUBSTITUTE_CAP {
                    return Err(Error::SupportTooLarge { count: size, cap: DEFAULT_SUBSTITUTE_CAP as u64 });
                }
                if size == 0 {
                    return Err(Error::Assumption("the substitution condition fails for this CRD".into()));
                }
                Plan::FullCrd { size: size as f64 }
            }
            SubstituteChoice::Full => {
                let (v, _) = d.support()?;
                let mut sizes = HashMap::with_capacity(v.len());
                for &w in v {
                    let (a, b) = substitute_split(w, mode)?;
                    let c = v
                        .iter()
                        .filter(|m| w.common_treated(m) == a && w.treated_among_controls(m) == b)
                        .count();
                    if c == 0 {
                        return Err(Error::Assumption(format!("substitution condition fails at w = {w}")));
                    }
                    sizes.insert(w, c);
                }
                Plan::FullScan { sizes }
            }
            SubstituteChoice::Given(g) => {
                let mut anchors_of: HashMap<Assignment, Vec<(Assignment, usize)>> = HashMap::new();
                let mut label_closed = true;
                for (w, _) in d.enumerate_support()? {
                    let members = g.get(&w).filter(|m| !m.is_empty()).ok_or_else(|| {
                        Error::Assumption(format!("no substitutes supplied for support vector {w}"))
                    })?;
                    let mut uniq = members.clone();
                    uniq.sort();
                    uniq.dedup();
                    for &m in &uniq {
                        if !d.contains(m)? {
                            return Err(Error::invalid(format!("substitute {m} of {w} is not in the support")));
                        }
                        if !is_substitute(w, m, mode)? {
                            return Err(Error::invalid(format!("{m} is not a substitute of {w}")));
                        }
                        anchors_of.entry(m).or_default().push((w, uniq.len()));
                    }
                    label_closed &= SubstituteSet { anchor: w, members: uniq }.is_label_closed();
                }
                for (w, _) in g {
                    if !d.contains(*w)? {
                        return Err(Error::invalid(format!("anchor {w} is not in the support")));
                    }
                }
                Plan::Given { anchors_of, label_closed }
            }
        };
        Ok(Self { d, mode, plan })
    }

    pub fn label_closed(&self) -> Option<bool> {
        match &self.plan {
            Plan::Given { label_closed, .. } => Some(*label_closed),
            _ => None,
        }
    }

    fn contrast(&self, w: Assignment, y: &[f64]) -> f64 {
        let mut s = 0.0;
        match self.mode {
            SubstituteMode::EqualSize => {
                for (i, v) in y.iter().enumerate() {
                    if w.get(i) {
                        s += v;
                    } else {
                        s -= v;
                    }
                }
            }
            SubstituteMode::Epsem => {
                let (nt, nc) = (w.n_treated() as f64, w.n_control() as f64);
                for (i, v) in y.iter().enumerate() {
                    if w.get(i) {
                        s += v / nt;
                    } else {
                        s -= v / nc;
                    }
                }
            }
        }
        s * s
    }

    /// The estimate at a realization.
    pub fn estimate(&self, obs: &ObservedData) -> Result<f64> {
        let d = self.d;
        let w_obs = obs.w;
        if obs.n() != d.n() {
            return Err(Error::invalid("observed data and design sizes differ"));
        }
        let p_obs = d.prob(w_obs)?;
        if p_obs <= 0.0 {
            return Err(Error::invalid(format!("realized assignment {w_obs} is not in the design support")));
        }
        let mut acc = Accumulator::new();
        match &self.plan {
            Plan::FullCrd { size } => {
                let (a, b) = substitute_split(w_obs, self.mode)?;
                generate_split(w_obs, a, b, |w| acc.add(self.contrast(w, &obs.y) / size));
            }
            Plan::FullScan { sizes } => {
                for (w, p) in d.enumerate_support()? {
                    if is_substitute(w, w_obs, self.mode)? {
                        acc.add(p / p_obs / sizes[&w] as f64 * self.contrast(w, &obs.y));
                    }
                }
            }
            Plan::Given { anchors_of, .. } => {
                for &(w, size) in anchors_of.get(&w_obs).map(Vec::as_slice).unwrap_or(&[]) {
                    acc.add(d.prob(w)? / p_obs / size as f64 * self.contrast(w, &obs.y));
                }
            }
        }
        let n = d.n() as f64;
        let scale = match self.mode {
            SubstituteMode::EqualSize => 4.0 / (n * n),
            SubstituteMode::Epsem => 1.0,
        };
        Ok(scale * acc.value())
    }
}

fn choice_params(choice: &SubstituteChoice, plan: &ContrastPlan) -> serde_json::Value {
    match choice {
        SubstituteChoice::Full => serde_json::json!({"substitutes": "full"}),
        SubstituteChoice::Given(_) => {
            serde_json::json!({"substitutes": "given", "label_closed": plan.label_closed()})
        }
    }
}

/// Contrast-approach variance estimate with ±1 contrasts.
pub fn v_sub(d: &Design, obs: &ObservedData, g: &SubstituteChoice) -> Result<VarianceEstimate> {
    let plan = ContrastPlan::new(d, SubstituteMode::EqualSize, g)?;
    let v = plan.estimate(obs)?;
    Ok(VarianceEstimate::exact(EstimatorKind::Contrast, v, choice_params(g, &plan)))
}

/// Contrast-approach estimate of the Hájek MSE on EPSEM designs.
pub fn mse_sub_epsem(d: &Design, obs: &ObservedData, g: &SubstituteChoice) -> Result<VarianceEstimate> {
    let plan = ContrastPlan::new(d, SubstituteMode::Epsem, g)?;
    let v = plan.estimate(obs)?;
    Ok(VarianceEstimate::exact(EstimatorKind::HajekMse, v, choice_params(g, &plan)))
}

/// Matched-pair estimator 4/{N(N - 2)} Σ_j (d_j - d̄)².
pub fn v_pair(obs: &ObservedData) -> Result<VarianceEstimate> {
    let pairs = obs.pairs.as_ref().ok_or_else(|| Error::invalid("pair labels are required"))?;
    let n = obs.n();
    if n < 4 || pairs.len() * 2 != n {
        return Err(Error::invalid(format!("{} pairs do not cover {n} units (need N >= 4)", pairs.len())));
    }
    let mut seen = vec![false; n];
    let mut diffs = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        for u in [a, b] {
            if u >= n || seen[u] {
                return Err(Error::invalid(format!("malformed pairing at unit {}", u + 1)));
            }
            seen[u] = true;
        }
        let (t, c) = match (obs.w.get(a), obs.w.get(b)) {
            (true, false) => (a, b),
            (false, true) => (b, a),
            _ => return Err(Error::invalid(format!("pair ({}, {}) does not have exactly one treated unit", a + 1, b + 1))),
        };
        diffs.push(obs.y[t] - obs.y[c]);
    }
    let m = mean(&diffs);
    let ss = if diffs.len() > 1 { sample_var(&diffs) * (diffs.len() - 1) as f64 } else { 0.0 };
    debug_assert!(m.is_finite());
    let nf = n as f64;
    Ok(VarianceEstimate::exact(
        EstimatorKind::Pair,
        4.0 / (nf * (nf - 2.0)) * ss,
        serde_json::json!({"pairs": pairs.len()}),
    ))
}
