//! Design assumption checks.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::contrast::{substitute_split, SubstituteMode};
use crate::design::{Design, Structure};

/// Support size above which the quadratic substitute scan is skipped.
pub const SUBSTITUTE_SCAN_LIMIT: usize = 20_000;

pub const WEIGHT_TOL: f64 = 1e-9;
const PI_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Unknown,
}

impl Verdict {
    fn of(b: bool) -> Self {
        if b {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "yes",
            Verdict::Fail => "no",
            Verdict::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub positivity: Verdict,
    pub equal_size_constant_propensity: Verdict,
    pub epsem: Verdict,
    pub measurable: Verdict,
    pub closed_under_label_switching: Verdict,
    pub substitution: Verdict,
    pub fixed_total_weight: Verdict,
    pub details: Vec<String>,
}

impl AssumptionReport {
    pub fn rows(&self) -> [(&'static str, Verdict); 7] {
        [
            ("positivity", self.positivity),
            ("equal_size_constant_propensity", self.equal_size_constant_propensity),
            ("epsem", self.epsem),
            ("measurable", self.measurable),
            ("closed_under_label_switching", self.closed_under_label_switching),
            ("substitution", self.substitution),
            ("fixed_total_weight", self.fixed_total_weight),
        ]
    }
}

pub fn check_assumptions(d: &Design) -> AssumptionReport {
    let mut details = Vec::new();
    let n = d.n();
    let pi = d.exact_propensities().ok();

    let positivity = match pi {
        Some(p) => {
            let bad = p.iter().position(|v| !(*v > 0.0 && *v < 1.0));
            if let Some(i) = bad {
                details.push(format!("positivity: unit {} has propensity {}", i + 1, p[i]));
            }
            Verdict::of(bad.is_none())
        }
        None => Verdict::Unknown,
    };
    let epsem = match pi {
        Some(p) => {
            let bad = p.iter().position(|v| (v - p[0]).abs() > PI_TOL);
            if let Some(i) = bad {
                details.push(format!("epsem: unit {} has propensity {} vs {}", i + 1, p[i], p[0]));
            }
            Verdict::of(bad.is_none())
        }
        None => Verdict::Unknown,
    };
    let measurable = match d.pair_table() {
        Ok(t) => {
            let mut witness = None;
            'outer: for i in 0..n {
                for j in (i + 1)..n {
                    for (k, c) in t.cells(i, j).iter().enumerate() {
                        if *c <= 0.0 {
                            witness = Some((i, j, k));
                            break 'outer;
                        }
                    }
                }
            }
            if let Some((i, j, k)) = witness {
                details.push(format!(
                    "measurable: Pr(W_{} = {}, W_{} = {}) = 0",
                    i + 1,
                    k / 2,
                    j + 1,
                    k % 2
                ));
            }
            Verdict::of(witness.is_none())
        }
        Err(_) => Verdict::Unknown,
    };

    let Ok((support, _)) = d.support() else {
        let crd = match d.structure() {
            Structure::Crd { n_treated } => Some(*n_treated),
            _ => None,
        };
        let (eq, closed, subs, ftw) = match crd {
            Some(k) => (
                Verdict::of(2 * k == n),
                Verdict::of(2 * k == n),
                Verdict::of(2 * k == n && n % 4 == 0),
                Verdict::Pass,
            ),
            None => {
                details.push("support not enumerable; support-based checks skipped".into());
                (Verdict::Unknown, Verdict::Unknown, Verdict::Unknown, Verdict::Unknown)
            }
        };
        return AssumptionReport {
            positivity,
            equal_size_constant_propensity: eq,
            epsem,
            measurable,
            closed_under_label_switching: closed,
            substitution: subs,
            fixed_total_weight: ftw,
            details,
        };
    };
    let pi = pi.expect("explicit designs have exact propensities");

    let half_pi = pi.iter().all(|p| (p - 0.5).abs() <= PI_TOL);
    let unequal = support.iter().find(|w| w.n_treated() * 2 != n);
    if let Some(w) = unequal {
        details.push(format!("equal_size: {w} has {} treated", w.n_treated()));
    }
    let equal_size = Verdict::of(half_pi && unequal.is_none());

    let members: HashSet<_> = support.iter().collect();
    let open = support.iter().find(|w| !members.contains(&w.complement()));
    if let Some(w) = open {
        details.push(format!("closed: complement of {w} is not in the support"));
    }
    let closed = Verdict::of(open.is_none());

    let mode = if equal_size == Verdict::Pass {
        Some(SubstituteMode::EqualSize)
    } else if epsem == Verdict::Pass {
        Some(SubstituteMode::Epsem)
    } else {
        None
    };
    let substitution = match mode {
        None => {
            details.push("substitution: needs equal groups or an EPSEM design".into());
            Verdict::Fail
        }
        Some(mode) => {
            let mut verdict = Verdict::Pass;
            if matches!(d.structure(), Structure::Crd { .. }) {
                if let Err(e) = substitute_split(support[0], mode) {
                    details.push(format!("substitution: {e}"));
                    verdict = Verdict::Fail;
                }
            } else if support.len() > SUBSTITUTE_SCAN_LIMIT {
                details.push("substitution: support too large to scan".into());
                verdict = Verdict::Unknown;
            } else {
                for w in support {
                    match substitute_split(*w, mode) {
                        Err(e) => {
                            details.push(format!("substitution: {e}"));
                            verdict = Verdict::Fail;
                            break;
                        }
                        Ok((a, b)) => {
                            if !support.iter().any(|m| w.common_treated(m) == a && w.treated_among_controls(m) == b) {
                                details.push(format!("substitution: {w} has no substitute"));
                                verdict = Verdict::Fail;
                                break;
                            }
                        }
                    }
                }
            }
            verdict
        }
    };

    let two_n = 2.0 * n as f64;
    let ftw_bad = if positivity == Verdict::Pass {
        support.iter().find(|w| {
            let total: f64 = (0..n).map(|i| if w.get(i) { 1.0 / pi[i] } else { 1.0 / (1.0 - pi[i]) }).sum();
            (total - two_n).abs() > WEIGHT_TOL
        })
    } else {
        support.first()
    };
    if let Some(w) = ftw_bad {
        details.push(format!("fixed_total_weight: fails at {w}"));
    }

    AssumptionReport {
        positivity,
        equal_size_constant_propensity: equal_size,
        epsem,
        measurable,
        closed_under_label_switching: closed,
        substitution,
        fixed_total_weight: Verdict::of(ftw_bad.is_none()),
        details,
    }
}
