//! Q-matrix decompositions of the variance and their Horvitz-Thompson-type estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{Error, Result};
use crate::estimators::{check_pi, EstimatorKind, VarianceEstimate};
use crate::outcomes::{ObservedData, PotentialOutcomes};
use crate::sum::Accumulator;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const EIGEN_FLOOR: f64 = -1e-10;
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Largest |coefficient| treated as zero in feasibility checks.
pub const COEF_TOL: f64 = 1e-12;

/// An N x N matrix used in the decomposition. Holds any square matrix; see [`validate_q`].
#[derive(Clone, Debug, PartialEq)]
pub struct QMatrix(DMatrix<f64>);

impl QMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("Q must be a nonempty square matrix"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Q entries must be finite"));
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid("Q must be a nonempty square matrix"));
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// xᵀ Q x.
    pub fn quadratic(&self, x: &[f64]) -> f64 {
        let v = DVector::from_column_slice(x);
        v.dot(&(&self.0 * &v))
    }
}

/// (I - J/N) / {N(N - 1)}.
pub fn default_q_crd(n: usize) -> Result<QMatrix> {
    if n < 2 {
        return Err(Error::invalid("default Q needs n >= 2"));
    }
    let nf = n as f64;
    let s = 1.0 / (nf * (nf - 1.0));
    QMatrix::from_matrix(DMatrix::from_fn(n, n, |i, j| {
        (if i == j { 1.0 } else { 0.0 } - 1.0 / nf) * s
    }))
}

/// Outcome of [`validate_q`], with witnesses for each failed condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QValidation {
    pub symmetric: bool,
    pub max_asymmetry: f64,
    pub nonnegative_definite: bool,
    pub min_eigenvalue: f64,
    pub diagonal_ok: bool,
    /// (row, value) of the worst diagonal entry, 1-based.
    pub worst_diagonal: Option<(usize, f64)>,
    pub row_sums_ok: bool,
    /// (row, sum) of the worst row, 1-based.
    pub worst_row: Option<(usize, f64)>,
}

impl QValidation {
    pub fn passes(&self) -> bool {
        self.symmetric && self.nonnegative_definite && self.diagonal_ok && self.row_sums_ok
    }
}

pub fn validate_q(q: &QMatrix) -> QValidation {
    let m = q.matrix();
    let n = q.n();
    let target = 1.0 / (n * n) as f64;
    let max_asymmetry = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    let sym = (m + m.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.min();
    let (mut worst_diagonal, mut worst_d) = (None, 0.0);
    for i in 0..n {
        let dev = (m[(i, i)] - target).abs();
        if dev > worst_d {
            worst_d = dev;
            worst_diagonal = Some((i + 1, m[(i, i)]));
        }
    }
    let (mut worst_row, mut worst_r) = (None, 0.0);
    for i in 0..n {
        let s: f64 = m.row(i).iter().copied().collect::<Accumulator>().value();
        if s.abs() > worst_r {
            worst_r = s.abs();
            worst_row = Some((i + 1, s));
        }
    }
    QValidation {
        symmetric: max_asymmetry <= SYMMETRY_TOL,
        max_asymmetry,
        nonnegative_definite: min_eigenvalue >= EIGEN_FLOOR,
        min_eigenvalue,
        diagonal_ok: worst_d <= SYMMETRY_TOL,
        worst_diagonal: if worst_d > SYMMETRY_TOL { worst_diagonal } else { None },
        row_sums_ok: worst_r <= ROW_SUM_TOL,
        worst_row: if worst_r > ROW_SUM_TOL { worst_row } else { None },
    }
}

/// A zero-probability cell whose coefficient does not vanish.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellViolation {
    /// 1-based units.
    pub i: usize,
    pub j: usize,
    pub wi: u8,
    pub wj: u8,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub violations: Vec<CellViolation>,
}

#[inline]
fn marginal(pi: f64, w: bool) -> f64 {
    if w {
        pi
    } else {
        1.0 - pi
    }
}

/// Coefficient κ of Y_i(wi) Y_j(wj) inside the pair sum of Ṽ_d(Q), before the ± sign.
#[inline]
fn coefficient(n2: f64, p: f64, pi_i: f64, pi_j: f64, wi: bool, wj: bool, q: f64) -> f64 {
    p / (n2 * marginal(pi_i, wi) * marginal(pi_j, wj)) + q - 1.0 / n2
}

const CELLS: [(bool, bool); 4] = [(false, false), (false, true), (true, false), (true, true)];

#[inline]
fn sign(wi: bool, wj: bool) -> f64 {
    if wi == wj {
        1.0
    } else {
        -1.0
    }
}

/// Checks that every zero-probability cell has a vanishing coefficient.
pub fn q_feasible_for_design(d: &Design, q: &QMatrix) -> Result<Feasibility> {
    let n = d.n();
    if q.n() != n {
        return Err(Error::invalid(format!("Q is {}x{} but the design has {n} units", q.n(), q.n())));
    }
    let pi = d.exact_propensities()?;
    let t = d.pair_table()?;
    let n2 = (n * n) as f64;
    let mut violations = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            for (k, &(wi, wj)) in CELLS.iter().enumerate() {
                if t.cells(i, j)[k] == 0.0 {
                    let c = coefficient(n2, 0.0, pi[i], pi[j], wi, wj, q.get(i, j));
                    if c.abs() > COEF_TOL {
                        violations.push(CellViolation { i: i + 1, j: j + 1, wi: wi as u8, wj: wj as u8, coefficient: c });
                    }
                }
            }
        }
    }
    Ok(Feasibility { feasible: violations.is_empty(), violations })
}

fn pair_sum(n: usize, f: impl Fn(usize, usize) -> f64) -> f64 {
    let mut acc = Accumulator::new();
    for i in 0..n {
        for j in (i + 1)..n {
            acc.add(f(i, j));
        }
    }
    acc.value()
}

fn outcome(po: &PotentialOutcomes, i: usize, w: bool) -> f64 {
    if w {
        po.y1[i]
    } else {
        po.y0[i]
    }
}

/// Population quantity Ṽ_d(Q).
pub fn v_tilde(d: &Design, po: &PotentialOutcomes, q: &QMatrix) -> Result<f64> {
    let n = d.n();
    if q.n() != n || po.n() != n {
        return Err(Error::invalid("Q, outcomes and design sizes differ"));
    }
    let pi = d.exact_propensities()?;
    check_pi(pi, n)?;
    let t = d.pair_table()?;
    let n2 = (n * n) as f64;
    let mut acc = Accumulator::new();
    for i in 0..n {
        acc.add((po.y1[i] * po.y1[i] / pi[i] + po.y0[i] * po.y0[i] / (1.0 - pi[i])) / n2);
    }
    acc.add(2.0 * pair_sum(n, |i, j| {
        let cells = t.cells(i, j);
        CELLS
            .iter()
            .enumerate()
            .map(|(k, &(wi, wj))| {
                sign(wi, wj)
                    * coefficient(n2, cells[k], pi[i], pi[j], wi, wj, q.get(i, j))
                    * outcome(po, i, wi)
                    * outcome(po, j, wj)
            })
            .sum()
    }));
    Ok(acc.value())
}

/// The general expansion with coefficients p/(π π') - N/(N - 1), before subtracting the
/// effect-heterogeneity term.
pub fn expansion_v_tilde(d: &Design, po: &PotentialOutcomes) -> Result<f64> {
    let n = d.n();
    let pi = d.exact_propensities()?;
    check_pi(pi, n)?;
    let t = d.pair_table()?;
    let (nf, n2) = (n as f64, (n * n) as f64);
    let r = nf / (nf - 1.0);
    let mut acc = Accumulator::new();
    for i in 0..n {
        acc.add(po.y1[i] * po.y1[i] / pi[i] + po.y0[i] * po.y0[i] / (1.0 - pi[i]));
    }
    acc.add(2.0 * pair_sum(n, |i, j| {
        let cells = t.cells(i, j);
        CELLS
            .iter()
            .enumerate()
            .map(|(k, &(wi, wj))| {
                sign(wi, wj)
                    * (cells[k] / (marginal(pi[i], wi) * marginal(pi[j], wj)) - r)
                    * outcome(po, i, wi)
                    * outcome(po, j, wj)
            })
            .sum()
    }));
    Ok(acc.value() / n2)
}

/// Unbiased Horvitz-Thompson-type estimate of Ṽ_d(Q). May be negative.
pub fn estimate_decomposition(d: &Design, obs: &ObservedData, q: &QMatrix) -> Result<VarianceEstimate> {
    let n = d.n();
    if q.n() != n || obs.n() != n {
        return Err(Error::invalid("Q, observed data and design sizes differ"));
    }
    let report = validate_q(q);
    if !report.passes() {
        return Err(Error::invalid(format!("Q fails its validity conditions: {report:?}")));
    }
    let feas = q_feasible_for_design(d, q)?;
    if let Some(v) = feas.violations.first() {
        return Err(Error::InfeasibleQ(format!(
            "cell p_{},{}({},{}) has probability 0 but coefficient {:.3e}",
            v.i, v.j, v.wi, v.wj, v.coefficient
        )));
    }
    let pi = d.exact_propensities()?;
    check_pi(pi, n)?;
    let t = d.pair_table()?;
    let n2 = (n * n) as f64;
    let w = obs.w;
    let mut acc = Accumulator::new();
    for i in 0..n {
        let m = marginal(pi[i], w.get(i));
        acc.add(obs.y[i] * obs.y[i] / (n2 * m * m));
    }
    acc.add(2.0 * pair_sum(n, |i, j| {
        let (wi, wj) = (w.get(i), w.get(j));
        let p = t.get(i, j, wi, wj);
        let c = coefficient(n2, p, pi[i], pi[j], wi, wj, q.get(i, j));
        sign(wi, wj) * c * obs.y[i] * obs.y[j] / p
    }));
    Ok(VarianceEstimate::exact(EstimatorKind::Decomposition, acc.value(), serde_json::json!({})))
}
