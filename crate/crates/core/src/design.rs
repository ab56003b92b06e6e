//! Randomized designs: probability distributions over assignment vectors.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{binomial, for_each_combination, Assignment, MAX_UNITS};
use crate::balance::BalanceCriterion;
use crate::error::{Error, Result};
use crate::outcomes::Covariates;
use crate::rng::stream_rng;
use crate::sum::{ksum, Accumulator};

pub const DEFAULT_ENUMERATION_CAP: u64 = 5_000_000;
pub const DEFAULT_MC_BUDGET: usize = 100_000;
pub const DEFAULT_MAX_TRIES: u64 = 1_000_000;

/// Tolerance for probability identities.
pub const PROB_TOL: f64 = 1e-12;

/// Knobs shared by the builders.
#[derive(Clone, Debug)]
pub struct DesignOptions {
    /// Largest support that is enumerated explicitly.
    pub enumeration_cap: u64,
    /// Fall back to a sampler when the support exceeds the cap.
    pub allow_sampler: bool,
    /// Draws used when probabilities of an implicit design must be estimated.
    pub mc_budget: usize,
    /// Seed for those draws.
    pub mc_seed: u64,
    /// Accept-reject proposals allowed per accepted draw.
    pub max_tries: u64,
    /// Allowed deviation of explicit probabilities from summing to one.
    pub prob_tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            allow_sampler: true,
            mc_budget: DEFAULT_MC_BUDGET,
            mc_seed: 0,
            max_tries: DEFAULT_MAX_TRIES,
            prob_tol: PROB_TOL,
        }
    }
}

/// Known structure, used for closed-form probabilities and substitute generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Crd { n_treated: usize },
    MatchedPair { pairs: Vec<(usize, usize)> },
    Generic,
}

/// A probability that is either exact or a Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ProbQuery {
    Exact { value: f64 },
    MonteCarlo { value: f64, se: f64, draws: usize },
}

impl ProbQuery {
    pub fn value(&self) -> f64 {
        match *self {
            ProbQuery::Exact { value } | ProbQuery::MonteCarlo { value, .. } => value,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, ProbQuery::Exact { .. })
    }
}

/// Joint assignment probabilities p_ij(wi, wj) for every ordered pair of units.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable {
    n: usize,
    cells: Vec<[f64; 4]>,
}

impl PairTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Pr(W_i = wi, W_j = wj).
    #[inline]
    pub fn get(&self, i: usize, j: usize, wi: bool, wj: bool) -> f64 {
        self.cells[i * self.n + j][(wi as usize) * 2 + wj as usize]
    }

    /// Cells ordered (0,0), (0,1), (1,0), (1,1).
    #[inline]
    pub fn cells(&self, i: usize, j: usize) -> [f64; 4] {
        self.cells[i * self.n + j]
    }

    /// Pr(W_j = 1 | W_i = wi), or `None` when Pr(W_i = wi) = 0.
    pub fn conditional(&self, i: usize, wi: bool, j: usize) -> Option<f64> {
        let denom = self.get(i, j, wi, true) + self.get(i, j, wi, false);
        if denom <= 0.0 {
            None
        } else {
            Some(self.get(i, j, wi, true) / denom)
        }
    }

    fn from_support(n: usize, support: &[Assignment], probs: &[f64]) -> Self {
        let rows: Vec<Vec<[f64; 4]>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![[Accumulator::new(); 4]; n];
                for (w, &p) in support.iter().zip(probs) {
                    let wi = (w.get(i) as usize) * 2;
                    for (j, cell) in acc.iter_mut().enumerate() {
                        cell[wi + w.get(j) as usize].add(p);
                    }
                }
                acc.iter()
                    .map(|c| [c[0].value(), c[1].value(), c[2].value(), c[3].value()])
                    .collect()
            })
            .collect();
        Self { n, cells: rows.into_iter().flatten().collect() }
    }

    fn from_fn(n: usize, pi: &[f64], f: impl Fn(usize, usize) -> [f64; 4]) -> Self {
        let mut cells = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    cells.push([1.0 - pi[i], 0.0, 0.0, pi[i]]);
                } else {
                    cells.push(f(i, j));
                }
            }
        }
        Self { n, cells }
    }
}

#[derive(Clone)]
struct Support {
    vectors: Vec<Assignment>,
    probs: Vec<f64>,
    index: HashMap<Assignment, usize>,
    sampler: WeightedIndex<f64>,
}

impl Support {
    fn new(mut entries: Vec<(Assignment, f64)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let (vectors, probs): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index: HashMap<Assignment, usize> =
            vectors.iter().enumerate().map(|(k, w)| (*w, k)).collect();
        let sampler = WeightedIndex::new(&probs)
            .map_err(|e| Error::invalid(format!("bad support weights: {e}")))?;
        Ok(Self { vectors, probs, index, sampler })
    }
}

#[derive(Clone)]
enum Sampler {
    Crd {
        n_treated: usize,
    },
    MatchedPair {
        pairs: Vec<(usize, usize)>,
    },
    Rerandomized {
        base: Box<Design>,
        covariates: Arc<Covariates>,
        criterion: Arc<dyn BalanceCriterion>,
        threshold: f64,
        max_tries: u64,
    },
}

#[derive(Clone)]
enum Repr {
    Explicit(Support),
    Implicit(Sampler),
}

struct McStats {
    pi: Vec<f64>,
    table: PairTable,
    draws: usize,
}

/// A randomized design over `n` units. Immutable after construction; caches are filled lazily
/// and are safe to share across threads.
#[derive(Clone)]
pub struct Design {
    n: usize,
    repr: Repr,
    structure: Structure,
    pi: Option<Vec<f64>>,
    mc_budget: usize,
    mc_seed: u64,
    pairs: OnceLock<Arc<PairTable>>,
    mc: OnceLock<Arc<McStats>>,
    pub(crate) kernel: OnceLock<Arc<DMatrix<f64>>>,
}

impl fmt::Debug for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.repr {
            Repr::Explicit(s) => format!("explicit({} vectors)", s.vectors.len()),
            Repr::Implicit(Sampler::Crd { .. }) => "implicit(crd)".into(),
            Repr::Implicit(Sampler::MatchedPair { .. }) => "implicit(matched_pair)".into(),
            Repr::Implicit(Sampler::Rerandomized { criterion, threshold, .. }) => {
                format!("implicit(rerandomized {} < {threshold})", criterion.name())
            }
        };
        f.debug_struct("Design")
            .field("n", &self.n)
            .field("repr", &kind)
            .field("structure", &self.structure)
            .finish()
    }
}

impl PartialEq for Design {
    /// Equal when both are explicit with identical supports and probabilities, or both are
    /// the same structured sampler.
    fn eq(&self, other: &Self) -> bool {
        match (&self.repr, &other.repr) {
            (Repr::Explicit(a), Repr::Explicit(b)) => {
                a.vectors == b.vectors && a.probs == b.probs
            }
            (Repr::Implicit(Sampler::Crd { n_treated: a }), Repr::Implicit(Sampler::Crd { n_treated: b })) => {
                self.n == other.n && a == b
            }
            (
                Repr::Implicit(Sampler::MatchedPair { pairs: a }),
                Repr::Implicit(Sampler::MatchedPair { pairs: b }),
            ) => a == b,
            _ => false,
        }
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_UNITS {
        return Err(Error::invalid(format!("number of units must be in 1..={MAX_UNITS}, got {n}")));
    }
    Ok(())
}

impl Design {
    fn from_parts(n: usize, repr: Repr, structure: Structure, pi: Option<Vec<f64>>, opts: &DesignOptions) -> Self {
        Self {
            n,
            repr,
            structure,
            pi,
            mc_budget: opts.mc_budget,
            mc_seed: opts.mc_seed,
            pairs: OnceLock::new(),
            mc: OnceLock::new(),
            kernel: OnceLock::new(),
        }
    }

    fn explicit_generic(n: usize, entries: Vec<(Assignment, f64)>, opts: &DesignOptions) -> Result<Self> {
        let support = Support::new(entries)?;
        let pi = (0..n)
            .map(|i| {
                ksum(
                    support
                        .vectors
                        .iter()
                        .zip(&support.probs)
                        .filter(|(w, _)| w.get(i))
                        .map(|(_, &p)| p),
                )
            })
            .collect();
        Ok(Self::from_parts(n, Repr::Explicit(support), Structure::Generic, Some(pi), opts))
    }

    /// Completely randomized design with `n_treated` of `n` units treated.
    pub fn crd(n: usize, n_treated: usize) -> Result<Self> {
        Self::crd_with(n, n_treated, &DesignOptions::default())
    }

    pub fn crd_with(n: usize, n_treated: usize, opts: &DesignOptions) -> Result<Self> {
        check_n(n)?;
        if n_treated == 0 || n_treated >= n {
            return Err(Error::invalid(format!(
                "CRD needs 0 < n_treated < n, got n = {n}, n_treated = {n_treated}"
            )));
        }
        let count = binomial(n, n_treated);
        let pi = vec![n_treated as f64 / n as f64; n];
        let structure = Structure::Crd { n_treated };
        if count > opts.enumeration_cap as u128 {
            if !opts.allow_sampler {
                return Err(Error::SupportTooLarge { count, cap: opts.enumeration_cap });
            }
            return Ok(Self::from_parts(n, Repr::Implicit(Sampler::Crd { n_treated }), structure, Some(pi), opts));
        }
        let p = 1.0 / count as f64;
        let mut entries = Vec::with_capacity(count as usize);
        for_each_combination(n, n_treated, |bits| {
            entries.push((Assignment::from_raw_unchecked(n, bits), p));
        });
        let support = Support::new(entries)?;
        Ok(Self::from_parts(n, Repr::Explicit(support), structure, Some(pi), opts))
    }

    /// Matched-pair design treating exactly one unit of each pair (0-based unit indices).
    pub fn matched_pair(pairs: &[(usize, usize)]) -> Result<Self> {
        Self::matched_pair_with(pairs, &DesignOptions::default())
    }

    pub fn matched_pair_with(pairs: &[(usize, usize)], opts: &DesignOptions) -> Result<Self> {
        let n = pairs.len() * 2;
        check_n(n)?;
        let mut seen = vec![false; n];
        for &(a, b) in pairs {
            for u in [a, b] {
                if u >= n {
                    return Err(Error::invalid(format!("pair member {} outside 1..={n}", u + 1)));
                }
                if seen[u] {
                    return Err(Error::invalid(format!("unit {} appears in more than one pair", u + 1)));
                }
                seen[u] = true;
            }
        }
        let pairs = pairs.to_vec();
        let structure = Structure::MatchedPair { pairs: pairs.clone() };
        let pi = Some(vec![0.5; n]);
        let m = pairs.len();
        let count = 1u128 << m;
        if count > opts.enumeration_cap as u128 {
            if !opts.allow_sampler {
                return Err(Error::SupportTooLarge { count, cap: opts.enumeration_cap });
            }
            return Ok(Self::from_parts(n, Repr::Implicit(Sampler::MatchedPair { pairs }), structure, pi, opts));
        }
        let p = 1.0 / count as f64;
        let entries = (0..count as u64)
            .map(|mask| {
                let mut bits = 0u64;
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    let unit = if mask >> k & 1 == 1 { a } else { b };
                    bits |= 1u64 << (n - 1 - unit);
                }
                (Assignment::from_raw_unchecked(n, bits), p)
            })
            .collect();
        let support = Support::new(entries)?;
        Ok(Self::from_parts(n, Repr::Explicit(support), structure, pi, opts))
    }

    /// Arbitrary enumerated design.
    pub fn explicit(support: Vec<Assignment>, probs: Vec<f64>) -> Result<Self> {
        Self::explicit_with(support, probs, &DesignOptions::default())
    }

    pub fn explicit_with(support: Vec<Assignment>, probs: Vec<f64>, opts: &DesignOptions) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::invalid("support and probabilities must be nonempty and of equal length"));
        }
        let n = support[0].n();
        if support.iter().any(|w| w.n() != n) {
            return Err(Error::invalid("support vectors have different lengths"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(format!("support probabilities must be positive, got {p}")));
        }
        let total = ksum(probs.iter().copied());
        if (total - 1.0).abs() > opts.prob_tol {
            return Err(Error::invalid(format!("probabilities sum to {total}, not 1")));
        }
        let mut seen = std::collections::HashSet::new();
        for w in &support {
            if !seen.insert(*w) {
                return Err(Error::invalid(format!("duplicate support vector {w}")));
            }
        }
        Self::explicit_generic(n, support.into_iter().zip(probs).collect(), opts)
    }

    /// Design whose law is the empirical distribution of `draws`. With `symmetrize`, every draw
    /// also contributes its complement.
    pub fn empirical(draws: &[Assignment], symmetrize: bool) -> Result<Self> {
        let first = draws.first().ok_or_else(|| Error::invalid("no draws"))?;
        let n = first.n();
        let mut counts: HashMap<Assignment, u64> = HashMap::new();
        for w in draws {
            if w.n() != n {
                return Err(Error::invalid("draws have different lengths"));
            }
            *counts.entry(*w).or_default() += 1;
            if symmetrize {
                *counts.entry(w.complement()).or_default() += 1;
            }
        }
        let total: u64 = counts.values().sum();
        let entries = counts.into_iter().map(|(w, c)| (w, c as f64 / total as f64)).collect();
        Self::explicit_generic(n, entries, &DesignOptions::default())
    }

    /// Rerandomized design: the base law conditioned on `criterion < threshold`.
    pub fn rerandomized(
        base: &Design,
        covariates: Covariates,
        criterion: Arc<dyn BalanceCriterion>,
        threshold: f64,
    ) -> Result<Self> {
        Self::rerandomized_with(base, covariates, criterion, threshold, &DesignOptions::default())
    }

    pub fn rerandomized_with(
        base: &Design,
        covariates: Covariates,
        criterion: Arc<dyn BalanceCriterion>,
        threshold: f64,
        opts: &DesignOptions,
    ) -> Result<Self> {
        if covariates.n() != base.n {
            return Err(Error::invalid(format!(
                "covariates cover {} units but the design has {}",
                covariates.n(),
                base.n
            )));
        }
        if threshold.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        if threshold == f64::INFINITY {
            return Ok(base.clone());
        }
        match &base.repr {
            Repr::Explicit(s) => {
                let kept: Vec<(Assignment, f64)> = s
                    .vectors
                    .par_iter()
                    .zip(&s.probs)
                    .filter(|(w, _)| matches!(criterion.score(&covariates, **w), Some(v) if v < threshold))
                    .map(|(w, p)| (*w, *p))
                    .collect();
                if kept.is_empty() {
                    return Err(Error::InfeasibleThreshold);
                }
                let total = ksum(kept.iter().map(|e| e.1));
                let entries = kept.into_iter().map(|(w, p)| (w, p / total)).collect();
                let mut d = Self::explicit_generic(base.n, entries, opts)?;
                d.mc_budget = opts.mc_budget;
                Ok(d)
            }
            Repr::Implicit(_) => Ok(Self::from_parts(
                base.n,
                Repr::Implicit(Sampler::Rerandomized {
                    base: Box::new(base.clone()),
                    covariates: Arc::new(covariates),
                    criterion,
                    threshold,
                    max_tries: opts.max_tries,
                }),
                Structure::Generic,
                None,
                opts,
            )),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    pub fn is_enumerable(&self) -> bool {
        matches!(self.repr, Repr::Explicit(_))
    }

    /// True when propensities and pairwise probabilities are exact (enumerated or closed form).
    pub fn has_exact_probabilities(&self) -> bool {
        self.pi.is_some()
    }

    pub fn support_len(&self) -> Option<usize> {
        match &self.repr {
            Repr::Explicit(s) => Some(s.vectors.len()),
            Repr::Implicit(_) => None,
        }
    }

    /// Support vectors (lexicographic order) and their probabilities.
    pub fn support(&self) -> Result<(&[Assignment], &[f64])> {
        match &self.repr {
            Repr::Explicit(s) => Ok((&s.vectors, &s.probs)),
            Repr::Implicit(_) => Err(Error::NotEnumerable(
                "the design is sampler-backed; raise the enumeration cap or use Monte Carlo".into(),
            )),
        }
    }

    pub fn enumerate_support(&self) -> Result<impl Iterator<Item = (Assignment, f64)> + '_> {
        let (v, p) = self.support()?;
        Ok(v.iter().copied().zip(p.iter().copied()))
    }

    /// Pr(W = w). Exact for explicit and structured designs.
    pub fn prob(&self, w: Assignment) -> Result<f64> {
        if w.n() != self.n {
            return Err(Error::invalid("assignment length does not match the design"));
        }
        match &self.repr {
            Repr::Explicit(s) => Ok(s.index.get(&w).map_or(0.0, |&k| s.probs[k])),
            Repr::Implicit(Sampler::Crd { n_treated }) => Ok(if w.n_treated() == *n_treated {
                1.0 / binomial(self.n, *n_treated) as f64
            } else {
                0.0
            }),
            Repr::Implicit(Sampler::MatchedPair { pairs }) => {
                let ok = pairs.iter().all(|&(a, b)| w.get(a) != w.get(b));
                Ok(if ok { 0.5f64.powi(pairs.len() as i32) } else { 0.0 })
            }
            Repr::Implicit(Sampler::Rerandomized { .. }) => Err(Error::NotEnumerable(
                "vector probabilities of a rerandomized sampler are not available".into(),
            )),
        }
    }

    pub fn contains(&self, w: Assignment) -> Result<bool> {
        Ok(self.prob(w)? > 0.0)
    }

    fn mc_stats(&self) -> Result<Arc<McStats>> {
        if let Some(s) = self.mc.get() {
            return Ok(s.clone());
        }
        let draws = self.mc_budget.max(1);
        let mut rng = stream_rng(self.mc_seed, 0);
        let mut acc = vec![[0u64; 4]; self.n * self.n];
        let mut treated = vec![0u64; self.n];
        for _ in 0..draws {
            let w = self.sample(&mut rng)?;
            for i in 0..self.n {
                let wi = w.get(i);
                treated[i] += wi as u64;
                for j in 0..self.n {
                    acc[i * self.n + j][(wi as usize) * 2 + w.get(j) as usize] += 1;
                }
            }
        }
        let m = draws as f64;
        let pi = treated.iter().map(|&c| c as f64 / m).collect();
        let cells = acc.iter().map(|c| c.map(|x| x as f64 / m)).collect();
        let stats = Arc::new(McStats { pi, table: PairTable { n: self.n, cells }, draws });
        let _ = self.mc.set(stats);
        Ok(self.mc.get().expect("set above").clone())
    }

    /// Propensity scores π_i; Monte Carlo estimates for rerandomized samplers.
    pub fn propensities(&self) -> Result<Vec<f64>> {
        match &self.pi {
            Some(p) => Ok(p.clone()),
            None => Ok(self.mc_stats()?.pi.clone()),
        }
    }

    /// Exact propensities, or an error for sampler-only designs.
    pub fn exact_propensities(&self) -> Result<&[f64]> {
        self.pi.as_deref().ok_or_else(|| {
            Error::NotEnumerable("propensities of this design are only available as Monte Carlo estimates".into())
        })
    }

    pub fn propensity(&self, i: usize) -> Result<ProbQuery> {
        if i >= self.n {
            return Err(Error::OutOfRange { index: i, n: self.n });
        }
        match &self.pi {
            Some(p) => Ok(ProbQuery::Exact { value: p[i] }),
            None => {
                let s = self.mc_stats()?;
                let v = s.pi[i];
                Ok(ProbQuery::MonteCarlo { value: v, se: (v * (1.0 - v) / s.draws as f64).sqrt(), draws: s.draws })
            }
        }
    }

    /// Exact pairwise table; errors for sampler-only designs.
    pub fn pair_table(&self) -> Result<Arc<PairTable>> {
        if let Some(t) = self.pairs.get() {
            return Ok(t.clone());
        }
        let pi = self.exact_propensities()?;
        let n = self.n;
        let table = match (&self.structure, &self.repr) {
            (Structure::Crd { n_treated }, _) => {
                let (k, nf) = (*n_treated as f64, n as f64);
                let d = nf * (nf - 1.0);
                let c = [(nf - k) * (nf - k - 1.0) / d, k * (nf - k) / d, k * (nf - k) / d, k * (k - 1.0) / d];
                PairTable::from_fn(n, pi, |_, _| c)
            }
            (Structure::MatchedPair { pairs }, _) => {
                let mut partner = vec![0usize; n];
                for &(a, b) in pairs {
                    partner[a] = b;
                    partner[b] = a;
                }
                PairTable::from_fn(n, pi, |i, j| if partner[i] == j { [0.0, 0.5, 0.5, 0.0] } else { [0.25; 4] })
            }
            (Structure::Generic, Repr::Explicit(s)) => PairTable::from_support(n, &s.vectors, &s.probs),
            (Structure::Generic, Repr::Implicit(_)) => unreachable!("generic implicit designs have no exact propensities"),
        };
        let _ = self.pairs.set(Arc::new(table));
        Ok(self.pairs.get().expect("set above").clone())
    }

    /// Pr(W_i = wi, W_j = wj) for i != j.
    pub fn pairwise_prob(&self, i: usize, j: usize, wi: bool, wj: bool) -> Result<ProbQuery> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::OutOfRange { index: idx, n: self.n });
            }
        }
        if i == j {
            return Err(Error::invalid("pairwise probabilities need two distinct units"));
        }
        if self.pi.is_some() {
            return Ok(ProbQuery::Exact { value: self.pair_table()?.get(i, j, wi, wj) });
        }
        let s = self.mc_stats()?;
        let v = s.table.get(i, j, wi, wj);
        Ok(ProbQuery::MonteCarlo { value: v, se: (v * (1.0 - v) / s.draws as f64).sqrt(), draws: s.draws })
    }

    /// Pr(W_j = 1 | W_i = wi) from the exact pairwise table.
    pub fn conditional_prob(&self, i: usize, wi: bool, j: usize) -> Result<f64> {
        let t = self.pair_table()?;
        t.conditional(i, wi, j).ok_or_else(|| {
            Error::Undefined(format!("Pr(W_{} = {}) is zero", i + 1, wi as u8))
        })
    }

    /// One draw from the design.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Assignment> {
        match &self.repr {
            Repr::Explicit(s) => Ok(s.vectors[s.sampler.sample(rng)]),
            Repr::Implicit(Sampler::Crd { n_treated }) => {
                let idx = rand::seq::index::sample(rng, self.n, *n_treated);
                let mut bits = 0u64;
                for i in idx.iter() {
                    bits |= 1u64 << (self.n - 1 - i);
                }
                Ok(Assignment::from_raw_unchecked(self.n, bits))
            }
            Repr::Implicit(Sampler::MatchedPair { pairs }) => {
                let mut bits = 0u64;
                for &(a, b) in pairs {
                    let unit = if rng.random::<bool>() { a } else { b };
                    bits |= 1u64 << (self.n - 1 - unit);
                }
                Ok(Assignment::from_raw_unchecked(self.n, bits))
            }
            Repr::Implicit(Sampler::Rerandomized { base, covariates, criterion, threshold, max_tries }) => {
                for _ in 0..*max_tries {
                    let w = base.sample(rng)?;
                    if matches!(criterion.score(covariates, w), Some(v) if v < *threshold) {
                        return Ok(w);
                    }
                }
                Err(Error::SamplerExhausted { tries: *max_tries, accepted: 0, rate: 0.0 })
            }
        }
    }

    /// Reproducible single draw keyed by `seed`.
    pub fn sample_assignment(&self, seed: u64) -> Result<Assignment> {
        self.sample(&mut stream_rng(seed, 0))
    }

    /// `m` draws; block `b` of 4096 draws uses stream `b` of `seed`, so the result does not
    /// depend on the thread count.
    pub fn sample_many(&self, m: usize, seed: u64) -> Result<Vec<Assignment>> {
        const BLOCK: usize = 4096;
        let blocks = m.div_ceil(BLOCK);
        let parts: Vec<Result<Vec<Assignment>>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream_rng(seed, b as u64);
                let len = BLOCK.min(m - b * BLOCK);
                (0..len).map(|_| self.sample(&mut rng)).collect()
            })
            .collect();
        let mut out = Vec::with_capacity(m);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::MaxAsmd;

    fn toy() -> Design {
        let s = ["1100", "0011", "1001", "0110"].iter().map(|s| s.parse().unwrap()).collect();
        Design::explicit(s, vec![0.25; 4]).unwrap()
    }

    #[test]
    fn crd_4_2() {
        let d = Design::crd(4, 2).unwrap();
        let (v, p) = d.support().unwrap();
        assert_eq!(v.len(), 6);
        assert!(p.iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));
        assert_eq!(v[0].to_string(), "0011");
        assert_eq!(v[5].to_string(), "1100");
        assert_eq!(d.propensity(2).unwrap().value(), 0.5);
        let p11 = d.pairwise_prob(0, 1, true, true).unwrap().value();
        assert!((p11 - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn crd_6_4() {
        let d = Design::crd(6, 4).unwrap();
        assert_eq!(d.support_len(), Some(15));
        assert!((d.propensity(0).unwrap().value() - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.pairwise_prob(0, 5, true, true).unwrap().value() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn analytic_pairs_match_enumeration() {
        let d = Design::crd(7, 3).unwrap();
        let (v, p) = d.support().unwrap();
        let brute = PairTable::from_support(7, v, p);
        let t = d.pair_table().unwrap();
        for i in 0..7 {
            for j in 0..7 {
                for k in 0..4 {
                    assert!((brute.cells(i, j)[k] - t.cells(i, j)[k]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn toy_design_pairs() {
        let d = toy();
        assert_eq!(d.pairwise_prob(0, 2, true, true).unwrap().value(), 0.0);
        assert_eq!(d.pairwise_prob(0, 2, false, false).unwrap().value(), 0.0);
        assert_eq!(d.propensities().unwrap(), vec![0.5; 4]);
    }

    #[test]
    fn matched_pairs_support() {
        let d = Design::matched_pair(&[(0, 2), (1, 3)]).unwrap();
        let s: Vec<String> = d.support().unwrap().0.iter().map(|w| w.to_string()).collect();
        assert_eq!(s, ["0011", "0110", "1001", "1100"]);
        assert_eq!(Design::matched_pair(&[(0, 1)]).unwrap().support_len(), Some(2));
        assert!(Design::matched_pair(&[(0, 1), (1, 2)]).is_err());
        assert!(Design::matched_pair(&[(0, 5), (1, 2)]).is_err());
    }

    #[test]
    fn explicit_validation() {
        let a: Assignment = "11".parse().unwrap();
        let b: Assignment = "00".parse().unwrap();
        assert!(Design::explicit(vec![a, b], vec![0.5, 0.4]).is_err());
        assert!(Design::explicit(vec![a, a], vec![0.5, 0.5]).is_err());
        assert!(Design::explicit(vec![a, "1".parse().unwrap()], vec![0.5, 0.5]).is_err());
        assert!(Design::explicit(vec![a, b], vec![1.0, 0.0]).is_err());
        assert!(Design::explicit(vec![a, b], vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn crd_cap() {
        let opts = DesignOptions { enumeration_cap: 10, allow_sampler: false, ..Default::default() };
        match Design::crd_with(6, 3, &opts) {
            Err(Error::SupportTooLarge { count, .. }) => assert_eq!(count, 20),
            other => panic!("unexpected {other:?}"),
        }
        let opts = DesignOptions { enumeration_cap: 10, ..Default::default() };
        let d = Design::crd_with(6, 3, &opts).unwrap();
        assert!(!d.is_enumerable());
        assert!(d.pairwise_prob(0, 1, true, true).unwrap().is_exact());
        assert_eq!(d.sample_assignment(3).unwrap().n_treated(), 3);
    }

    #[test]
    fn single_vector_design_samples_it() {
        let w: Assignment = "101".parse().unwrap();
        let d = Design::explicit(vec![w], vec![1.0]).unwrap();
        for s in 0..20 {
            assert_eq!(d.sample_assignment(s).unwrap(), w);
        }
    }

    #[test]
    fn rerandomized_infinite_threshold_is_base() {
        let base = Design::crd(6, 3).unwrap();
        let x = Covariates::from_columns(vec![vec![1., 2., 3., 4., 5., 6.]]).unwrap();
        let d = Design::rerandomized(&base, x, Arc::new(MaxAsmd), f64::INFINITY).unwrap();
        assert_eq!(d, base);
    }

    #[test]
    fn rerandomized_infeasible() {
        let base = Design::crd(4, 2).unwrap();
        let x = Covariates::from_columns(vec![vec![0., 0., 10., 11.]]).unwrap();
        assert!(matches!(
            Design::rerandomized(&base, x, Arc::new(MaxAsmd), 1e-9),
            Err(Error::InfeasibleThreshold)
        ));
    }

    #[test]
    fn implicit_rerandomized_reports_mc() {
        let opts = DesignOptions { enumeration_cap: 1, mc_budget: 2000, ..Default::default() };
        let base = Design::crd_with(8, 4, &opts).unwrap();
        let x = Covariates::from_columns(vec![(0..8).map(|v| v as f64).collect()]).unwrap();
        let d = Design::rerandomized_with(&base, x, Arc::new(MaxAsmd), 0.5, &opts).unwrap();
        match d.pairwise_prob(0, 1, true, true).unwrap() {
            ProbQuery::MonteCarlo { draws, se, .. } => {
                assert_eq!(draws, 2000);
                assert!(se.is_finite());
            }
            q => panic!("expected a Monte Carlo estimate, got {q:?}"),
        }
        assert!(d.pair_table().is_err());
        assert!(!d.propensity(0).unwrap().is_exact());
    }

    #[test]
    fn sampler_exhaustion() {
        let opts = DesignOptions { enumeration_cap: 1, max_tries: 50, ..Default::default() };
        let base = Design::crd_with(4, 2, &opts).unwrap();
        let x = Covariates::from_columns(vec![vec![0., 0., 10., 11.]]).unwrap();
        let d = Design::rerandomized_with(&base, x, Arc::new(MaxAsmd), 1e-9, &opts).unwrap();
        assert!(matches!(d.sample_assignment(1), Err(Error::SamplerExhausted { tries: 50, .. })));
    }

    #[test]
    fn sample_many_is_deterministic() {
        let d = Design::crd(10, 5).unwrap();
        let a = d.sample_many(10_000, 7).unwrap();
        let b = d.sample_many(10_000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|w| w.n_treated() == 5));
    }

    #[test]
    fn empirical_symmetrized() {
        let w: Assignment = "1100".parse().unwrap();
        let d = Design::empirical(&[w, w, "1010".parse().unwrap()], true).unwrap();
        assert_eq!(d.support_len(), Some(4));
        assert!(d.propensities().unwrap().iter().all(|&p| (p - 0.5).abs() < 1e-15));
    }
}
