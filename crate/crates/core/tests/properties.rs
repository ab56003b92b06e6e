//! Property tests against brute-force enumeration written independently of the library.

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use designvar::io::{parse_outcomes, write_observed_csv, write_science_csv, DesignFile, OutcomeTable};
use designvar::{
    c_vector, default_q_crd, estimate_decomposition, estimator_expectation, horvitz_thompson, is_substitute,
    neyman_variance, psi, reveal, true_variance, v_imputation_beta, v_imputation_mc, Assignment, Covariates, Design,
    DesignOptions, GammaSpec, MaxAsmd, PotentialOutcomes, SubstituteMode,
};

fn bits(n: usize, raw: u64) -> Assignment {
    Assignment::from_raw(n, raw).unwrap()
}

/// Explicit design on `n` units built from (raw vector, weight) pairs. Each vector comes with
/// its complement so every propensity is strictly inside (0, 1).
fn paired_design(n: usize, picks: &[(u64, f64)]) -> Design {
    let full = (1u64 << n) - 1;
    let mut w: BTreeMap<u64, f64> = BTreeMap::new();
    for &(r, p) in picks {
        let r = r & full;
        *w.entry(r).or_default() += p;
        *w.entry(!r & full).or_default() += p;
    }
    let total: f64 = w.values().sum();
    let (s, p): (Vec<_>, Vec<_>) = w.into_iter().map(|(r, x)| (bits(n, r), x / total)).unzip();
    Design::explicit(s, p).unwrap()
}

fn design_strategy() -> impl Strategy<Value = Design> {
    (3usize..=6).prop_flat_map(|n| {
        prop::collection::vec((any::<u64>(), 0.05f64..1.0), 1..6).prop_map(move |picks| paired_design(n, &picks))
    })
}

fn table_strategy(n: usize) -> impl Strategy<Value = PotentialOutcomes> {
    (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))
        .prop_map(|(y0, y1)| PotentialOutcomes::new(y0, y1).unwrap())
}

fn with_table() -> impl Strategy<Value = (Design, PotentialOutcomes)> {
    design_strategy().prop_flat_map(|d| {
        let n = d.n();
        (Just(d), table_strategy(n))
    })
}

struct Brute {
    support: Vec<(Assignment, f64)>,
    pi: Vec<f64>,
}

impl Brute {
    fn new(d: &Design) -> Self {
        let (s, p) = d.support().unwrap();
        let support: Vec<_> = s.iter().copied().zip(p.iter().copied()).collect();
        let pi = (0..d.n())
            .map(|i| support.iter().filter(|(w, _)| w.get(i)).map(|(_, p)| p).sum())
            .collect();
        Self { support, pi }
    }

    fn ht(&self, po: &PotentialOutcomes, w: Assignment) -> f64 {
        let n = po.n() as f64;
        (0..po.n())
            .map(|i| if w.get(i) { po.y1[i] / self.pi[i] } else { -po.y0[i] / (1.0 - self.pi[i]) })
            .sum::<f64>()
            / n
    }

    fn expect(&self, f: impl Fn(Assignment) -> f64) -> f64 {
        self.support.iter().map(|(w, p)| p * f(*w)).sum()
    }

    fn variance(&self, po: &PotentialOutcomes) -> f64 {
        let m = self.expect(|w| self.ht(po, w));
        self.expect(|w| (self.ht(po, w) - m).powi(2))
    }

    fn psi(&self, v: &[f64]) -> f64 {
        let n2 = (v.len() * v.len()) as f64;
        self.expect(|w| {
            let s: f64 = (0..v.len()).map(|i| if w.get(i) { v[i] / self.pi[i] } else { -v[i] / (1.0 - self.pi[i]) }).sum();
            s * s
        }) / n2
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ht_is_unbiased((d, po) in with_table()) {
        let b = Brute::new(&d);
        let pi = d.propensities().unwrap();
        for i in 0..d.n() {
            prop_assert!(close(pi[i], b.pi[i], 1e-12));
        }
        let e = estimator_expectation(&d, &po, |o| horvitz_thompson(o, &pi)).unwrap();
        prop_assert!(close(e, po.tau(), 1e-10), "E = {e}, tau = {}", po.tau());
    }

    #[test]
    fn variance_is_psi_of_c((d, po) in with_table()) {
        let b = Brute::new(&d);
        let pi = d.propensities().unwrap();
        let c = c_vector(&po, &pi).unwrap();
        let v = b.variance(&po);
        prop_assert!(close(true_variance(&d, &po).unwrap(), v, 1e-9));
        prop_assert!(close(psi(&d, &c).unwrap(), v, 1e-9));
        prop_assert!(close(b.psi(&c), v, 1e-9));
    }

    #[test]
    fn psi_is_nonnegative_and_convex(
        (d, a, c) in design_strategy().prop_flat_map(|d| {
            let n = d.n();
            (Just(d), prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))
        }),
        t in 0.0f64..1.0,
    ) {
        let pa = psi(&d, &a).unwrap();
        let pc = psi(&d, &c).unwrap();
        let mix: Vec<f64> = a.iter().zip(&c).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let pm = psi(&d, &mix).unwrap();
        prop_assert!(pa >= -1e-12 && pc >= -1e-12);
        prop_assert!(pm <= t * pa + (1.0 - t) * pc + 1e-9 * (pa + pc + 1.0));
        prop_assert!(close(pa, Brute::new(&d).psi(&a), 1e-9));
    }

    #[test]
    fn decomposition_on_crd_is_unbiased_for_neyman_target(
        (n, po) in (2usize..=4).prop_flat_map(|h| (Just(2 * h), table_strategy(2 * h))),
    ) {
        let d = Design::crd(n, n / 2).unwrap();
        let q = default_q_crd(n).unwrap();
        let e_dec = estimator_expectation(&d, &po, |o| estimate_decomposition(&d, o, &q).map(|v| v.value)).unwrap();
        let e_ney = estimator_expectation(&d, &po, |o| neyman_variance(o).map(|v| v.value)).unwrap();
        prop_assert!(close(e_dec, e_ney, 1e-9));
        // Neyman bias is S²(τ_i)/N.
        let eff = po.effects();
        let m = eff.iter().sum::<f64>() / n as f64;
        let s2 = eff.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        prop_assert!(close(e_ney - Brute::new(&d).variance(&po), s2 / n as f64, 1e-9));
    }

    #[test]
    fn equal_size_substitution_is_symmetric(a in 0u64..256, b in 0u64..256) {
        let (w, v) = (bits(8, a), bits(8, b));
        prop_assume!(w.n_treated() == 4 && v.n_treated() == 4);
        let wv = is_substitute(w, v, SubstituteMode::EqualSize).unwrap();
        let vw = is_substitute(v, w, SubstituteMode::EqualSize).unwrap();
        prop_assert_eq!(wv, vw);
        prop_assert_eq!(wv, w.common_treated(&v) == 2);
    }

    #[test]
    fn assignment_text_round_trip(n in 1usize..=64, raw in any::<u64>()) {
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let w = bits(n, raw & mask);
        let s = w.to_string();
        prop_assert_eq!(s.len(), n);
        prop_assert_eq!(s.parse::<Assignment>().unwrap(), w);
        prop_assert_eq!(w.complement().complement(), w);
    }

    #[test]
    fn outcome_tables_round_trip((d, po) in with_table(), k in any::<prop::sample::Index>()) {
        let dir = tempfile_dir();
        let sci = dir.join("sci.csv");
        write_science_csv(&po, &sci).unwrap();
        match parse_outcomes(std::fs::File::open(&sci).unwrap()).unwrap() {
            OutcomeTable::Science(back) => prop_assert_eq!(back, po.clone()),
            OutcomeTable::Observed(_) => prop_assert!(false, "read back as observed"),
        }
        let (s, _) = d.support().unwrap();
        let obs = reveal(&po, s[k.index(s.len())]);
        let p = dir.join("obs.csv");
        write_observed_csv(&obs, &p).unwrap();
        match parse_outcomes(std::fs::File::open(&p).unwrap()).unwrap() {
            OutcomeTable::Observed(back) => prop_assert_eq!(back, obs),
            OutcomeTable::Science(_) => prop_assert!(false, "read back as science"),
        }
        let f = DesignFile::describe(&d).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: DesignFile = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.build(&DesignOptions::default()).unwrap(), d);
        std::fs::remove_dir_all(dir).ok();
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static K: AtomicUsize = AtomicUsize::new(0);
    let p = std::env::temp_dir().join(format!("designvar-prop-{}-{}", std::process::id(), K.fetch_add(1, Ordering::Relaxed)));
    std::fs::create_dir_all(&p).unwrap();
    p
}

// Negative controls: the oracles must notice when something is wrong.

#[test]
fn perturbed_propensities_break_unbiasedness() {
    let d = Design::crd(6, 2).unwrap();
    let po = PotentialOutcomes::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![2.0, 2.0, 5.0, 4.0, 8.0, 6.0]).unwrap();
    let pi = d.propensities().unwrap();
    let good = estimator_expectation(&d, &po, |o| horvitz_thompson(o, &pi)).unwrap();
    assert!(close(good, po.tau(), 1e-12));
    let mut bad_pi = pi.clone();
    bad_pi[0] *= 1.1;
    let bad = estimator_expectation(&d, &po, |o| horvitz_thompson(o, &bad_pi)).unwrap();
    assert!((bad - po.tau()).abs() > 1e-3);
}

#[test]
fn wrong_slope_biases_the_imputation_estimator() {
    // Homogeneous table, τ = 2: β = τ is unbiased, any other slope is not.
    let d = Design::crd(6, 3).unwrap();
    let po = PotentialOutcomes::homogeneous(vec![0.5, 1.0, -2.0, 3.0, 0.0, 1.5], 2.0).unwrap();
    let v = true_variance(&d, &po).unwrap();
    let at = |beta: f64| estimator_expectation(&d, &po, |o| v_imputation_beta(&d, o, beta)).unwrap() - v;
    assert!(at(2.0).abs() < 1e-10 * v);
    for beta in [1.0, 1.9, 3.5] {
        let bias = at(beta);
        assert!(bias > 1e-6, "beta {beta}: bias {bias}");
        assert!(close(bias, (2.0 - beta).powi(2) / 5.0, 1e-9));
    }
}

#[test]
fn infinite_threshold_rerandomization_is_the_base_design() {
    let base = Design::crd(8, 4).unwrap();
    let cov = Covariates::from_columns(vec![(0..8).map(|i| i as f64).collect()]).unwrap();
    let d = Design::rerandomized(&base, cov, Arc::new(MaxAsmd), f64::INFINITY).unwrap();
    let (s0, p0) = base.support().unwrap();
    let (s1, p1) = d.support().unwrap();
    assert_eq!(s0, s1);
    assert!(p0.iter().zip(p1).all(|(a, b)| a.to_bits() == b.to_bits()));
}

/// Upper 0.001 quantile of χ²(df), Wilson-Hilferty approximation.
fn chi2_crit(df: f64) -> f64 {
    let z = 3.090_232_306;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

#[test]
fn sampler_matches_enumerated_law() {
    let d = paired_design(5, &[(0b00011, 0.4), (0b10101, 0.1), (0b01000, 0.3), (0b11110, 0.2)]);
    let m = 100_000;
    let draws = d.sample_many(m, 2024).unwrap();
    let (s, p) = d.support().unwrap();
    let mut counts = vec![0usize; s.len()];
    for w in &draws {
        let k = s.iter().position(|x| x == w).expect("draw in support");
        counts[k] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(p)
        .map(|(&c, &q)| {
            let e = q * m as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    assert!(stat < chi2_crit((s.len() - 1) as f64), "chi2 = {stat}");
    assert_eq!(draws, d.sample_many(m, 2024).unwrap());
}

#[test]
fn monte_carlo_imputation_is_reproducible() {
    let d = Design::crd(6, 3).unwrap();
    let po = PotentialOutcomes::new(vec![1.0, 2.0, 0.0, 3.0, 1.0, 2.0], vec![2.0, 4.0, 1.0, 3.0, 2.5, 2.0]).unwrap();
    let obs = reveal(&po, "101010".parse().unwrap());
    let a = v_imputation_mc(&d, &obs, &GammaSpec::TauHat, 2000, 5).unwrap();
    let b = v_imputation_mc(&d, &obs, &GammaSpec::TauHat, 2000, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.value, v_imputation_mc(&d, &obs, &GammaSpec::TauHat, 2000, 6).unwrap().value);
}
