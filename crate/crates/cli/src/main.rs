use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use designvar::io::{read_design, read_outcomes, read_q, read_substitutes, OutcomeTable};
use designvar::sim::{emit_outputs, jackknife_comparison, run_study, study_a, study_b, ScenarioSpec, SimResult};
use designvar::{
    check_assumptions, default_q_crd, estimate_decomposition, estimator_expectation, horvitz_thompson,
    mse_sub_epsem, neyman_variance, run_suite, true_mse_hajek, true_variance, v_am, v_imputation_mc_with,
    v_imputation_with, v_pair, v_sub, Design, DesignOptions, GammaSpec, LooPolicy, ObservedData,
    PotentialOutcomes, QMatrix, Structure, SubstituteChoice, Suite, Tolerances, VarianceEstimate,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_VERIFY: u8 = 4;

/// Design-based variance estimation for randomized experiments.
#[derive(Parser)]
#[command(name = "designvar", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every stochastic step (Monte Carlo, simulation).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,

    /// Tolerance for probability identities.
    #[arg(long, global = true, default_value_t = 1e-12)]
    tolerance_prob: f64,

    /// Tolerance for weight identities.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tolerance_weight: f64,

    /// Relative tolerance for estimator equalities.
    #[arg(long, global = true, default_value_t = 1e-10)]
    tolerance_estimator: f64,

    /// Largest support enumerated explicitly.
    #[arg(long, global = true)]
    enumeration_cap: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Design utilities.
    Design {
        #[command(subcommand)]
        command: DesignCommand,
    },
    /// Estimate the variance of the Horvitz-Thompson estimator from observed data.
    Analyze(AnalyzeArgs),
    /// Exact bias of an estimator for a known science table.
    Oracle(OracleArgs),
    /// Run identity checks on built-in designs.
    Verify {
        /// thm2, thm3, prop3, prop4, thm4, prop2, corA1 or all.
        suite: String,
    },
    /// Run a simulation study and write CSV, JSON and SVG outputs.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum DesignCommand {
    /// Print the assumption report for a design file.
    Inspect {
        file: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorName {
    Neyman,
    Decomposition,
    Contrast,
    Pair,
    HajekMse,
    Imputation,
    Am,
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, value_enum)]
    estimator: EstimatorName,

    /// Q matrix for the decomposition estimator: default-crd or file:<path>.
    #[arg(long)]
    q: Option<String>,

    /// Substitute sets for contrast estimators: full or file:<path>.
    #[arg(long, default_value = "full")]
    substitutes: String,

    /// γ for the imputation estimator: fixed:<v>, tau-hat, tau-loo or theta-loo.
    #[arg(long, default_value = "theta-loo")]
    gamma: String,

    /// Treatment of degenerate conditional propensities in leave-one-out γ.
    #[arg(long, value_enum, default_value = "error")]
    loo_policy: PolicyArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Error,
    ExcludeDegenerate,
}

impl From<PolicyArg> for LooPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Error => LooPolicy::Error,
            PolicyArg::ExcludeDegenerate => LooPolicy::ExcludeDegenerate,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    design: PathBuf,

    /// Observed table: unit_id,w,y_obs[,pair].
    #[arg(long, alias = "data")]
    observed: PathBuf,

    #[command(flatten)]
    est: EstimatorArgs,

    /// Monte Carlo draws for the imputation estimator instead of exact enumeration.
    #[arg(long)]
    mc: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    design: PathBuf,

    /// Science table: unit_id,y0,y1.
    #[arg(long)]
    outcomes: PathBuf,

    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyName {
    A,
    B,
    AppendixC,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, required_unless_present = "config")]
    study: Option<StudyName>,

    /// Scenario file: one scenario or an array of them. Seeds come from the file.
    #[arg(long, conflicts_with = "study")]
    config: Option<PathBuf>,

    #[arg(long, default_value_t = 100)]
    reps: usize,

    #[arg(long, default_value = "designvar-out")]
    out: PathBuf,

    /// Accepted draws representing the study B design.
    #[arg(long, default_value_t = 20_000)]
    pool: usize,

    /// Inner Monte Carlo draws per replication in study B.
    #[arg(long, default_value_t = 2_000)]
    inner: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let refused = e.chain().any(|c| c.downcast_ref::<designvar::Error>().is_some_and(|e| e.is_assumption_violation()));
            ExitCode::from(if refused { EXIT_ASSUMPTION } else { EXIT_VALIDATION })
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let tol = Tolerances { prob: cli.tolerance_prob, weight: cli.tolerance_weight, estimator: cli.tolerance_estimator };
    for (name, v) in [("prob", tol.prob), ("weight", tol.weight), ("estimator", tol.estimator)] {
        if !(v.is_finite() && v > 0.0) {
            bail!("--tolerance-{name} must be positive");
        }
    }
    let mut opts = DesignOptions { prob_tol: tol.prob, ..DesignOptions::default() };
    if let Some(cap) = cli.enumeration_cap {
        opts.enumeration_cap = cap;
    }
    if let Some(s) = cli.seed {
        opts.mc_seed = s;
    }

    match &cli.command {
        Command::Design { command: DesignCommand::Inspect { file } } => inspect(cli, file, &opts),
        Command::Analyze(a) => analyze(cli, a, &opts),
        Command::Oracle(a) => oracle(a, &opts),
        Command::Verify { suite } => verify(cli, suite, &tol),
        Command::Simulate(a) => simulate(cli, a),
    }
}

fn load_design(path: &Path, opts: &DesignOptions) -> Result<Design> {
    read_design(path, opts).with_context(|| format!("loading design {}", path.display()))
}

fn print_json<T: Serialize>(x: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(x)?);
    Ok(())
}

#[derive(Serialize)]
struct Inspection {
    n: usize,
    support_size: Option<usize>,
    propensities: Vec<f64>,
    assumptions: designvar::AssumptionReport,
}

fn inspect(cli: &Cli, file: &Path, opts: &DesignOptions) -> Result<u8> {
    let d = load_design(file, opts)?;
    let report = check_assumptions(&d);
    let out = Inspection { n: d.n(), support_size: d.support_len(), propensities: d.propensities()?, assumptions: report };
    if cli.json {
        print_json(&out)?;
        return Ok(0);
    }
    println!("units         {}", out.n);
    match out.support_size {
        Some(s) => println!("support size  {s}"),
        None => println!("support size  (sampled)"),
    }
    let pi: Vec<String> = out.propensities.iter().map(|p| format!("{p:.6}")).collect();
    println!("propensities  {}", pi.join(" "));
    println!();
    println!("{:<32} holds", "assumption");
    for (name, v) in out.assumptions.rows() {
        println!("{name:<32} {v}");
    }
    for line in &out.assumptions.details {
        println!("  {line}");
    }
    Ok(0)
}

/// A ready-to-evaluate estimator. Heavy setup (plans, Q, γ parsing) happens once.
struct Estimator<'a> {
    d: &'a Design,
    name: EstimatorName,
    q: Option<QMatrix>,
    subs: SubstituteChoice,
    gamma: GammaSpec,
    policy: LooPolicy,
}

impl<'a> Estimator<'a> {
    fn new(d: &'a Design, a: &EstimatorArgs) -> Result<Self> {
        let q = match (a.estimator, a.q.as_deref()) {
            (EstimatorName::Decomposition, None) => match d.structure() {
                Structure::Crd { .. } => Some(default_q_crd(d.n())?),
                _ => bail!("--q is required for the decomposition estimator on non-CRD designs"),
            },
            (EstimatorName::Decomposition, Some("default-crd")) => Some(default_q_crd(d.n())?),
            (EstimatorName::Decomposition, Some(s)) => {
                let path = s.strip_prefix("file:").unwrap_or(s);
                Some(read_q(Path::new(path)).with_context(|| format!("reading Q from {path}"))?)
            }
            _ => None,
        };
        let subs = match a.substitutes.as_str() {
            "full" => SubstituteChoice::Full,
            s => {
                let path = s.strip_prefix("file:").unwrap_or(s);
                SubstituteChoice::Given(
                    read_substitutes(Path::new(path)).with_context(|| format!("reading substitutes from {path}"))?,
                )
            }
        };
        let gamma: GammaSpec = a.gamma.parse()?;
        Ok(Self { d, name: a.estimator, q, subs, gamma, policy: a.loo_policy.into() })
    }

    fn eval(&self, obs: &ObservedData) -> designvar::Result<VarianceEstimate> {
        let d = self.d;
        match self.name {
            EstimatorName::Neyman => neyman_variance(obs),
            EstimatorName::Decomposition => estimate_decomposition(d, obs, self.q.as_ref().expect("Q is set")),
            EstimatorName::Contrast => v_sub(d, obs, &self.subs),
            EstimatorName::HajekMse => mse_sub_epsem(d, obs, &self.subs),
            EstimatorName::Pair => match (&obs.pairs, d.structure()) {
                (None, Structure::MatchedPair { pairs }) => v_pair(&obs.clone().with_pairs(pairs.clone())),
                _ => v_pair(obs),
            },
            EstimatorName::Imputation => v_imputation_with(d, obs, &self.gamma, self.policy),
            EstimatorName::Am => v_am(d, obs),
        }
    }
}

#[derive(Serialize)]
struct Analysis {
    #[serde(flatten)]
    estimate: VarianceEstimate,
    tau_hat: f64,
}

fn analyze(cli: &Cli, a: &AnalyzeArgs, opts: &DesignOptions) -> Result<u8> {
    let d = load_design(&a.design, opts)?;
    let obs = match read_outcomes(&a.observed).with_context(|| format!("reading {}", a.observed.display()))? {
        OutcomeTable::Observed(o) => o,
        OutcomeTable::Science(_) => bail!("analyze needs an observed table (unit_id,w,y_obs)"),
    };
    if obs.n() != d.n() {
        bail!("design has {} units but the data has {}", d.n(), obs.n());
    }
    let est = Estimator::new(&d, &a.est)?;
    let estimate = match a.mc {
        Some(m) => {
            if a.est.estimator != EstimatorName::Imputation {
                bail!("--mc applies only to the imputation estimator");
            }
            let seed = cli.seed.ok_or_else(|| anyhow!("--mc needs --seed"))?;
            v_imputation_mc_with(&d, &obs, &est.gamma, est.policy, m, seed)?
        }
        None => est.eval(&obs)?,
    };
    let tau_hat = horvitz_thompson(&obs, &d.propensities()?)?;
    print_json(&Analysis { estimate, tau_hat })?;
    Ok(0)
}

#[derive(Serialize)]
struct OracleReport {
    estimator: String,
    /// Quantity the estimator targets: the variance of the Horvitz-Thompson estimator, or the
    /// MSE of the Hájek estimator.
    target: &'static str,
    true_variance: f64,
    expectation: f64,
    bias: f64,
    relative_bias: Option<f64>,
}

fn oracle(a: &OracleArgs, opts: &DesignOptions) -> Result<u8> {
    let d = load_design(&a.design, opts)?;
    if !d.is_enumerable() {
        bail!("the oracle needs an enumerable design");
    }
    let po: PotentialOutcomes = match read_outcomes(&a.outcomes).with_context(|| format!("reading {}", a.outcomes.display()))? {
        OutcomeTable::Science(p) => p,
        OutcomeTable::Observed(_) => bail!("the oracle needs a science table (unit_id,y0,y1), not observed data"),
    };
    if po.n() != d.n() {
        bail!("design has {} units but the table has {}", d.n(), po.n());
    }
    let est = Estimator::new(&d, &a.est)?;
    let (target, truth) = match a.est.estimator {
        EstimatorName::HajekMse => ("hajek_mse", true_mse_hajek(&d, &po)?),
        _ => ("variance", true_variance(&d, &po)?),
    };
    let expectation = estimator_expectation(&d, &po, |obs| est.eval(obs).map(|v| v.value))?;
    let bias = expectation - truth;
    let name = a.est.estimator.to_possible_value().expect("named").get_name().to_string();
    print_json(&OracleReport {
        estimator: name,
        target,
        true_variance: truth,
        expectation,
        bias,
        relative_bias: (truth != 0.0).then(|| bias / truth),
    })?;
    Ok(0)
}

fn verify(cli: &Cli, suite: &str, tol: &Tolerances) -> Result<u8> {
    let suite: Suite = suite.parse()?;
    let report = run_suite(suite, cli.seed.unwrap_or(0), tol)?;
    if cli.json {
        print_json(&report)?;
    } else {
        for c in &report.checks {
            println!(
                "{} {:<6} {:<48} cases {:>6}  max residual {:.3e} (tol {:.0e})",
                if c.passed { "ok  " } else { "FAIL" },
                c.suite,
                c.name,
                c.cases,
                c.max_residual,
                c.tolerance
            );
        }
        println!("{}: {} in {:.1}s", report.suite, if report.passed { "passed" } else { "FAILED" }, report.seconds);
    }
    for c in report.failures() {
        eprintln!("check failed: {} / {} (residual {:.3e})", c.suite, c.name, c.max_residual);
    }
    Ok(if report.passed { 0 } else { EXIT_VERIFY })
}

#[derive(Serialize)]
struct ScenarioSummary {
    scenario: String,
    dir: PathBuf,
    undefined: usize,
    estimators: Vec<EstimatorSummary>,
}

#[derive(Serialize)]
struct EstimatorSummary {
    estimator: String,
    replications: usize,
    min_relative_bias: Option<f64>,
    median_relative_bias: Option<f64>,
    max_relative_bias: Option<f64>,
}

fn summarize(res: &SimResult, dir: PathBuf) -> ScenarioSummary {
    let estimators = res
        .estimators()
        .into_iter()
        .map(|e| {
            let mut rb = res.relative_biases(&e);
            rb.sort_by(f64::total_cmp);
            let median = (!rb.is_empty()).then(|| {
                let k = rb.len() / 2;
                if rb.len() % 2 == 1 { rb[k] } else { 0.5 * (rb[k - 1] + rb[k]) }
            });
            EstimatorSummary {
                estimator: e,
                replications: rb.len(),
                min_relative_bias: rb.first().copied(),
                median_relative_bias: median,
                max_relative_bias: rb.last().copied(),
            }
        })
        .collect();
    ScenarioSummary { scenario: res.scenario.clone(), dir, undefined: res.undefined, estimators }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<u8> {
    let specs: Vec<ScenarioSpec> = match (&a.config, a.study) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if v.is_array() { serde_json::from_value(v)? } else { vec![serde_json::from_value(v)?] }
        }
        (None, Some(study)) => {
            let seed = cli.seed.ok_or_else(|| anyhow!("simulate needs --seed"))?;
            if a.reps == 0 {
                bail!("--reps must be positive");
            }
            match study {
                StudyName::A => study_a(a.reps, seed),
                StudyName::B => study_b(a.reps, seed, a.pool, a.inner),
                StudyName::AppendixC => jackknife_comparison(a.reps, seed),
            }
        }
        (None, None) => bail!("give --study or --config"),
    };
    let mut summaries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let res = run_study(spec).with_context(|| format!("scenario {}", spec.name))?;
        let dir = a.out.join(&spec.name);
        emit_outputs(&res, &dir).with_context(|| format!("writing {}", dir.display()))?;
        for n in &res.notes {
            eprintln!("{}: {n}", spec.name);
        }
        summaries.push(summarize(&res, dir));
    }
    if cli.json {
        print_json(&summaries)?;
        return Ok(0);
    }
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!("{:<28} {:<20} {:>5} {:>10} {:>10} {:>10}", "scenario", "estimator", "reps", "min", "median", "max");
    for s in &summaries {
        for e in &s.estimators {
            println!(
                "{:<28} {:<20} {:>5} {:>10} {:>10} {:>10}",
                s.scenario,
                e.estimator,
                e.replications,
                fmt(e.min_relative_bias),
                fmt(e.median_relative_bias),
                fmt(e.max_relative_bias)
            );
        }
        if s.undefined > 0 {
            println!("{:<28} ({} replications with zero true variance)", s.scenario, s.undefined);
        }
    }
    println!("outputs in {}", a.out.display());
    Ok(0)
}
