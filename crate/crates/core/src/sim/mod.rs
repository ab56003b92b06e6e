//! Seeded simulation studies: data-generating processes, the Young-bound baseline estimator,
//! study runners and file outputs.

pub mod am;
pub mod dgp;
pub mod output;
pub mod study;

pub use am::v_am;
pub use dgp::{gen_covariate_study_a, gen_covariates_hainmueller, gen_outcomes, OutcomeModel};
pub use output::emit_outputs;
pub use study::{
    jackknife_comparison, run_study, study_a, study_a_design, study_b, DesignSpec, EstimatorSpec, Record, ScenarioSpec,
    SimResult,
};
