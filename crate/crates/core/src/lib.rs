//! Design-based variance estimation for the Horvitz-Thompson estimator of the average
//! treatment effect.
//!
//! Designs are explicit distributions over assignment vectors, or samplers when the support
//! is too large to list. Every estimator has an enumeration oracle ([`estimator_expectation`],
//! [`true_variance`]) so bias can be computed exactly on small designs.
//!
//! ```
//! use designvar::{Design, ObservedData, neyman_variance, v_sub, SubstituteChoice};
//!
//! let d = Design::crd(4, 2).unwrap();
//! let obs = ObservedData::new("1100".parse().unwrap(), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
//! let a = v_sub(&d, &obs, &SubstituteChoice::Full).unwrap().value;
//! let b = neyman_variance(&obs).unwrap().value;
//! assert!((a - b).abs() < 1e-12);
//! ```

pub mod assignment;
pub mod assumptions;
pub mod balance;
pub mod contrast;
pub mod decomposition;
pub mod design;
pub mod error;
pub mod estimators;
pub mod imputation;
pub mod io;
pub mod outcomes;
pub mod rng;
pub mod sim;
pub mod sum;
pub mod verify;

pub use assignment::{binomial, Assignment, MAX_UNITS};
pub use assumptions::{check_assumptions, AssumptionReport, Verdict};
pub use balance::{asmd, BalanceCriterion, MaxAsmd};
pub use contrast::{
    full_substitute_set, is_substitute, mse_sub_epsem, v_pair, v_sub, ContrastPlan, SubstituteChoice,
    SubstituteMode, SubstituteSet,
};
pub use decomposition::{
    default_q_crd, estimate_decomposition, expansion_v_tilde, q_feasible_for_design, v_tilde, validate_q, Feasibility,
    QMatrix, QValidation,
};
pub use design::{Design, DesignOptions, PairTable, ProbQuery, Structure};
pub use error::{Error, Result};
pub use estimators::{
    c_vector, contrast_weights, difference_in_means, estimator_expectation, estimator_moments, expected_psi_of_w,
    hajek, horvitz_thompson, neyman_variance, psi, support_expectation, true_mse_hajek, true_variance,
    EstimatorKind, Exactness, VarianceEstimate,
};
pub use imputation::{
    gamma_vector, gamma_vector_with, impute_c, impute_potential_outcomes, implicit_beta, theta_ht, remainder_terms,
    v_imputation, v_imputation_beta, v_imputation_mc, v_imputation_mc_with, v_imputation_with, GammaSpec, LooPolicy,
};
pub use outcomes::{reveal, Covariates, ObservedData, PotentialOutcomes};
pub use rng::stream_rng;
pub use sim::v_am;
pub use sum::rel_diff;
pub use verify::{run_suite, Suite, Tolerances, VerifyReport};
