//! Doubly weighted rank-based estimation for the semiparametric accelerated
//! failure time model with covariates missing by design.
//!
//! The crate covers the cohort data model and its validation, weighted risk
//! set statistics, logrank and Gehan-type estimating functions, case-cohort
//! and missing-at-random weight schemes, root finding for the nonsmooth
//! estimating equations, sandwich variance estimation with the correction for
//! estimated sampling fractions, and a Monte Carlo study engine.
//!
//! ```
//! use aft_core::{fit_plan, Cohort, FitConfig, RhoKind, Subject, WeightPlan};
//!
//! let subjects = vec![
//!     Subject::new(0.2, true, vec![1.0]),
//!     Subject::new(0.9, false, vec![0.0]),
//!     Subject::new(1.4, true, vec![0.0]),
//!     Subject::new(0.5, true, vec![1.0]),
//!     Subject::new(2.0, false, vec![1.0]),
//!     Subject::new(1.1, true, vec![0.0]),
//! ];
//! let cohort = Cohort::new(subjects).unwrap();
//! let summary = fit_plan(&cohort, &WeightPlan::full_data(), &FitConfig::new(RhoKind::Gehan), None).unwrap();
//! assert!(summary.fit.theta_hat[0].is_finite());
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod estimating;
pub mod fit;
pub mod risk_set;
pub mod sim;
pub mod solver;
pub mod variance;
pub mod weights;

pub use data::{
    validate_cohort, Cohort, StratumId, Subject, TransformSpec, ValidationPolicy, ValidationReport,
    Violation, DEFAULT_MIN_RISK_WEIGHT,
};
pub use error::{Error, Result};
pub use estimating::{gehan_loss, psi, psi_pairwise_oracle, psi_star, PsiValue, RhoKind, WeightedCohort};
pub use fit::{estimate_variance, fit_plan, FitConfig, FitSummary};
pub use risk_set::{brute_force_risk_stats, compute_residuals, risk_stats, RiskSetStats};
pub use sim::{ErrorDist, Method, MethodSpec, StudyConfig, StudyReport};
pub use solver::{solve_gehan, solve_logrank, FitResult, FlatRegion, SolveOptions, SolverFlag};
pub use variance::{
    confidence_interval, correction_matrix_b, corrected_variance, cum_hazard_hat, influence_contributions,
    sandwich_variance, slope_matrix, HazardEstimate, Influence, Slope, VarianceReport,
};
pub use weights::{
    assign_weights, estimate_alpha, pi_from_alpha, v0_hat, w_alpha_derivative, AlphaEstimate, AlphaSource,
    Scheme, WeightPlan, Weights,
};
