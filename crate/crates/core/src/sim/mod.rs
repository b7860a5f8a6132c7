//! Case-cohort Monte Carlo studies: cohort generation, replicated fits and
//! asymptotic relative-efficiency curves.

mod config;
mod design;
mod efficiency;
mod study;

pub use config::{ErrorDist, Method, MethodSpec, StudyConfig};
pub use design::{allocation_probs, calibrate_censoring, generate_cohort, CensoringWindow, Design};
pub use efficiency::{asymptotic_variance, efficiency_curve, efficiency_curve_with_threads, EfficiencyRow};
pub use study::{run_replicate, run_study, run_study_with_threads, ReplicateOutcome, ReportRow, StudyReport};
