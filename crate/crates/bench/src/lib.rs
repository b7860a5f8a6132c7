//! Shared fixtures for the criterion benchmarks.

use aft_core::sim::{generate_cohort, Design};
use aft_core::{Cohort, StudyConfig};

/// Cohort of `n` subjects drawn under the default logistic study design.
pub fn study_cohort(n: usize, seed: u64) -> Cohort {
    let config = StudyConfig {
        master_seed: seed,
        ..StudyConfig::default()
    };
    let design = Design::new(&config).expect("default design is valid");
    generate_cohort(&config, &design, n, 0).expect("generated cohort is valid")
}
