#![allow(dead_code)]

use aft_core::{Cohort, Subject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random cohort with arbitrary nonnegative weight pairs.
pub struct Instance {
    pub cohort: Cohort,
    pub omega: Vec<f64>,
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Draws an instance with up to `max_n` subjects and `max_d` covariates.
/// Half of the instances put responses and covariates on a coarse grid so
/// that residual ties occur; about a quarter of the weights are zero.
pub fn instance(seed: u64, max_n: usize, max_d: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=max_n);
    let d = rng.random_range(1..=max_d);
    let gridded = rng.random_bool(0.5);
    let draw = |rng: &mut ChaCha8Rng, scale: f64| {
        let v: f64 = rng.random_range(-scale..scale);
        if gridded {
            (v * 2.0).round() / 2.0
        } else {
            v
        }
    };
    let mut subjects = Vec::with_capacity(n);
    for _ in 0..n {
        let y = draw(&mut rng, 3.0);
        let z: Vec<f64> = (0..d).map(|_| draw(&mut rng, 2.0)).collect();
        subjects.push(Subject::new(y, rng.random_bool(0.6), z));
    }
    if !subjects.iter().any(|s| s.delta) {
        subjects[0].delta = true;
    }
    let weight = |rng: &mut ChaCha8Rng| -> f64 {
        match rng.random_range(0..4) {
            0 => 0.0,
            1 => [0.5, 1.0, 2.0, 4.0][rng.random_range(0..4)],
            _ => rng.random_range(0.1..5.0),
        }
    };
    let mut w: Vec<f64> = (0..n).map(|_| weight(&mut rng)).collect();
    if w.iter().all(|&v| v == 0.0) {
        w[0] = 1.0;
    }
    let omega: Vec<f64> = (0..n).map(|_| weight(&mut rng)).collect();
    let theta: Vec<f64> = (0..d).map(|_| if gridded { draw(&mut rng, 1.0) } else { rng.random_range(-1.0..1.0) }).collect();
    Instance {
        cohort: Cohort::new(subjects).expect("valid random cohort"),
        omega,
        w,
        theta,
    }
}

/// Unit-weight instance with a scalar covariate.
pub fn scalar_instance(seed: u64, max_n: usize) -> Instance {
    let mut inst = instance(seed, max_n, 1);
    inst.omega = vec![1.0; inst.cohort.len()];
    inst.w = vec![1.0; inst.cohort.len()];
    inst
}
