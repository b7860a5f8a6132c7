//! Approximate roots of the rank estimating function.
//!
//! The Gehan-weighted Ψ is the gradient of a convex piecewise-linear loss, so
//! in one dimension it is a nondecreasing step function and bisection on its
//! sign finds the leftmost point of the root set. In higher dimensions the
//! loss is minimized by exact line searches along coordinates and a fixed set
//! of mixed directions. The logrank Ψ is not monotone; its squared norm is
//! minimized by Nelder–Mead started from the Gehan solution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimating::{norm, RhoKind, WeightedCohort};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_theta: f64,
    /// Acceptance threshold on √n‖Ψ(θ̂)‖.
    pub tol_psi_scaled: f64,
    pub max_iter: usize,
    pub search_radius: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_theta: 1e-6,
            tol_psi_scaled: 0.5,
            max_iter: 200,
            search_radius: 1.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_theta > 0.0 && self.tol_psi_scaled > 0.0 && self.search_radius > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverFlag {
    /// √n‖Ψ(θ̂)‖ exceeds `tol_psi_scaled`.
    ScaledNormExceeded,
    /// The root set is an interval wider than `tol_theta`.
    FlatRegion,
    /// Ψ vanishes identically around the solution.
    Degenerate,
    /// Different starts reached different roots.
    NonUnique,
}

/// Interval of parameter values on which Ψ vanishes; `upper = None` means
/// the interval is unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatRegion {
    pub lower: f64,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub rho: RhoKind,
    pub theta_hat: Vec<f64>,
    pub psi_at_solution: Vec<f64>,
    pub scaled_norm: f64,
    /// One entry per coordinate.
    pub flat_region: Vec<Option<FlatRegion>>,
    pub trace: Vec<TraceEntry>,
    pub dropped_terms: usize,
    pub flags: Vec<SolverFlag>,
}

impl FitResult {
    pub fn has_flag(&self, flag: SolverFlag) -> bool {
        self.flags.contains(&flag)
    }

    fn flag(&mut self, flag: SolverFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }
}

const MAX_EXPANSIONS: usize = 48;

/// Outcome of a monotone one-dimensional search.
#[derive(Debug, Clone, Copy)]
struct Leftmost {
    x: f64,
    /// The predicate's function was identically zero on the explored range.
    degenerate: bool,
    evals: usize,
}

/// Finds inf{x : f(x) ≥ 0} for nondecreasing `f`, starting at `x0`.
fn leftmost_nonnegative<F>(mut f: F, x0: f64, radius: f64, tol: f64, max_iter: usize) -> Result<Leftmost>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut evals = 1;
    let f0 = f(x0)?;
    let (mut lo, mut hi);
    if f0 >= 0.0 {
        hi = x0;
        let mut step = radius;
        let mut found = None;
        let mut all_zero = f0 == 0.0;
        for _ in 0..MAX_EXPANSIONS {
            let x = x0 - step;
            let v = f(x)?;
            evals += 1;
            if v < 0.0 {
                found = Some(x);
                break;
            }
            all_zero &= v == 0.0;
            hi = x;
            step *= 2.0;
        }
        match found {
            Some(x) => lo = x,
            None if all_zero => {
                return Ok(Leftmost {
                    x: x0,
                    degenerate: true,
                    evals,
                })
            }
            None => return Err(Error::NoSignChange { lo: x0 - step, hi: x0 }),
        }
    } else {
        lo = x0;
        let mut step = radius;
        let mut found = None;
        for _ in 0..MAX_EXPANSIONS {
            let x = x0 + step;
            let v = f(x)?;
            evals += 1;
            if v >= 0.0 {
                found = Some(x);
                break;
            }
            lo = x;
            step *= 2.0;
        }
        hi = found.ok_or(Error::NoSignChange { lo: x0, hi: x0 + step })?;
    }
    let mut iter = 0;
    while hi - lo > tol {
        if iter >= max_iter {
            return Err(Error::IterationCap(max_iter));
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        evals += 1;
        iter += 1;
    }
    Ok(Leftmost {
        x: hi,
        degenerate: false,
        evals,
    })
}

/// sup{x ≥ x0 : f(x) ≤ 0} for nondecreasing `f` with f(x0) = 0; `None`
/// when f stays at zero over the whole explored range.
fn plateau_end<F>(mut f: F, x0: f64, radius: f64, tol: f64, max_iter: usize) -> Result<Option<f64>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut lo = x0;
    let mut step = radius;
    let mut hi = None;
    for _ in 0..MAX_EXPANSIONS {
        let x = x0 + step;
        if f(x)? > 0.0 {
            hi = Some(x);
            break;
        }
        lo = x;
        step *= 2.0;
    }
    let Some(mut hi) = hi else { return Ok(None) };
    let mut iter = 0;
    while hi - lo > tol && iter < max_iter {
        let mid = lo + 0.5 * (hi - lo);
        if f(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iter += 1;
    }
    Ok(Some(lo))
}

fn finish(
    wc: &WeightedCohort<'_>,
    rho: RhoKind,
    theta: Vec<f64>,
    options: &SolveOptions,
    flat_region: Vec<Option<FlatRegion>>,
    trace: Vec<TraceEntry>,
    mut flags: Vec<SolverFlag>,
) -> Result<FitResult> {
    let value = wc.psi(&theta, rho)?;
    let scaled_norm = (wc.n() as f64).sqrt() * norm(&value.psi);
    if scaled_norm > options.tol_psi_scaled && !flags.contains(&SolverFlag::ScaledNormExceeded) {
        flags.push(SolverFlag::ScaledNormExceeded);
    }
    if flat_region.iter().any(Option::is_some) && !flags.contains(&SolverFlag::FlatRegion) {
        flags.push(SolverFlag::FlatRegion);
    }
    Ok(FitResult {
        rho,
        theta_hat: theta,
        psi_at_solution: value.psi,
        scaled_norm,
        flat_region,
        trace,
        dropped_terms: value.n_dropped,
        flags,
    })
}

fn check_solvable(wc: &WeightedCohort<'_>, options: &SolveOptions) -> Result<()> {
    options.validate()?;
    if !(0..wc.n()).any(|i| wc.is_event_term(i)) {
        return Err(Error::NoEvents);
    }
    Ok(())
}

/// Root of the Gehan-weighted Ψ.
/// Magnitude below which a scalar Gehan Ψ value is indistinguishable from
/// floating-point cancellation of its terms.
fn rounding_noise(wc: &WeightedCohort<'_>) -> f64 {
    let subjects = wc.cohort().subjects();
    let (lo, hi) = subjects
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.z[0]), hi.max(s.z[0])));
    let mass: f64 = subjects
        .iter()
        .zip(wc.omega())
        .filter(|(s, _)| s.delta)
        .map(|(_, o)| o.abs())
        .sum::<f64>()
        / wc.n() as f64;
    let spread = if hi > lo { hi - lo } else { 0.0 };
    64.0 * f64::EPSILON * wc.n() as f64 * mass * spread
}

pub fn solve_gehan(wc: &WeightedCohort<'_>, options: &SolveOptions) -> Result<FitResult> {
    check_solvable(wc, options)?;
    if wc.dim() == 1 {
        solve_gehan_scalar(wc, options)
    } else {
        solve_gehan_descent(wc, options)
    }
}

fn solve_gehan_scalar(wc: &WeightedCohort<'_>, options: &SolveOptions) -> Result<FitResult> {
    let noise = rounding_noise(wc);
    let psi1 = |x: f64| -> Result<f64> {
        let v = wc.psi(&[x], RhoKind::Gehan)?.psi[0];
        Ok(if v.abs() <= noise { 0.0 } else { v })
    };
    let found = leftmost_nonnegative(psi1, 0.0, options.search_radius, options.tol_theta, options.max_iter)?;
    let mut trace = vec![TraceEntry {
        iter: found.evals,
        theta: vec![found.x],
        objective: psi1(found.x)?,
    }];
    if found.degenerate {
        return finish(wc, RhoKind::Gehan, vec![found.x], options, vec![None], trace, vec![SolverFlag::Degenerate]);
    }
    let mut flat = None;
    if trace[0].objective == 0.0 {
        let end = plateau_end(psi1, found.x, options.search_radius, options.tol_theta, options.max_iter)?;
        match end {
            Some(upper) if upper - found.x > options.tol_theta => {
                flat = Some(FlatRegion {
                    lower: found.x,
                    upper: Some(upper),
                })
            }
            Some(_) => {}
            None => {
                flat = Some(FlatRegion {
                    lower: found.x,
                    upper: None,
                })
            }
        }
        if let Some(region) = flat {
            trace.push(TraceEntry {
                iter: trace[0].iter,
                theta: vec![region.upper.unwrap_or(f64::INFINITY)],
                objective: 0.0,
            });
        }
    }
    finish(wc, RhoKind::Gehan, vec![found.x], options, vec![flat], trace, Vec::new())
}

/// Exact line search of the Gehan loss along `dir` from `theta`.
fn gehan_line_search(
    wc: &WeightedCohort<'_>,
    theta: &[f64],
    dir: &[f64],
    options: &SolveOptions,
) -> Result<f64> {
    let mut point = theta.to_vec();
    let slope = |s: f64, point: &mut Vec<f64>| -> Result<f64> {
        for (p, (t, u)) in point.iter_mut().zip(theta.iter().zip(dir)) {
            *p = t + s * u;
        }
        let psi = wc.psi(point, RhoKind::Gehan)?.psi;
        Ok(psi.iter().zip(dir).map(|(a, b)| a * b).sum())
    };
    let found = leftmost_nonnegative(
        |s| slope(s, &mut point),
        0.0,
        options.search_radius,
        options.tol_theta,
        options.max_iter,
    )?;
    Ok(if found.degenerate { 0.0 } else { found.x })
}

fn solve_gehan_descent(wc: &WeightedCohort<'_>, options: &SolveOptions) -> Result<FitResult> {
    let d = wc.dim();
    let mut theta = vec![0.0; d];
    let mut loss = wc.gehan_loss(&theta)?;
    let mut trace = vec![TraceEntry {
        iter: 0,
        theta: theta.clone(),
        objective: loss,
    }];
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_9e4a);
    let mut mixed: Vec<Vec<f64>> = Vec::new();
    for a in 0..d {
        for b in (a + 1)..d {
            for sign in [1.0, -1.0] {
                let mut u = vec![0.0; d];
                u[a] = 1.0;
                u[b] = sign;
                mixed.push(u);
            }
        }
    }
    for _ in 0..2 * d {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        mixed.push(u);
    }

    let coords: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            e
        })
        .collect();
    let improves = |new: f64, old: f64| new < old - 1e-13 * old.abs().max(1.0);
    let mut converged = false;
    for sweep in 1..=options.max_iter {
        let sweep_start = loss;
        let start_theta = theta.clone();
        let pattern = |theta: &[f64]| -> Vec<Vec<f64>> {
            let p: Vec<f64> = theta.iter().zip(&start_theta).map(|(a, b)| a - b).collect();
            if p.iter().any(|x| *x != 0.0) {
                vec![p]
            } else {
                Vec::new()
            }
        };
        for stage in 0..3 {
            let dirs = match stage {
                0 => coords.clone(),
                1 => pattern(&theta),
                _ => mixed.clone(),
            };
            for u in &dirs {
                let s = gehan_line_search(wc, &theta, u, options)?;
                if s == 0.0 {
                    continue;
                }
                let cand: Vec<f64> = theta.iter().zip(u).map(|(t, ui)| t + s * ui).collect();
                let cand_loss = wc.gehan_loss(&cand)?;
                if improves(cand_loss, loss) {
                    theta = cand;
                    loss = cand_loss;
                }
            }
            if stage == 1 && improves(loss, sweep_start) {
                break;
            }
        }
        trace.push(TraceEntry {
            iter: sweep,
            theta: theta.clone(),
            objective: loss,
        });
        if !improves(loss, sweep_start) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IterationCap(options.max_iter));
    }
    finish(wc, RhoKind::Gehan, theta, options, vec![None; d], trace, Vec::new())
}

fn squared_norm(wc: &WeightedCohort<'_>, theta: &[f64]) -> Result<f64> {
    let v = wc.psi(theta, RhoKind::Logrank)?.psi;
    Ok(v.iter().map(|x| x * x).sum())
}

/// Nelder–Mead minimization of `f` from `start` with initial edge `step`.
fn nelder_mead<F>(mut f: F, start: &[f64], step: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let d = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((start.to_vec(), f(start)?));
    for j in 0..d {
        let mut p = start.to_vec();
        p[j] += step;
        let v = f(&p)?;
        simplex.push((p, v));
    }
    let point = |centroid: &[f64], worst: &[f64], coef: f64| -> Vec<f64> {
        centroid
            .iter()
            .zip(worst)
            .map(|(c, w)| c + coef * (c - w))
            .collect()
    };
    let mut iters = 0;
    while iters < max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let diameter = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter <= tol {
            break;
        }
        iters += 1;
        let mut centroid = vec![0.0; d];
        for (p, _) in &simplex[..d] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / d as f64;
            }
        }
        let worst = simplex[d].clone();
        let reflected = point(&centroid, &worst.0, 1.0);
        let fr = f(&reflected)?;
        if fr < simplex[0].1 {
            let expanded = point(&centroid, &worst.0, 2.0);
            let fe = f(&expanded)?;
            simplex[d] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = point(&centroid, &worst.0, 0.5);
            let v = f(&c)?;
            (c, v)
        } else {
            let c = point(&centroid, &worst.0, -0.5);
            let v = f(&c)?;
            (c, v)
        };
        if fc < worst.1.min(fr) {
            simplex[d] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (p, v) in simplex.iter_mut().skip(1) {
            for (x, b) in p.iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            *v = f(p)?;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (p, v) = simplex.swap_remove(0);
    Ok((p, v, iters))
}

/// Minimizer of ‖Ψ_logrank‖², seeded at `seed_theta` or at the Gehan root.
pub fn solve_logrank(
    wc: &WeightedCohort<'_>,
    options: &SolveOptions,
    seed_theta: Option<&[f64]>,
) -> Result<FitResult> {
    check_solvable(wc, options)?;
    let d = wc.dim();
    let seed = match seed_theta {
        Some(s) if s.len() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.len(),
            })
        }
        Some(s) => s.to_vec(),
        None => solve_gehan(wc, options)?.theta_hat,
    };
    let objective = |t: &[f64]| squared_norm(wc, t);

    let f_seed = objective(&seed)?;
    if f_seed == 0.0 {
        let mut all_zero = true;
        for j in 0..d {
            for sign in [1.0, -1.0] {
                let mut p = seed.clone();
                p[j] += sign * options.search_radius;
                all_zero &= objective(&p)? == 0.0;
            }
        }
        if all_zero {
            let trace = vec![TraceEntry {
                iter: 0,
                theta: seed.clone(),
                objective: 0.0,
            }];
            return finish(wc, RhoKind::Logrank, seed, options, vec![None; d], trace, vec![SolverFlag::Degenerate]);
        }
    }

    let step = 0.1 * options.search_radius;
    let offsets = [0.0, 2.0 * step, -2.0 * step];
    let mut trace = Vec::new();
    let mut ends: Vec<(Vec<f64>, f64)> = Vec::new();
    for (k, &off) in offsets.iter().enumerate() {
        let start: Vec<f64> = seed.iter().map(|s| s + off).collect();
        let (p, v, iters) = nelder_mead(objective, &start, step, options.tol_theta, options.max_iter)?;
        trace.push(TraceEntry {
            iter: k * options.max_iter + iters,
            theta: p.clone(),
            objective: v,
        });
        ends.push((p, v));
    }
    let best = ends
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("at least one start");
    let mut theta = best.0;
    let mut best_value = best.1;

    // Local grid polish, one coordinate at a time.
    const POLISH_STEPS: i32 = 100;
    for j in 0..d {
        let centre = theta[j];
        let mut p = theta.clone();
        for k in -POLISH_STEPS..=POLISH_STEPS {
            if k == 0 {
                continue;
            }
            p[j] = centre + k as f64 * options.tol_theta;
            let v = objective(&p)?;
            if v < best_value {
                best_value = v;
                theta[j] = p[j];
            }
        }
    }
    trace.push(TraceEntry {
        iter: trace.len(),
        theta: theta.clone(),
        objective: best_value,
    });

    let mut result = finish(wc, RhoKind::Logrank, theta, options, vec![None; d], trace, Vec::new())?;
    let accept = options.tol_psi_scaled * options.tol_psi_scaled / wc.n() as f64;
    let roots: Vec<&Vec<f64>> = ends.iter().filter(|(_, v)| *v <= accept).map(|(p, _)| p).collect();
    let disagree = roots.iter().any(|a| {
        roots.iter().any(|b| {
            a.iter()
                .zip(b.iter())
                .any(|(x, y)| (x - y).abs() > NONUNIQUE_SCALE * options.tol_theta)
        })
    });
    if disagree {
        result.flag(SolverFlag::NonUnique);
    }
    Ok(result)
}

/// Separation, in units of `tol_theta`, beyond which two accepted roots from
/// different starts count as distinct.
pub const NONUNIQUE_SCALE: f64 = 1e4;
