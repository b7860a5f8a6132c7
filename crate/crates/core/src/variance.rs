//! Plug-in sandwich variance built from the influence representation of θ̂,
//! plus the reduction obtained when sampling fractions are estimated.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimating::{RhoKind, WeightedCohort};
use crate::weights::{omega_alpha_derivative, w_alpha_derivative, AlphaEstimate, Scheme};

/// Nelson–Aalen type estimate of the residual cumulative hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardEstimate {
    pub theta: Vec<f64>,
    /// Ascending event residuals, one entry per event term (ties repeated).
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub n_dropped: usize,
}

pub fn cum_hazard_hat(wc: &WeightedCohort<'_>, theta: &[f64]) -> Result<HazardEstimate> {
    let residuals = wc.residuals(theta)?;
    let stats = wc.risk_stats_at(&residuals);
    let nf = wc.n() as f64;
    let mut events: Vec<(f64, f64)> = Vec::new();
    let mut dropped = 0;
    let mut any_event = false;
    for i in 0..wc.n() {
        if !wc.is_event_term(i) {
            continue;
        }
        any_event = true;
        let k = stats.group_at(residuals[i]);
        if !stats.nonempty(k) {
            dropped += 1;
            continue;
        }
        events.push((residuals[i], wc.omega()[i] / (nf * stats.d0()[k])));
    }
    if !any_event {
        return Err(Error::NoEvents);
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut cumulative = Vec::with_capacity(events.len());
    for &(_, inc) in &events {
        acc += inc;
        cumulative.push(acc);
    }
    Ok(HazardEstimate {
        theta: theta.to_vec(),
        times: events.iter().map(|e| e.0).collect(),
        increments: events.iter().map(|e| e.1).collect(),
        cumulative,
        n_dropped: dropped,
    })
}

/// Per-subject influence terms: `contributions[i] = term1[i] − term2[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Influence {
    pub term1: Vec<Vec<f64>>,
    pub term2: Vec<Vec<f64>>,
    pub contributions: Vec<Vec<f64>>,
}

impl Influence {
    pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
        let d = rows.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; d];
        for r in rows {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let n = rows.len() as f64;
        acc.into_iter().map(|v| v / n).collect()
    }
}

pub fn influence_contributions(
    wc: &WeightedCohort<'_>,
    theta: &[f64],
    rho: RhoKind,
    hazard: &HazardEstimate,
) -> Result<Influence> {
    if hazard.theta != theta {
        return Err(Error::InvalidArgument(
            "hazard estimate was computed at a different theta".into(),
        ));
    }
    let residuals = wc.residuals(theta)?;
    let stats = wc.risk_stats_at(&residuals);
    let d = wc.dim();
    let n = wc.n();
    let subjects = wc.cohort().subjects();
    let rho_at = |k: usize| match rho {
        RhoKind::Logrank => 1.0,
        RhoKind::Gehan => (stats.d0()[k] / stats.sum_w()).min(1.0),
    };

    // Prefix sums over event times of ρ dΛ and ρ η dΛ.
    let m = hazard.times.len();
    let mut pre_a = vec![0.0; m + 1];
    let mut pre_b = vec![0.0; (m + 1) * d];
    for (k, (&t, &inc)) in hazard.times.iter().zip(&hazard.increments).enumerate() {
        let g = stats.group_at(t);
        let r = rho_at(g) * inc;
        let d0 = stats.d0()[g];
        let d1 = stats.d1_row(g);
        pre_a[k + 1] = pre_a[k] + r;
        for c in 0..d {
            pre_b[(k + 1) * d + c] = pre_b[k * d + c] + r * d1[c] / d0;
        }
    }

    let mut term1 = vec![vec![0.0; d]; n];
    let mut term2 = vec![vec![0.0; d]; n];
    for i in 0..n {
        let s = &subjects[i];
        if wc.is_event_term(i) {
            let g = stats.group_at(residuals[i]);
            if stats.nonempty(g) {
                let r = rho_at(g) * wc.omega()[i];
                let d0 = stats.d0()[g];
                let d1 = stats.d1_row(g);
                for c in 0..d {
                    term1[i][c] = r * (s.z[c] - d1[c] / d0);
                }
            }
        }
        let wi = wc.w()[i];
        if wi > 0.0 {
            let e = residuals[i];
            let k = hazard.times.partition_point(|&t| t <= e);
            for c in 0..d {
                term2[i][c] = wi * (s.z[c] * pre_a[k] - pre_b[k * d + c]);
            }
        }
    }
    let contributions = term1
        .iter()
        .zip(&term2)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    Ok(Influence {
        term1,
        term2,
        contributions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slope {
    pub matrix: DMatrix<f64>,
    pub steps: Vec<f64>,
    /// Some column came out exactly zero: the step sits inside a plateau.
    pub plateau_warning: bool,
}

/// Central finite-difference estimate of ∂Ψ/∂θ with step
/// `step_scale · sd(z_j) / √n` per coordinate.
pub fn slope_matrix(
    wc: &WeightedCohort<'_>,
    theta: &[f64],
    rho: RhoKind,
    step_scale: f64,
) -> Result<Slope> {
    if !(step_scale > 0.0) {
        return Err(Error::InvalidArgument("step_scale must be positive".into()));
    }
    let d = wc.dim();
    let subjects = wc.cohort().subjects();
    let used: Vec<usize> = (0..wc.n())
        .filter(|&i| wc.w()[i] > 0.0 || wc.is_event_term(i))
        .collect();
    let nf = wc.n() as f64;
    let mut matrix = DMatrix::zeros(d, d);
    let mut steps = Vec::with_capacity(d);
    let mut plateau = false;
    for j in 0..d {
        let m = used.len() as f64;
        let mean = used.iter().map(|&i| subjects[i].z[j]).sum::<f64>() / m;
        let var = used
            .iter()
            .map(|&i| (subjects[i].z[j] - mean).powi(2))
            .sum::<f64>()
            / (m - 1.0).max(1.0);
        let h = step_scale * var.sqrt() / nf.sqrt();
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "covariate {j} has zero spread; slope step is zero"
            )));
        }
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[j] += h;
        down[j] -= h;
        let pu = wc.psi(&up, rho)?.psi;
        let pd = wc.psi(&down, rho)?.psi;
        let mut zero = true;
        for r in 0..d {
            let v = (pu[r] - pd[r]) / (2.0 * h);
            zero &= v == 0.0;
            matrix[(r, j)] = v;
        }
        plateau |= zero;
        steps.push(h);
    }
    Ok(Slope {
        matrix,
        steps,
        plateau_warning: plateau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub slope: DMatrix<f64>,
    pub meat: DMatrix<f64>,
    /// Variance of θ̂ with known weights.
    pub sigma0: DMatrix<f64>,
    /// Variance of θ̂ with estimated sampling fractions.
    pub sigma_star: Option<DMatrix<f64>>,
    pub b_hat: Option<DMatrix<f64>>,
    pub v0: Option<DMatrix<f64>>,
    pub condition_number: f64,
    pub n: usize,
}

impl VarianceReport {
    /// The variance to report: corrected when available.
    pub fn variance(&self) -> &DMatrix<f64> {
        self.sigma_star.as_ref().unwrap_or(&self.sigma0)
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        let v = self.variance();
        (0..v.nrows()).map(|j| v[(j, j)].max(0.0).sqrt()).collect()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = symmetrize(m.clone());
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Whether `m` is symmetric and positive semidefinite within `tol`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let asym = (m - m.transpose()).abs().max();
    asym <= tol && min_eigenvalue(m) >= -tol
}

/// D̂⁻¹ Â D̂⁻ᵀ / n from influence contributions and slope D̂.
pub fn sandwich_variance(contributions: &[Vec<f64>], slope: &DMatrix<f64>) -> Result<VarianceReport> {
    let n = contributions.len();
    let d = slope.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no contributions".into()));
    }
    let mut meat = DMatrix::zeros(d, d);
    for c in contributions {
        if c.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        let v = DVector::from_column_slice(c);
        meat += &v * v.transpose();
    }
    meat /= n as f64;
    let cond = condition_number(slope);
    let inv = slope.clone().try_inverse().ok_or(Error::SingularSlope)?;
    if !cond.is_finite() {
        return Err(Error::SingularSlope);
    }
    let sigma0 = symmetrize(&inv * &meat * inv.transpose() / n as f64);
    Ok(VarianceReport {
        slope: slope.clone(),
        meat,
        sigma0,
        sigma_star: None,
        b_hat: None,
        v0: None,
        condition_number: cond,
        n,
    })
}

/// Plug-in estimate of the d×S matrix B that couples θ̂ to the estimated
/// sampling fractions.
pub fn correction_matrix_b(
    wc: &WeightedCohort<'_>,
    theta: &[f64],
    rho: RhoKind,
    scheme: Scheme,
    alpha: &AlphaEstimate,
) -> Result<DMatrix<f64>> {
    let residuals = wc.residuals(theta)?;
    let stats = wc.risk_stats_at(&residuals);
    let d = wc.dim();
    let s_count = alpha.n_strata();
    let n = wc.n();
    let nf = n as f64;
    let subjects = wc.cohort().subjects();

    let mut w_dot: Vec<Vec<f64>> = Vec::with_capacity(n);
    for s in subjects {
        w_dot.push(w_alpha_derivative(s, scheme, alpha)?);
    }

    // Suffix sums, in residual order, of Ẇ (1×S) and z Ẇᵀ (d×S).
    let mut order: Vec<usize> = (0..n).filter(|&j| w_dot[j].iter().any(|&v| v != 0.0)).collect();
    order.sort_unstable_by(|&a, &b| residuals[a].total_cmp(&residuals[b]));
    let keys: Vec<f64> = order.iter().map(|&j| residuals[j]).collect();
    let m = order.len();
    let mut e2 = vec![0.0; (m + 1) * s_count];
    let mut e1 = vec![0.0; (m + 1) * d * s_count];
    for pos in (0..m).rev() {
        let j = order[pos];
        for s in 0..s_count {
            e2[pos * s_count + s] = e2[(pos + 1) * s_count + s] + w_dot[j][s] / nf;
            for c in 0..d {
                let idx = (pos * d + c) * s_count + s;
                let next = ((pos + 1) * d + c) * s_count + s;
                e1[idx] = e1[next] + subjects[j].z[c] * w_dot[j][s] / nf;
            }
        }
    }

    let mut b = DMatrix::zeros(d, s_count);
    for i in 0..n {
        if !wc.is_event_term(i) {
            continue;
        }
        let e = residuals[i];
        let g = stats.group_at(e);
        if !stats.nonempty(g) {
            continue;
        }
        let d0 = stats.d0()[g];
        let d1 = stats.d1_row(g);
        // ρ̂(t)·Â₂(t): for Gehan the ρ̂ factors cancel, for logrank the
        // denominator is the weighted at-risk mass.
        let scale = match rho {
            RhoKind::Gehan => 1.0,
            RhoKind::Logrank => 1.0 / d0,
        };
        let pos = keys.partition_point(|&v| v < e);
        let o = wc.omega()[i];
        for c in 0..d {
            let eta = d1[c] / d0;
            for s in 0..s_count {
                let a2 = e1[(pos * d + c) * s_count + s] - eta * e2[pos * s_count + s];
                b[(c, s)] += o * scale * a2 / nf;
            }
        }
        let o_dot = omega_alpha_derivative(&subjects[i], scheme, alpha)?;
        if o_dot.iter().any(|&v| v != 0.0) {
            let r = match rho {
                RhoKind::Logrank => 1.0,
                RhoKind::Gehan => (d0 / stats.sum_w()).min(1.0),
            };
            for c in 0..d {
                let resid = subjects[i].z[c] - d1[c] / d0;
                for s in 0..s_count {
                    b[(c, s)] -= r * resid * o_dot[s] / nf;
                }
            }
        }
    }
    Ok(b)
}

/// Fills `sigma_star = sigma0 − D̂⁻¹ B̂ V̂₀ B̂ᵀ D̂⁻ᵀ / n`.
pub fn corrected_variance(
    mut report: VarianceReport,
    b_hat: DMatrix<f64>,
    v0: DMatrix<f64>,
) -> Result<VarianceReport> {
    let inv = report.slope.clone().try_inverse().ok_or(Error::SingularSlope)?;
    let correction = symmetrize(&inv * &b_hat * &v0 * b_hat.transpose() * inv.transpose() / report.n as f64);
    let sigma_star = &report.sigma0 - &correction;
    let tol = 1e-10 * report.sigma0.abs().max().max(1.0);
    if (0..sigma_star.nrows()).any(|j| sigma_star[(j, j)] < -tol) || min_eigenvalue(&sigma_star) < -tol {
        return Err(Error::InvalidArgument(
            "variance correction exceeds the uncorrected variance".into(),
        ));
    }
    report.sigma_star = Some(sigma_star);
    report.b_hat = Some(b_hat);
    report.v0 = Some(v0);
    Ok(report)
}

/// Wald intervals θ̂_j ± q·√Σ_jj.
pub fn confidence_interval(theta_hat: &[f64], report: &VarianceReport, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {level} outside (0, 1)")));
    }
    let q = normal_quantile(0.5 + level / 2.0);
    let v = report.variance();
    theta_hat
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let var = v[(j, j)];
            if var < 0.0 || !var.is_finite() {
                return Err(Error::NonFinite("variance diagonal"));
            }
            let half = q * var.sqrt();
            Ok((t - half, t + half))
        })
        .collect()
}

/// Standard normal quantile, refined by one Newton step on the CDF.
pub fn normal_quantile(p: f64) -> f64 {
    let normal = Normal::standard();
    let q = normal.inverse_cdf(p);
    if !q.is_finite() {
        return q;
    }
    let density = normal.pdf(q);
    if density > 0.0 {
        q - (normal.cdf(q) - p) / density
    } else {
        q
    }
}
