//! Nonlinear least squares and the fits built on it.
//!
//! [`nlls_fit`] is a Levenberg-Marquardt solver: the Jacobian is taken by
//! forward differences, each step solves `(JᵀJ + λ·diag(JᵀJ)) δ = Jᵀr`, λ is
//! divided by 10 after an accepted step and multiplied by 10 after a
//! rejected one. Iteration stops when every parameter moves by less than
//! `rel_tol` of its magnitude, or after `max_iterations`.

pub mod lifetime;
pub mod models;
pub mod spectroscopy;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lifetime::{absorption_rate_from_lifetime, bayesian_lifetime, LifetimeEstimate};
pub use models::{fit_exp_convolution, fit_exponential, ExpConvolutionFit};
pub use spectroscopy::{spectroscopy_scan, LorentzianLine, ScanConfig, ScanPoint, ScanResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub parameters: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Weighted residual sum of squares (χ²).
    pub residual_sum_squares: f64,
    pub degrees_of_freedom: usize,
    pub n_iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.parameters[i], self.standard_errors[i]))
    }

    pub fn value(&self, name: &str) -> f64 {
        self.get(name).map(|v| v.0).unwrap_or(f64::NAN)
    }

    pub fn error(&self, name: &str) -> f64 {
        self.get(name).map(|v| v.1).unwrap_or(f64::NAN)
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.degrees_of_freedom == 0 {
            f64::NAN
        } else {
            self.residual_sum_squares / self.degrees_of_freedom as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Scale the covariance by the reduced χ². Off when the weights are
    /// trusted absolute uncertainties.
    pub scale_covariance: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 200,
            rel_tol: 1e-8,
            scale_covariance: true,
        }
    }
}

/// Central-difference step for parameter value `p` (cube root of the
/// machine epsilon, relative).
#[inline]
fn step(p: f64) -> f64 {
    6.06e-6 * p.abs().max(1.0)
}

/// Jacobian of `model` with respect to the parameters at every `x`, by
/// central differences. Row `i` holds ∂f(x_i)/∂p.
pub fn numeric_jacobian<F>(model: &F, x: &[f64], p: &[f64]) -> DMatrix<f64>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let mut j = DMatrix::zeros(x.len(), p.len());
    let mut hi = p.to_vec();
    let mut lo = p.to_vec();
    for k in 0..p.len() {
        let h = step(p[k]);
        hi[k] = p[k] + h;
        lo[k] = p[k] - h;
        let span = hi[k] - lo[k];
        for (i, &xi) in x.iter().enumerate() {
            j[(i, k)] = (model(xi, &hi) - model(xi, &lo)) / span;
        }
        hi[k] = p[k];
        lo[k] = p[k];
    }
    j
}

fn weighted(
    model: &impl Fn(f64, &[f64]) -> f64,
    x: &[f64],
    y: &[f64],
    w: &[f64],
    p: &[f64],
) -> (DVector<f64>, f64) {
    let r = DVector::from_iterator(
        x.len(),
        x.iter().zip(y).zip(w).map(|((&xi, &yi), &wi)| (yi - model(xi, p)) * wi),
    );
    let c = r.norm_squared();
    (r, c)
}

/// Fits `model(x, p)` to `y` with optional standard deviations `sigma`.
pub fn nlls_fit<F>(
    model: F,
    names: &[&str],
    p0: &[f64],
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
) -> Result<FitResult>
where
    F: Fn(f64, &[f64]) -> f64,
{
    nlls_fit_with(model, names, p0, x, y, sigma, FitOptions::default())
}

pub fn nlls_fit_with<F>(
    model: F,
    names: &[&str],
    p0: &[f64],
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    opts: FitOptions,
) -> Result<FitResult>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let n = x.len();
    let k = p0.len();
    if names.len() != k {
        return Err(Error::input("one name per parameter required"));
    }
    if y.len() != n || sigma.is_some_and(|s| s.len() != n) {
        return Err(Error::input("x, y and sigma lengths differ"));
    }
    if n < k || k == 0 {
        return Err(Error::input(format!("{n} points cannot determine {k} parameters")));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("initial parameters must be finite"));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => {
            if s.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::input("sigma values must be positive"));
            }
            s.iter().map(|v| 1.0 / v).collect()
        }
        None => vec![1.0; n],
    };
    let mut p = p0.to_vec();
    let (mut r, mut cost) = weighted(&model, x, y, &w, &p);
    if !cost.is_finite() {
        return Err(Error::input("model is not finite at the initial parameters"));
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let mut jac = numeric_jacobian(&model, x, &p);
        for (i, wi) in w.iter().enumerate() {
            jac.row_mut(i).scale_mut(*wi);
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-300);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                if lambda > 1e20 {
                    break 'outer;
                }
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let (r_new, c_new) = weighted(&model, x, y, &w, &trial);
            if c_new.is_finite() && c_new <= cost {
                let small = p
                    .iter()
                    .zip(delta.iter())
                    .all(|(pi, di)| di.abs() <= opts.rel_tol * pi.abs().max(1e-300));
                p = trial;
                r = r_new;
                let done = small || cost - c_new <= 1e-15 * cost.max(1e-300) || c_new == 0.0;
                cost = c_new;
                lambda = (lambda / 10.0).max(1e-15);
                if done {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                // No downhill step exists at machine precision: a minimum.
                converged = true;
                break 'outer;
            }
        }
    }
    let mut jac = numeric_jacobian(&model, x, &p);
    for (i, wi) in w.iter().enumerate() {
        jac.row_mut(i).scale_mut(*wi);
    }
    let jtj = jac.transpose() * &jac;
    let cov = jtj
        .clone()
        .try_inverse()
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;
    let dof = n - k;
    let scale = if opts.scale_covariance && dof > 0 {
        cost / dof as f64
    } else {
        1.0
    };
    let standard_errors = (0..k).map(|d| (cov[(d, d)] * scale).max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        parameters: p,
        standard_errors,
        residual_sum_squares: cost,
        degrees_of_freedom: dof,
        n_iterations: iterations,
        converged,
    })
}

/// Weighted straight-line fit `y = a + b·x`; returns `(a, b, σ_a, σ_b)`
/// with σ from the given uncertainties (unit weights if `None`, scaled by
/// the residual scatter).
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<(f64, f64, f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::input("linear fit needs at least two points"));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|v| 1.0 / (v * v)).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    if det.abs() <= 1e-300 {
        return Err(Error::DegenerateFit("all x values equal".into()));
    }
    let b = (sw * sxy - sx * sy) / det;
    let a = (sy - b * sx) / sw;
    let mut va = sxx / det;
    let mut vb = sw / det;
    if sigma.is_none() && n > 2 {
        let s2 = x
            .iter()
            .zip(y)
            .map(|(x, y)| (y - a - b * x).powi(2))
            .sum::<f64>()
            / (n - 2) as f64;
        va *= s2;
        vb *= s2;
    }
    Ok((a, b, va.sqrt(), vb.sqrt()))
}
