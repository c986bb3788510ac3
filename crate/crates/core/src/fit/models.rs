//! Model families and histogram fits.

use crate::error::{Error, Result};
use crate::fit::{linear_fit, nlls_fit, FitResult};
use crate::tagcorr::Histogram;

/// `a·exp(−t/τ) + c`; parameters `[a, τ, c]`.
pub fn exponential(t: f64, p: &[f64]) -> f64 {
    p[0] * (-t / p[1]).exp() + p[2]
}

/// `a·exp(−t/τ)`; parameters `[a, τ]`.
pub fn exp_survival(t: f64, p: &[f64]) -> f64 {
    p[0] * (-t / p[1]).exp()
}

/// Lorentzian line; parameters `[center, fwhm, amplitude, offset]`.
pub fn lorentzian_line(x: f64, p: &[f64]) -> f64 {
    let hw = 0.5 * p[1];
    p[2] * hw * hw / (hw * hw + (x - p[0]).powi(2)) + p[3]
}

/// Primitive of the unit-area convolution of two exponential decays:
/// ∫₀ˢ (e^{−u/τ₂} − e^{−u/τ₁})/(τ₂ − τ₁) du.
fn conv_primitive(s: f64, tau1: f64, tau2: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let (a, b) = (tau1.abs(), tau2.abs());
    if (b - a).abs() <= 1e-6 * a.max(b) {
        let t = 0.5 * (a + b);
        let e = (-s / t).exp();
        return 1.0 - e - s / t * e;
    }
    (b * (1.0 - (-s / b).exp()) - a * (1.0 - (-s / a).exp())) / (b - a)
}

/// Point value of `A·(e^{−(t−t₀)/τ₂} − e^{−(t−t₀)/τ₁})/(τ₂−τ₁) + c` for
/// `t ≥ t₀`, `c` before; parameters `[A, τ₁, τ₂, t₀, c]`.
pub fn exp_convolution(t: f64, p: &[f64]) -> f64 {
    let s = t - p[3];
    if s <= 0.0 {
        return p[4];
    }
    let (a, b) = (p[1].abs(), p[2].abs());
    let v = if (b - a).abs() <= 1e-6 * a.max(b) {
        let t = 0.5 * (a + b);
        s / (t * t) * (-s / t).exp()
    } else {
        ((-s / b).exp() - (-s / a).exp()) / (b - a)
    };
    p[0] * v + p[4]
}

/// Mean of [`exp_convolution`] over the bin `[t − w/2, t + w/2)`.
pub fn exp_convolution_bin(t: f64, w: f64, p: &[f64]) -> f64 {
    let lo = t - 0.5 * w - p[3];
    let hi = t + 0.5 * w - p[3];
    p[0] * (conv_primitive(hi, p[1], p[2]) - conv_primitive(lo, p[1], p[2])) / w + p[4]
}

/// Time after onset at which the two-exponential convolution peaks.
pub fn exp_convolution_peak_time(tau1: f64, tau2: f64) -> f64 {
    if (tau2 - tau1).abs() <= 1e-9 * tau2.max(tau1) {
        return tau1;
    }
    tau1 * tau2 * (tau2 / tau1).ln() / (tau2 - tau1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpConvolutionFit {
    /// Faster time constant, ns.
    pub tau1: f64,
    pub tau1_err: f64,
    /// Slower time constant, ns.
    pub tau2: f64,
    pub tau2_err: f64,
    /// Total counts under the curve (counts·ns per bin width).
    pub amplitude: f64,
    /// Counts per bin.
    pub offset: f64,
    /// Onset, ns.
    pub t0: f64,
    /// Rise not resolved: a single exponential (τ₂ only) was fitted.
    pub single_exponential: bool,
    pub fit: FitResult,
}

fn sigma_of(counts: &[f64]) -> Vec<f64> {
    counts.iter().map(|&c| c.max(1.0).sqrt()).collect()
}

/// Fits the rise and decay of a correlation peak with a two-exponential
/// convolution on a flat background. Times in ns.
pub fn fit_exp_convolution(h: &Histogram) -> Result<ExpConvolutionFit> {
    let w = h.bin_width as f64 * 1e-3;
    let t: Vec<f64> = (0..h.counts.len()).map(|i| h.bin_center(i) * 1e-3).collect();
    let y: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    let n = y.len();
    if n < 10 {
        return Err(Error::analysis("histogram too short for a rise/decay fit"));
    }
    let head = (n / 10).max(3);
    let mut first: Vec<f64> = y[..head].to_vec();
    first.sort_by(f64::total_cmp);
    let c0 = first[head / 2];
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 2).min(n);
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let i_peak = (0..n).max_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap();
    let ymax = smooth[i_peak] - c0;
    if !(ymax > 0.0) {
        return Err(Error::analysis("no peak above background"));
    }
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    for i in i_peak + 1..n {
        let v = smooth[i] - c0;
        if v < 0.1 * ymax {
            break;
        }
        if v <= 0.7 * ymax {
            tx.push(t[i]);
            ty.push(v.ln());
        }
    }
    let tau2_guess = match linear_fit(&tx, &ty, None) {
        Ok((_, b, _, _)) if b < 0.0 => -1.0 / b,
        _ => 3.0 * w,
    };
    let t_star = t[i_peak];
    let sig = sigma_of(&y);

    // Coarse search over τ₁ with the onset fixed by the peak position.
    let mut best: Option<(f64, [f64; 5])> = None;
    for k in 0..60 {
        let tau1 = tau2_guess * 10f64.powf(-2.0 + 2.0 * k as f64 / 60.0) * 0.95;
        let t0 = t_star - exp_convolution_peak_time(tau1, tau2_guess);
        let shape: Vec<f64> = t
            .iter()
            .map(|&ti| exp_convolution_bin(ti, w, &[1.0, tau1, tau2_guess, t0, 0.0]))
            .collect();
        let num: f64 = shape.iter().zip(&y).zip(&sig).map(|((s, y), e)| s * (y - c0) / (e * e)).sum();
        let den: f64 = shape.iter().zip(&sig).map(|(s, e)| s * s / (e * e)).sum();
        if den <= 0.0 {
            continue;
        }
        let a = num / den;
        let chi2: f64 = shape
            .iter()
            .zip(&y)
            .zip(&sig)
            .map(|((s, y), e)| ((y - c0 - a * s) / e).powi(2))
            .sum();
        if best.is_none_or(|(c, _)| chi2 < c) {
            best = Some((chi2, [a, tau1, tau2_guess, t0, c0]));
        }
    }
    let (_, p0) = best.ok_or_else(|| Error::analysis("no usable starting point"))?;
    let model = |x: f64, p: &[f64]| exp_convolution_bin(x, w, p);
    let fit = nlls_fit(model, &["amplitude", "tau1", "tau2", "t0", "offset"], &p0, &t, &y, Some(&sig))?;
    let (mut t1, mut e1) = (fit.parameters[1].abs(), fit.standard_errors[1]);
    let (mut t2, mut e2) = (fit.parameters[2].abs(), fit.standard_errors[2]);
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
        std::mem::swap(&mut e1, &mut e2);
    }
    if t1 < w {
        let single = |x: f64, p: &[f64]| {
            let lo = x - 0.5 * w - p[2];
            let hi = x + 0.5 * w - p[2];
            let prim = |s: f64| if s <= 0.0 { 0.0 } else { 1.0 - (-s / p[1].abs()).exp() };
            p[0] * (prim(hi) - prim(lo)) / w + p[3]
        };
        let fit = nlls_fit(
            single,
            &["amplitude", "tau2", "t0", "offset"],
            &[fit.parameters[0], t2, fit.parameters[3], fit.parameters[4]],
            &t,
            &y,
            Some(&sig),
        )?;
        return Ok(ExpConvolutionFit {
            tau1: 0.0,
            tau1_err: f64::NAN,
            tau2: fit.parameters[1].abs(),
            tau2_err: fit.standard_errors[1],
            amplitude: fit.parameters[0],
            offset: fit.parameters[3],
            t0: fit.parameters[2],
            single_exponential: true,
            fit,
        });
    }
    Ok(ExpConvolutionFit {
        tau1: t1,
        tau1_err: e1,
        tau2: t2,
        tau2_err: e2,
        amplitude: fit.parameters[0],
        offset: fit.parameters[4],
        t0: fit.parameters[3],
        single_exponential: false,
        fit,
    })
}

/// Fits `a·exp(−t/τ)` (plus `c` if `with_offset`) starting from a
/// log-linear estimate.
pub fn fit_exponential(t: &[f64], y: &[f64], sigma: Option<&[f64]>, with_offset: bool) -> Result<FitResult> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&x, &v)| (x, v.ln()))
        .unzip();
    let (a0, tau0) = match linear_fit(&lx, &ly, None) {
        Ok((a, b, _, _)) if b < 0.0 => (a.exp(), -1.0 / b),
        _ => (y.iter().cloned().fold(0.0, f64::max), (t[t.len() - 1] - t[0]).abs().max(1e-12)),
    };
    if with_offset {
        nlls_fit(exponential, &["amplitude", "tau", "offset"], &[a0, tau0, 0.0], t, y, sigma)
    } else {
        nlls_fit(exp_survival, &["amplitude", "tau"], &[a0, tau0], t, y, sigma)
    }
}
