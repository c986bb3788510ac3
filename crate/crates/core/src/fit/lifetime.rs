//! Lifetime of the shelved state from quantum-jump delays.
//!
//! Each exposure is cut into bins. In every bin the conditional decay
//! probability gets a Beta posterior from a uniform prior, decays `d` and
//! ions at risk `n`: mean `(d+1)/(n+2)`. The product of the posterior
//! survival probabilities gives a survival curve, which is fitted with
//! `A·exp(−t/τ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{nlls_fit_with, FitOptions};
use crate::model::{Picos, PS_PER_SECOND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeEstimate {
    /// Effective lifetime, s.
    pub tau_eff: f64,
    /// 68 % interval, s.
    pub credible_interval: (f64, f64),
    pub n_jumps: u64,
    pub n_censored: u64,
    /// Closed-form censored maximum-likelihood lifetime, s.
    pub tau_mle: f64,
    /// No jump was seen; `tau_eff` is only a lower bound.
    pub lower_bound_only: bool,
    /// Posterior survival curve: `(bin end time s, survival, σ)`.
    pub survival: Vec<(f64, f64, f64)>,
}

impl LifetimeEstimate {
    pub fn sigma(&self) -> f64 {
        0.5 * (self.credible_interval.1 - self.credible_interval.0)
    }
}

/// Lifetime estimate from detected jump delays (measured from the start of
/// exposure) and the number of cycles without a jump. Delays beyond the
/// exposure (detection latency) fall into the last bin. `bin_width`
/// defaults to `exposure / 50`.
pub fn bayesian_lifetime(
    jump_delays: &[Picos],
    n_censored: u64,
    exposure: Picos,
    bin_width: Option<Picos>,
) -> Result<LifetimeEstimate> {
    let n_jumps = jump_delays.len() as u64;
    let total = n_jumps + n_censored;
    if total == 0 {
        return Err(Error::input("no cycles to analyse"));
    }
    if exposure <= 0 {
        return Err(Error::input("exposure must be positive"));
    }
    let bw = bin_width.unwrap_or(exposure / 50).max(1);
    let n_bins = ((exposure + bw - 1) / bw) as usize;
    let secs = |ps: f64| ps / PS_PER_SECOND;

    let exposure_sum = jump_delays.iter().map(|&d| d.clamp(0, exposure) as f64).sum::<f64>()
        + n_censored as f64 * exposure as f64;
    if n_jumps == 0 {
        let bound = secs(exposure_sum);
        return Ok(LifetimeEstimate {
            tau_eff: bound,
            credible_interval: (bound, f64::INFINITY),
            n_jumps,
            n_censored,
            tau_mle: f64::INFINITY,
            lower_bound_only: true,
            survival: Vec::new(),
        });
    }
    let tau_mle = secs(exposure_sum) / n_jumps as f64;

    let mut decays = vec![0u64; n_bins];
    for &d in jump_delays {
        let i = ((d.max(0) / bw) as usize).min(n_bins - 1);
        decays[i] += 1;
    }
    let mut at_risk = total;
    let mut s = 1.0;
    let mut greenwood = 0.0;
    let mut survival = Vec::with_capacity(n_bins);
    // Log-survival increments of the posterior curve, their bin lengths
    // and the numbers at risk.
    let mut incr = Vec::with_capacity(n_bins);
    for (i, &d) in decays.iter().enumerate() {
        if at_risk == 0 {
            break;
        }
        let a = d as f64 + 1.0;
        let b = (at_risk - d) as f64 + 1.0;
        let q = a / (a + b);
        let var_q = a * b / ((a + b).powi(2) * (a + b + 1.0));
        s *= 1.0 - q;
        greenwood += var_q / (1.0 - q).powi(2);
        let t0 = i as i64 * bw;
        let t_end = ((i as i64 + 1) * bw).min(exposure);
        survival.push((secs(t_end as f64), s, s * greenwood.sqrt()));
        incr.push(((1.0 - q).ln(), secs((t_end - t0) as f64), at_risk as f64));
        at_risk -= d;
    }
    // The points of a survival curve are cumulative, so their errors are
    // correlated like a random walk. Fitting ln(A·exp(−t/τ)) through the
    // independent increments is the generalized least-squares fit of the
    // curve. Variances use the hazard of the closed-form estimate.
    let x: Vec<f64> = (0..incr.len()).map(|i| i as f64).collect();
    let y: Vec<f64> = incr.iter().map(|v| v.0).collect();
    let sig: Vec<f64> = incr
        .iter()
        .map(|&(_, len, n)| {
            let q = -(-len / tau_mle).exp_m1();
            (q / ((1.0 - q) * (n + 2.0))).sqrt().max(1e-300)
        })
        .collect();
    let lens: Vec<f64> = incr.iter().map(|v| v.1 / tau_mle).collect();
    let model = |k: f64, p: &[f64]| {
        let i = k as usize;
        let step = -lens[i] / p[1];
        if i == 0 { p[0] + step } else { step }
    };
    let opts = FitOptions {
        scale_covariance: false,
        ..FitOptions::default()
    };
    // Time in units of the closed-form lifetime keeps parameters of order one.
    let (tau, err) = if incr.len() >= 2 {
        let fit = nlls_fit_with(model, &["ln_amplitude", "tau"], &[0.0, 1.0], &x, &y, Some(&sig), opts)?;
        (fit.parameters[1].abs() * tau_mle, fit.standard_errors[1] * tau_mle)
    } else {
        (tau_mle, tau_mle / (n_jumps as f64).sqrt())
    };
    Ok(LifetimeEstimate {
        tau_eff: tau,
        credible_interval: (tau - err, tau + err),
        n_jumps,
        n_censored,
        tau_mle,
        lower_bound_only: false,
        survival,
    })
}

/// `(1/τ_eff − 1/τ_sp)/0.94`. Returns the rate and whether a small negative
/// value was clamped to zero.
pub fn absorption_rate_from_lifetime(tau_eff: f64, tau_sp: f64) -> Result<(f64, bool)> {
    absorption_rate_with_branching(tau_eff, tau_sp, 0.94)
}

pub fn absorption_rate_with_branching(tau_eff: f64, tau_sp: f64, branching: f64) -> Result<(f64, bool)> {
    if !(tau_eff > 0.0) || !(tau_sp > 0.0) {
        return Err(Error::input(format!("lifetimes must be positive (got {tau_eff}, {tau_sp})")));
    }
    let r = (1.0 / tau_eff - 1.0 / tau_sp) / branching;
    if r < 0.0 {
        Ok((0.0, true))
    } else {
        Ok((r, false))
    }
}

/// Standard deviation of the absorption rate from that of `τ_eff`.
pub fn absorption_rate_sigma(tau_eff: f64, tau_sigma: f64, branching: f64) -> f64 {
    tau_sigma / (tau_eff * tau_eff) / branching
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{exp1, stream};

    fn draw(tau_s: f64, exposure_s: f64, n: usize, seed: u64) -> (Vec<Picos>, u64) {
        let mut rng = stream(seed, "lifetime-test", 0);
        let mut d = Vec::new();
        let mut c = 0;
        for _ in 0..n {
            let t = exp1(&mut rng) * tau_s;
            if t < exposure_s {
                d.push((t * PS_PER_SECOND) as Picos);
            } else {
                c += 1;
            }
        }
        (d, c)
    }

    #[test]
    fn rate_inversion() {
        let (r, clamped) = absorption_rate_from_lifetime(1.17, 1.17).unwrap();
        assert_eq!(r, 0.0);
        assert!(!clamped);
        let (r, _) = absorption_rate_from_lifetime(1.5624e-3, 1.17).unwrap();
        assert!((r - 680.0).abs() < 0.1, "{r}");
        let (r, _) = absorption_rate_from_lifetime(1.534e-3, 1.17).unwrap();
        assert!((r - 692.6).abs() < 0.5, "{r}");
        let (r, clamped) = absorption_rate_from_lifetime(1.2, 1.17).unwrap();
        assert!(clamped && r == 0.0);
        assert!(absorption_rate_from_lifetime(0.0, 1.17).is_err());
    }

    #[test]
    fn recovers_short_lifetime() {
        let (d, c) = draw(1.56e-3, 7e-3, 10_000, 1);
        let e = bayesian_lifetime(&d, c, 7_000_000_000, None).unwrap();
        assert!((e.tau_eff / 1.56e-3 - 1.0).abs() < 0.03, "{}", e.tau_eff);
        assert!((e.tau_eff / e.tau_mle - 1.0).abs() < 0.05);
        assert!(e.credible_interval.0 <= e.tau_eff && e.tau_eff <= e.credible_interval.1);
    }

    #[test]
    fn long_lifetime_without_photons() {
        let (d, c) = draw(1.17, 7e-3, 1_000_000, 2);
        let e = bayesian_lifetime(&d, c, 7_000_000_000, None).unwrap();
        let (lo, hi) = e.credible_interval;
        let width = hi - lo;
        assert!(lo - width <= 1.17 && 1.17 <= hi + width, "{lo} {hi}");
        assert!((e.tau_eff / e.tau_mle - 1.0).abs() < 0.05);
    }

    #[test]
    fn all_censored() {
        let e = bayesian_lifetime(&[], 1000, 7_000_000_000, None).unwrap();
        assert!(e.lower_bound_only);
        assert!(e.tau_eff >= 7e-3 * 1000.0 - 1e-9);
        assert!(bayesian_lifetime(&[], 0, 7_000_000_000, None).is_err());
    }
}
