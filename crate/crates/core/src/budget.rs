//! Rate budget of the heralded-absorption experiment.
//!
//! Arm 1 ends at the ion, arm 2 at the herald detector. With pair rate `P`,
//! unpaired photon rates `B_i = β_i·P` and overall efficiencies `η_i`:
//!
//! ```text
//! R_i = (P + B_i)·η_i      C = P·η1·η2      BG = R1·R2·Δt
//! ```
//!
//! Inversion uses the absorption rate measured at the trap:
//! `P = R_abs / (η_SMF·η_fbs·η_ion·(1+β1))`, and the saturation factor
//! `η_sat = R1 / R_abs` completes `η1`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRates {
    pub r1: f64,
    pub r2: f64,
    pub c: f64,
    /// Accidental coincidences per bin per second.
    pub bg: f64,
}

/// Singles, coincidence and accidental rates of a source.
pub fn predict_rates(p: f64, beta1: f64, beta2: f64, eta1: f64, eta2: f64, dt: f64) -> PredictedRates {
    let r1 = p * (1.0 + beta1) * eta1;
    let r2 = p * (1.0 + beta2) * eta2;
    PredictedRates {
        r1,
        r2,
        c: p * eta1 * eta2,
        bg: r1 * r2 * dt,
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::input(format!("{name} = {v} is not in (0, 1]")))
    }
}

/// Product of efficiency factors.
pub fn eta1_chain(factors: &[f64]) -> Result<f64> {
    if factors.is_empty() {
        return Err(Error::input("efficiency chain is empty"));
    }
    let mut p = 1.0;
    for (i, &f) in factors.iter().enumerate() {
        check_fraction(&format!("factor {i}"), f)?;
        p *= f;
    }
    Ok(p)
}

/// Fraction of absorptions registered as jumps: `R1 / R_abs`.
pub fn eta_sat(r1: f64, r_abs: f64) -> Result<f64> {
    if !(r1 >= 0.0) || !(r_abs > 0.0) {
        return Err(Error::input(format!("rates must be non-negative (R1 = {r1}, R_abs = {r_abs})")));
    }
    if r1 > r_abs {
        return Err(Error::input(format!("R1 = {r1} exceeds R_abs = {r_abs}")));
    }
    Ok(r1 / r_abs)
}

pub fn pairs_per_mw(p: f64, pump_mw: f64) -> Result<f64> {
    if !(pump_mw > 0.0) {
        return Err(Error::input(format!("pump power must be positive (got {pump_mw})")));
    }
    Ok(p / pump_mw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetInputs {
    /// Jump rate at the ion, s⁻¹.
    pub r1: f64,
    /// Herald rate, s⁻¹.
    pub r2: f64,
    /// Background-corrected coincidence rate, s⁻¹.
    pub c: f64,
    /// Correlation bin width, s.
    pub bin_width_dt: f64,
    #[serde(default)]
    pub beta1: f64,
    /// Arm-1 efficiencies up to the ion, without saturation.
    pub eta1_factors: Vec<(String, f64)>,
    /// Known arm-2 efficiencies.
    pub known_eta2_factors: Vec<(String, f64)>,
    /// Optional standard errors of the measured rates.
    #[serde(default)]
    pub sigma_r1: f64,
    #[serde(default)]
    pub sigma_r2: f64,
    #[serde(default)]
    pub sigma_c: f64,
}

impl BudgetInputs {
    /// Measured values and efficiency factors of the experiment.
    pub fn reference() -> Self {
        BudgetInputs {
            r1: 111.0,
            r2: 136_000.0,
            c: 16_692.0 / (310.0 * 60.0),
            bin_width_dt: 13e-6,
            beta1: 0.0,
            eta1_factors: vec![
                ("eta_SMF".into(), 0.27),
                ("eta_fbs".into(), 0.5),
                ("eta_ion".into(), 0.002),
            ],
            known_eta2_factors: vec![("eta_FBG".into(), 0.2), ("eta_SSPD".into(), 0.25)],
            sigma_r1: 0.0,
            sigma_r2: 0.0,
            sigma_c: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (n, v) in [("R1", self.r1), ("R2", self.r2), ("C", self.c), ("dt", self.bin_width_dt), ("beta1", self.beta1)] {
            if !(v >= 0.0) || !v.is_finite() {
                problems.push(format!("{n} must be non-negative (got {v})"));
            }
        }
        for (n, v) in self.eta1_factors.iter().chain(&self.known_eta2_factors) {
            if !(*v > 0.0 && *v <= 1.0) {
                problems.push(format!("{n} = {v} is not in (0, 1]"));
            }
        }
        if self.eta1_factors.is_empty() {
            problems.push("eta1_factors must not be empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutputs {
    pub p: f64,
    /// `R1 / (η1·(1+β1))`, the same quantity from the jump rate.
    pub p_from_r1: f64,
    /// The two estimates of `P` agree within 10 %.
    pub p_consistent: bool,
    pub eta1: f64,
    pub eta2: f64,
    pub beta2: f64,
    pub eta_unknown: f64,
    pub eta_sat: f64,
    pub bg_predicted: f64,
    pub sigma_p: f64,
    pub sigma_eta2: f64,
    pub sigma_beta2: f64,
    pub sigma_eta_unknown: f64,
}

fn infer_core(inputs: &BudgetInputs, r1: f64, r2: f64, c: f64, r_abs: f64) -> Result<[f64; 8]> {
    let chain: f64 = inputs.eta1_factors.iter().map(|f| f.1).product();
    let sat = eta_sat(r1, r_abs)?;
    let eta1 = chain * sat;
    let p = r_abs / (chain * (1.0 + inputs.beta1));
    let p_from_r1 = if eta1 > 0.0 { r1 / (eta1 * (1.0 + inputs.beta1)) } else { f64::NAN };
    if !(c > 0.0) {
        return Err(Error::input("C = 0 leaves η2 undefined"));
    }
    if !(p > 0.0) || !(eta1 > 0.0) {
        return Err(Error::input("zero pair rate or arm-1 efficiency"));
    }
    let eta2 = c / (p * eta1);
    let beta2 = r2 / (p * eta2) - 1.0;
    let known: f64 = inputs.known_eta2_factors.iter().map(|f| f.1).product();
    let eta_unknown = eta2 / known;
    Ok([p, p_from_r1, eta1, eta2, beta2, eta_unknown, sat, r1 * r2 * inputs.bin_width_dt])
}

/// Infers source rate and efficiencies from measured rates and the
/// absorption rate `r_abs` (with standard error `sigma_r_abs`).
pub fn infer_budget(inputs: &BudgetInputs, r_abs: f64) -> Result<BudgetOutputs> {
    infer_budget_with_sigma(inputs, r_abs, 0.0)
}

pub fn infer_budget_with_sigma(inputs: &BudgetInputs, r_abs: f64, sigma_r_abs: f64) -> Result<BudgetOutputs> {
    inputs.validate()?;
    if !(r_abs > 0.0) {
        return Err(Error::input(format!("R_abs must be positive (got {r_abs})")));
    }
    let (r1, r2, c) = (inputs.r1, inputs.r2, inputs.c);
    let v = infer_core(inputs, r1, r2, c, r_abs)?;
    // First-order propagation by central differences in each measured rate.
    let mut var = [0.0f64; 8];
    let measured = [(0usize, r1, inputs.sigma_r1), (1, r2, inputs.sigma_r2), (2, c, inputs.sigma_c), (3, r_abs, sigma_r_abs)];
    for (k, x, s) in measured {
        if !(s > 0.0) {
            continue;
        }
        let h = 1e-6 * x.abs().max(1e-12);
        let mut a = [r1, r2, c, r_abs];
        let mut b = a;
        a[k] += h;
        b[k] -= h;
        let (Ok(fa), Ok(fb)) = (infer_core(inputs, a[0], a[1], a[2], a[3]), infer_core(inputs, b[0], b[1], b[2], b[3])) else {
            continue;
        };
        for i in 0..8 {
            var[i] += ((fa[i] - fb[i]) / (2.0 * h) * s).powi(2);
        }
    }
    Ok(BudgetOutputs {
        p: v[0],
        p_from_r1: v[1],
        p_consistent: (v[1] / v[0] - 1.0).abs() <= 0.1,
        eta1: v[2],
        eta2: v[3],
        beta2: v[4],
        eta_unknown: v[5],
        eta_sat: v[6],
        bg_predicted: v[7],
        sigma_p: var[0].sqrt(),
        sigma_eta2: var[3].sqrt(),
        sigma_beta2: var[4].sqrt(),
        sigma_eta_unknown: var[5].sqrt(),
    })
}

/// Flat `key = value` report using the usual symbols.
pub fn budget_report(inputs: &BudgetInputs, r_abs: f64, out: &BudgetOutputs, pump_mw: f64) -> Result<String> {
    let mut s = String::new();
    let mut kv = |k: &str, v: f64| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("R1", inputs.r1);
    kv("R2", inputs.r2);
    kv("C", inputs.c);
    kv("dt", inputs.bin_width_dt);
    kv("beta1", inputs.beta1);
    kv("R_abs", r_abs);
    for (n, v) in &inputs.eta1_factors {
        kv(n, *v);
    }
    for (n, v) in &inputs.known_eta2_factors {
        kv(n, *v);
    }
    kv("eta_sat", out.eta_sat);
    kv("eta1", out.eta1);
    kv("P", out.p);
    kv("sigma_P", out.sigma_p);
    kv("P_from_R1", out.p_from_r1);
    kv("eta2", out.eta2);
    kv("sigma_eta2", out.sigma_eta2);
    kv("beta2", out.beta2);
    kv("sigma_beta2", out.sigma_beta2);
    kv("eta_unknown", out.eta_unknown);
    kv("sigma_eta_unknown", out.sigma_eta_unknown);
    kv("BG", out.bg_predicted);
    kv("pump_mW", pump_mw);
    kv("pairs_per_s_mW", pairs_per_mw(out.p, pump_mw)?);
    let _ = writeln!(s, "P_consistent = {}", out.p_consistent);
    Ok(s)
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = x.abs().log10().floor() as i32;
    let f = 10f64.powi(digits - 1 - e);
    (x * f).round() / f
}
