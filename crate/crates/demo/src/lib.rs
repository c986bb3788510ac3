//! Browser bindings: comb coherence, rate-budget inversion and the
//! absorption line shape.

use wasm_bindgen::prelude::*;

use opo_herald::budget::{budget_report, infer_budget, BudgetInputs};
use opo_herald::ion::mean_line_overlap;
use opo_herald::model::SpectralCombModel;
use opo_herald::tagcorr::{coherence_time, g1_visibility};

fn comb(round_trip_ps: f64, mode_fwhm_mhz: f64, envelope_fwhm_ghz: f64) -> Result<SpectralCombModel, String> {
    let mut c = SpectralCombModel::from_round_trip(round_trip_ps);
    c.mode_fwhm = mode_fwhm_mhz * 1e6;
    c.envelope_fwhm = envelope_fwhm_ghz * 1e9;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn delays(max_delay_ps: f64, n_points: usize) -> Vec<f64> {
    let n = n_points.max(2);
    (0..n).map(|i| max_delay_ps * i as f64 / (n - 1) as f64).collect()
}

pub fn g1_curve_impl(
    round_trip_ps: f64,
    mode_fwhm_mhz: f64,
    envelope_fwhm_ghz: f64,
    max_delay_ps: f64,
    n_points: usize,
) -> Result<Vec<f64>, String> {
    if !(max_delay_ps > 0.0) || n_points > 200_000 {
        return Err("delay range must be positive and at most 200000 points".into());
    }
    let c = comb(round_trip_ps, mode_fwhm_mhz, envelope_fwhm_ghz)?;
    Ok(g1_visibility(&c, &delays(max_delay_ps, n_points)))
}

/// |g¹| on `n_points` delays from 0 to `max_delay_ps`.
#[wasm_bindgen]
pub fn g1_curve(
    round_trip_ps: f64,
    mode_fwhm_mhz: f64,
    envelope_fwhm_ghz: f64,
    max_delay_ps: f64,
    n_points: usize,
) -> Result<Vec<f64>, JsError> {
    g1_curve_impl(round_trip_ps, mode_fwhm_mhz, envelope_fwhm_ghz, max_delay_ps, n_points).map_err(|e| JsError::new(&e))
}

/// Zero-delay coherence time, ps.
#[wasm_bindgen]
pub fn coherence_time_ps(round_trip_ps: f64, mode_fwhm_mhz: f64, envelope_fwhm_ghz: f64) -> Result<f64, JsError> {
    let c = comb(round_trip_ps, mode_fwhm_mhz, envelope_fwhm_ghz).map_err(|e| JsError::new(&e))?;
    coherence_time(&c).map_err(|e| JsError::new(&e.to_string()))
}

pub fn budget_impl(r1: f64, r2: f64, c: f64, r_abs: f64, pump_mw: f64) -> Result<String, String> {
    let inputs = BudgetInputs {
        r1,
        r2,
        c,
        ..BudgetInputs::reference()
    };
    let out = infer_budget(&inputs, r_abs).map_err(|e| e.to_string())?;
    budget_report(&inputs, r_abs, &out, pump_mw).map_err(|e| e.to_string())
}

/// Budget report for measured rates with the reference efficiency chain.
#[wasm_bindgen]
pub fn rate_budget(r1: f64, r2: f64, c: f64, r_abs: f64, pump_mw: f64) -> Result<String, JsError> {
    budget_impl(r1, r2, c, r_abs, pump_mw).map_err(|e| JsError::new(&e))
}

pub fn line_impl(
    natural_fwhm_mhz: f64,
    mode_fwhm_mhz: f64,
    jitter_fwhm_mhz: f64,
    span_mhz: f64,
    n_points: usize,
) -> Result<Vec<f64>, String> {
    if !(natural_fwhm_mhz > 0.0) || !(mode_fwhm_mhz >= 0.0) || !(jitter_fwhm_mhz >= 0.0) {
        return Err("widths must be non-negative and the natural width positive".into());
    }
    if !(span_mhz > 0.0) || !(2..=401).contains(&n_points) {
        return Err("span must be positive with 2 to 401 points".into());
    }
    let mut c = SpectralCombModel::default();
    c.mode_fwhm = mode_fwhm_mhz * 1e6;
    c.jitter_fwhm = jitter_fwhm_mhz * 1e6;
    Ok((0..n_points)
        .map(|i| {
            let d = -span_mhz + 2.0 * span_mhz * i as f64 / (n_points - 1) as f64;
            mean_line_overlap(&c, natural_fwhm_mhz * 1e6, d * 1e6)
        })
        .collect())
}

/// Relative absorption probability on `n_points` detunings across
/// `±span_mhz`.
#[wasm_bindgen]
pub fn absorption_line(
    natural_fwhm_mhz: f64,
    mode_fwhm_mhz: f64,
    jitter_fwhm_mhz: f64,
    span_mhz: f64,
    n_points: usize,
) -> Result<Vec<f64>, JsError> {
    line_impl(natural_fwhm_mhz, mode_fwhm_mhz, jitter_fwhm_mhz, span_mhz, n_points).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g1_starts_at_one_and_revives() {
        let v = g1_curve_impl(939.0, 7.2, 275.0, 939.0, 3).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9);
        assert!(v[1] < 0.05);
        assert!((v[2] - (-std::f64::consts::PI * 7.2e6 * 939e-12).exp()).abs() < 1e-3);
        assert!(g1_curve_impl(939.0, 7.2, 275.0, -1.0, 10).is_err());
    }

    #[test]
    fn budget_reference() {
        let text = budget_impl(111.0, 136_000.0, 16_692.0 / 18_600.0, 680.0, 300.0).unwrap();
        assert!(text.contains("P = "));
        assert!(budget_impl(111.0, 136_000.0, 0.0, 680.0, 300.0).is_err());
    }

    #[test]
    fn line_is_symmetric_with_summed_width() {
        let v = line_impl(23.0, 7.2, 4.0, 17.1, 3).unwrap();
        assert!((v[0] - v[2]).abs() < 1e-9);
        // Half maximum at half the summed width.
        assert!((v[0] / v[1] - 0.5).abs() < 0.02, "{}", v[0] / v[1]);
        assert!(line_impl(0.0, 7.2, 4.0, 60.0, 11).is_err());
    }
}
