//! Absorption spectroscopy by scanning the OPO detuning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::lifetime::{absorption_rate_sigma, absorption_rate_with_branching, bayesian_lifetime};
use crate::fit::{models, nlls_fit, FitResult};
use crate::ion::{IonExperiment, IonParams, JumpCause, SequenceParams};
use crate::model::{PhotonEvent, Origin, Picos, SpectralCombModel, PS_PER_SECOND};
use crate::rng;
use crate::source::ModeSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianLine {
    /// Hz.
    pub center: f64,
    /// Hz.
    pub fwhm: f64,
    /// Peak absorption rate, s⁻¹.
    pub amplitude: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Resonant photon rate arriving at the trap, s⁻¹.
    pub photon_rate: f64,
    /// Spectrum of the photons.
    pub comb: SpectralCombModel,
    /// Spectrum that defines the absorption probability per photon.
    pub reference_comb: SpectralCombModel,
    pub ion: IonParams,
    pub sequence: SequenceParams,
    pub cycles_per_point: u64,
    pub seed: u64,
    /// Fit blue and red halves separately as well.
    pub split_halves: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub detuning: f64,
    pub r_abs: f64,
    pub sigma: f64,
    pub n_jumps: u64,
    pub n_censored: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfFit {
    pub line: LorentzianLine,
    pub fwhm_err: f64,
    pub amplitude_err: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub points: Vec<ScanPoint>,
    pub full: HalfFit,
    pub blue: Option<HalfFit>,
    pub red: Option<HalfFit>,
}

impl ScanResult {
    /// Mean of the half-scan FWHMs, or the full fit without halves.
    pub fn mean_fwhm(&self) -> f64 {
        match (&self.blue, &self.red) {
            (Some(b), Some(r)) => 0.5 * (b.line.fwhm + r.line.fwhm),
            _ => self.full.line.fwhm,
        }
    }

    pub fn mean_amplitude(&self) -> f64 {
        match (&self.blue, &self.red) {
            (Some(b), Some(r)) => 0.5 * (b.line.amplitude + r.line.amplitude),
            _ => self.full.line.amplitude,
        }
    }

    /// `detuning_hz,r_abs_per_s,sigma_per_s` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detuning_hz,r_abs_per_s,sigma_per_s\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.detuning, p.r_abs, p.sigma));
        }
        s
    }
}

/// Absorption rate measured at one OPO detuning.
pub fn scan_point(cfg: &ScanConfig, detuning: f64, index: u64) -> Result<ScanPoint> {
    let ion = cfg.ion.calibrate(&cfg.reference_comb)?.with_detuning(detuning);
    let seq = cfg.sequence;
    let duration = cfg.cycles_per_point as Picos * seq.cycle_ps();
    let seed = cfg.seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut exp = IonExperiment::new(seq, ion, seed, true)?;
    let sampler = ModeSampler::new(&cfg.comb, 0);
    // Photons already thinned by the peak absorption probability.
    let rate = cfg.photon_rate * ion.p_peak / PS_PER_SECOND;
    let mut rng = rng::stream(seed, "scan-photons", 0);
    let mut t = 0.0;
    let mut batch = Vec::with_capacity(4096);
    if rate > 0.0 {
        loop {
            t += rng::exp1(&mut rng) / rate;
            if t >= duration as f64 {
                break;
            }
            batch.push(PhotonEvent {
                time: t as Picos,
                detuning: sampler.sample(&mut rng).1,
                mode_index: 0,
                origin: Origin::PairSignal,
            });
            if batch.len() == batch.capacity() {
                exp.feed(&batch)?;
                batch.clear();
            }
        }
    }
    exp.feed(&batch)?;
    let (records, _) = exp.finish(duration);
    let delays: Vec<Picos> = records
        .iter()
        .filter(|r| r.cause != JumpCause::None)
        .map(|r| r.delay_since_prep)
        .collect();
    let censored = records.len() as u64 - delays.len() as u64;
    let est = bayesian_lifetime(&delays, censored, seq.exposure_ps(), None)?;
    let b = cfg.ion.branching_to_ground;
    let (r, _) = absorption_rate_with_branching(est.tau_eff, cfg.ion.tau_sp, b)?;
    Ok(ScanPoint {
        detuning,
        r_abs: r,
        sigma: absorption_rate_sigma(est.tau_eff, est.sigma(), b).max(1e-9),
        n_jumps: est.n_jumps,
        n_censored: est.n_censored,
    })
}

/// Fits a Lorentzian with zero offset to scan points. Frequencies are
/// handled in MHz internally.
pub fn fit_line(points: &[ScanPoint]) -> Result<HalfFit> {
    if points.len() < 4 {
        return Err(Error::analysis("too few scan points for a line fit"));
    }
    if points.iter().all(|p| p.r_abs <= 0.0) {
        return Err(Error::DegenerateFit("all absorption rates are zero".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.detuning * 1e-6).collect();
    let y: Vec<f64> = points.iter().map(|p| p.r_abs).collect();
    let s: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let imax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
    let half = y[imax] / 2.0;
    let above: Vec<f64> = x.iter().zip(&y).filter(|(_, &v)| v >= half).map(|(&x, _)| x).collect();
    let span = above.iter().cloned().fold(f64::MIN, f64::max) - above.iter().cloned().fold(f64::MAX, f64::min);
    let w0 = if span > 0.0 { span } else { 30.0 };
    let model = |x: f64, p: &[f64]| models::lorentzian_line(x, &[p[0], p[1], p[2], 0.0]);
    let fit = nlls_fit(model, &["center", "fwhm", "amplitude"], &[x[imax], w0, y[imax]], &x, &y, Some(&s))?;
    let line = LorentzianLine {
        center: fit.parameters[0] * 1e6,
        fwhm: fit.parameters[1].abs() * 1e6,
        amplitude: fit.parameters[2],
        offset: 0.0,
    };
    Ok(HalfFit {
        line,
        fwhm_err: fit.standard_errors[1] * 1e6,
        amplitude_err: fit.standard_errors[2],
        fit,
    })
}

/// Measures the absorption rate at every detuning and fits the line.
/// Blue half: detunings from one step below zero upwards; red half: the
/// mirror image.
pub fn spectroscopy_scan(cfg: &ScanConfig, detunings: &[f64]) -> Result<ScanResult> {
    if detunings.len() < 7 {
        return Err(Error::input("a scan needs at least 7 detunings"));
    }
    let points = crate::par::map_slice(detunings, |i, &d| scan_point(cfg, d, i as u64))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let full = fit_line(&points)?;
    let (blue, red) = if cfg.split_halves {
        let mut sorted: Vec<f64> = detunings.to_vec();
        sorted.sort_by(f64::total_cmp);
        let step = sorted
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|d| *d > 0.0)
            .fold(f64::MAX, f64::min);
        let tol = 1e-9 * step;
        let b: Vec<ScanPoint> = points.iter().filter(|p| p.detuning >= -step - tol).copied().collect();
        let r: Vec<ScanPoint> = points.iter().filter(|p| p.detuning <= step + tol).copied().collect();
        (Some(fit_line(&b)?), Some(fit_line(&r)?))
    } else {
        (None, None)
    };
    Ok(ScanResult {
        points,
        full,
        blue,
        red,
    })
}
