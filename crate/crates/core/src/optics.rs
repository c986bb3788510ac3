//! Spectral filters, lumped losses and detectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventStream, PhotonEvent, Picos, TimeTag, PS_PER_SECOND};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    SingleLorentzian,
    /// Two identical cavities in series; `fwhm` is the width of the pair.
    CascadedLorentzian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Center frequency, Hz.
    #[serde(default)]
    pub center: f64,
    /// Intensity FWHM of the whole filter, Hz.
    pub fwhm: f64,
    pub peak_transmission: f64,
    /// Mean storage time of transmitted photons, ps (0 = instantaneous).
    #[serde(default)]
    pub temporal_decay: f64,
}

/// Intensity FWHM of two cascaded identical Lorentzians relative to the
/// single-stage FWHM.
fn cascade_narrowing() -> f64 {
    (2f64.sqrt() - 1.0).sqrt()
}

impl FilterSpec {
    /// Fiber-Bragg-grating herald filter: 1.56 GHz Lorentzian, 20 % peak.
    pub fn fbg() -> Self {
        FilterSpec {
            kind: FilterKind::SingleLorentzian,
            center: 0.0,
            fwhm: 1.56e9,
            peak_transmission: 0.2,
            temporal_decay: 0.0,
        }
    }

    /// Cascaded Fabry-Pérot filter of the signal arm: 22 MHz passband and
    /// 7.0 ns storage time. Peak transmission includes fiber coupling.
    pub fn fabry_perot_cascade() -> Self {
        FilterSpec {
            kind: FilterKind::CascadedLorentzian,
            center: 0.0,
            fwhm: 22e6,
            peak_transmission: 0.6 * 0.13,
            temporal_decay: 7_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.fwhm > 0.0) || !self.fwhm.is_finite() {
            problems.push(format!("filter fwhm must be positive (got {})", self.fwhm));
        }
        if !(0.0..=1.0).contains(&self.peak_transmission) {
            problems.push(format!(
                "filter peak_transmission must be in [0, 1] (got {})",
                self.peak_transmission
            ));
        }
        if !(self.temporal_decay >= 0.0) {
            problems.push(format!(
                "filter temporal_decay must be non-negative (got {})",
                self.temporal_decay
            ));
        }
        if !self.center.is_finite() {
            problems.push("filter center must be finite".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// FWHM of one cavity of the filter.
    pub fn stage_fwhm(&self) -> f64 {
        match self.kind {
            FilterKind::SingleLorentzian => self.fwhm,
            FilterKind::CascadedLorentzian => self.fwhm / cascade_narrowing(),
        }
    }

    /// Transmission relative to the peak, in `[0, 1]`.
    #[inline]
    pub fn shape(&self, nu: f64) -> f64 {
        let l = crate::model::lorentzian(nu - self.center, self.stage_fwhm());
        match self.kind {
            FilterKind::SingleLorentzian => l,
            FilterKind::CascadedLorentzian => l * l,
        }
    }

    /// The same filter with its flat peak loss removed.
    pub fn unit_peak(&self) -> Self {
        FilterSpec {
            peak_transmission: 1.0,
            ..*self
        }
    }
}

/// Transmission probability of `f` at frequency `nu`.
pub fn filter_transmission(f: &FilterSpec, nu: f64) -> Result<f64> {
    if !nu.is_finite() {
        return Err(Error::input(format!("non-finite frequency {nu}")));
    }
    Ok(f.peak_transmission * f.shape(nu))
}

/// Passes photons through `f`. Survivors of a storing filter are delayed by
/// an exponential time; output is re-sorted.
pub fn apply_filter<R: Rng + ?Sized>(
    events: &[PhotonEvent],
    f: &FilterSpec,
    rng: &mut R,
) -> Vec<PhotonEvent> {
    let mut out: Vec<PhotonEvent> = events
        .iter()
        .filter_map(|p| {
            let t = f.peak_transmission * f.shape(p.detuning);
            if rng.random::<f64>() >= t {
                return None;
            }
            let mut q = *p;
            if f.temporal_decay > 0.0 {
                q.time += (rng::exp1(rng) * f.temporal_decay).round() as Picos;
            }
            Some(q)
        })
        .collect();
    if f.temporal_decay > 0.0 {
        out.sort_by_key(|p| p.time);
    }
    out
}

/// Independent Bernoulli thinning with survival probability `eta`.
pub fn apply_loss<R: Rng + ?Sized>(
    events: &[PhotonEvent],
    eta: f64,
    rng: &mut R,
) -> Result<Vec<PhotonEvent>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::input(format!("loss factor {eta} outside [0, 1]")));
    }
    if eta == 1.0 {
        return Ok(events.to_vec());
    }
    Ok(events
        .iter()
        .filter(|_| rng.random::<f64>() < eta)
        .copied()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    /// Gaussian timing jitter, ps (standard deviation).
    pub jitter_sigma: f64,
    /// Dark count rate, s⁻¹.
    pub dark_rate: f64,
    /// Non-paralyzable dead time, ps.
    pub dead_time: f64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec::si_apd()
    }
}

impl DetectorSpec {
    pub fn si_apd() -> Self {
        DetectorSpec {
            efficiency: 0.3,
            jitter_sigma: 120.0,
            dark_rate: 100.0,
            dead_time: 50_000.0,
        }
    }

    pub fn ingaas_apd() -> Self {
        DetectorSpec {
            efficiency: 0.1,
            jitter_sigma: 120.0,
            dark_rate: 500.0,
            dead_time: 50_000.0,
        }
    }

    pub fn sspd() -> Self {
        DetectorSpec {
            efficiency: 0.25,
            jitter_sigma: 40.0,
            dark_rate: 100.0,
            dead_time: 50_000.0,
        }
    }

    pub fn ideal() -> Self {
        DetectorSpec {
            efficiency: 1.0,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
            dead_time: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.efficiency) {
            problems.push(format!(
                "detector efficiency must be in [0, 1] (got {})",
                self.efficiency
            ));
        }
        for (name, v) in [
            ("jitter_sigma", self.jitter_sigma),
            ("dark_rate", self.dark_rate),
            ("dead_time", self.dead_time),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                problems.push(format!("detector {name} must be non-negative (got {v})"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Incremental detector: feed photon arrivals window by window, collect
/// time tags in order.
///
/// Detections are held back until no later input can precede them, then
/// dead time is applied in time order.
#[derive(Debug, Clone)]
pub struct DetectorStage {
    spec: DetectorSpec,
    channel: u16,
    efficiency: f64,
    pending: Vec<Picos>,
    last_accepted: Option<Picos>,
}

impl DetectorStage {
    /// `apply_efficiency = false` when the efficiency has already been
    /// folded into upstream thinning.
    pub fn new(spec: DetectorSpec, channel: u16, apply_efficiency: bool) -> Self {
        DetectorStage {
            spec,
            channel,
            efficiency: if apply_efficiency { spec.efficiency } else { 1.0 },
            pending: Vec::new(),
            last_accepted: None,
        }
    }

    /// How far a detection can precede the arrival that caused it.
    pub fn lookback(&self) -> Picos {
        (12.0 * self.spec.jitter_sigma).ceil() as Picos + 1
    }

    /// Adds photon arrivals and the dark counts of `[t0, t1)`.
    pub fn feed<R: Rng + ?Sized>(
        &mut self,
        arrivals: impl IntoIterator<Item = Picos>,
        t0: Picos,
        t1: Picos,
        rng: &mut R,
    ) {
        let sigma = self.spec.jitter_sigma;
        for t in arrivals {
            if self.efficiency < 1.0 && rng.random::<f64>() >= self.efficiency {
                continue;
            }
            let jitter = if sigma > 0.0 {
                (rng::std_normal(rng) * sigma).round() as Picos
            } else {
                0
            };
            self.pending.push(t + jitter);
        }
        let rate = self.spec.dark_rate / PS_PER_SECOND;
        if rate > 0.0 && t1 > t0 {
            let mut t = t0 as f64;
            loop {
                t += rng::exp1(rng) / rate;
                if t >= t1 as f64 {
                    break;
                }
                self.pending.push(t as Picos);
            }
        }
    }

    /// Emits every detection earlier than `before`, restricted to
    /// `[0, duration)`.
    pub fn drain(&mut self, before: Picos, duration: Picos, out: &mut Vec<TimeTag>) {
        self.pending.sort_unstable();
        let n = self.pending.partition_point(|&t| t < before);
        let dead = self.spec.dead_time.round() as Picos;
        for &t in &self.pending[..n] {
            if t < 0 || t >= duration {
                continue;
            }
            if let Some(last) = self.last_accepted {
                if t - last < dead {
                    continue;
                }
            }
            self.last_accepted = Some(t);
            out.push(TimeTag::new(t, self.channel));
        }
        self.pending.drain(..n);
    }
}

/// Detects a sorted photon stream on `channel` over `[0, duration)`.
pub fn detect<R: Rng + ?Sized>(
    events: &[PhotonEvent],
    d: &DetectorSpec,
    duration: Picos,
    channel: u16,
    rng: &mut R,
) -> Result<EventStream> {
    d.validate()?;
    if crate::model::first_unsorted_photons(events).is_some() {
        return Err(Error::input("photon events must be sorted by time"));
    }
    let mut stage = DetectorStage::new(*d, channel, true);
    stage.feed(events.iter().map(|p| p.time), 0, duration, rng);
    let mut tags = Vec::new();
    stage.drain(Picos::MAX, duration, &mut tags);
    EventStream::new(tags, channel + 1, duration)
}

/// Mean transmission of `f` for photons of one comb mode centered at `c`,
/// whose frequency spread is Lorentzian with full width `spread`.
pub fn mode_transmission(f: &FilterSpec, c: f64, spread: f64) -> f64 {
    if spread <= 0.0 {
        return f.peak_transmission * f.shape(c);
    }
    // Substitute x = c + γ·tan θ, which turns the Cauchy weight into dθ/π.
    let g = 0.5 * spread;
    let n = 4000;
    let h = std::f64::consts::PI / n as f64;
    let mut acc = 0.0;
    for i in 1..n {
        let th = -std::f64::consts::FRAC_PI_2 + i as f64 * h;
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f.shape(c + g * th.tan());
    }
    f.peak_transmission * acc * h / 3.0 / std::f64::consts::PI
}

/// Fraction of heralds passed by `f` whose partner is in the resonant mode,
/// for a source sampling modes `-max_mode..=max_mode` of `comb`.
pub fn herald_resonant_fraction(comb: &crate::model::SpectralCombModel, max_mode: u32, f: &FilterSpec) -> f64 {
    let spread = comb.mode_fwhm + comb.jitter_fwhm;
    let m = max_mode as i64;
    let mut total = 0.0;
    let mut resonant = 0.0;
    for k in -m..=m {
        let nu = k as f64 * comb.fsr;
        let v = comb.envelope(nu) * mode_transmission(f, nu + comb.center_offset, spread);
        total += v;
        if k == 0 {
            resonant = v;
        }
    }
    resonant / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{seconds_to_ps, Origin};
    use crate::rng::stream;

    fn poisson_photons(rate: f64, seconds: f64, seed: u64) -> Vec<PhotonEvent> {
        let mut rng = stream(seed, "test-photons", 0);
        let mut t = 0.0;
        let end = seconds * PS_PER_SECOND;
        let mut v = Vec::new();
        loop {
            t += rng::exp1(&mut rng) / rate * PS_PER_SECOND;
            if t >= end {
                break;
            }
            v.push(PhotonEvent {
                time: t as Picos,
                detuning: 0.0,
                mode_index: 0,
                origin: Origin::PairSignal,
            });
        }
        v
    }

    #[test]
    fn transmission_examples() {
        let fbg = FilterSpec::fbg();
        assert_eq!(filter_transmission(&fbg, 0.0).unwrap(), 0.2);
        assert!((filter_transmission(&fbg, 0.78e9).unwrap() - 0.1).abs() < 1e-12);
        let fsr = 1e12 / 939.0;
        let expect = 0.2 * 0.78f64.powi(2) / (0.78f64.powi(2) + (fsr / 1e9_f64).powi(2));
        assert!((filter_transmission(&fbg, fsr).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.0698).abs() < 0.0005);
        assert!(filter_transmission(&fbg, f64::NAN).is_err());
    }

    #[test]
    fn cascade_has_requested_fwhm() {
        let fp = FilterSpec::fabry_perot_cascade();
        let half = filter_transmission(&fp, 11e6).unwrap() / fp.peak_transmission;
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ideal_filter_and_loss_are_identity() {
        let photons = poisson_photons(1e4, 0.1, 1);
        let mut rng = stream(1, "t", 0);
        let ideal = FilterSpec {
            kind: FilterKind::SingleLorentzian,
            center: 0.0,
            fwhm: f64::MAX,
            peak_transmission: 1.0,
            temporal_decay: 0.0,
        };
        assert_eq!(apply_filter(&photons, &ideal, &mut rng), photons);
        assert_eq!(apply_loss(&photons, 1.0, &mut rng).unwrap(), photons);
        assert!(apply_loss(&photons, 1.5, &mut rng).is_err());
        assert!(apply_loss(&photons, -0.1, &mut rng).is_err());
    }

    #[test]
    fn resonant_photons_through_cascade() {
        // Oracle: ∫ p(x) T(x) dx for a Lorentzian photon line of 7.2 MHz
        // truncated at ±fsr/2, by Simpson quadrature in θ = atan(2x/γ).
        let fp = FilterSpec::fabry_perot_cascade();
        let fsr: f64 = 1e12 / 939.0;
        let g: f64 = 7.2e6;
        let th = (fsr / g).atan();
        let n = 20_000;
        let h = 2.0 * th / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let theta = -th + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * fp.shape(0.5 * g * theta.tan());
        }
        let oracle = s * h / 3.0 / (2.0 * th);
        assert!((oracle - 0.7574).abs() < 5e-4, "{oracle}");

        let comb = crate::model::SpectralCombModel {
            jitter_fwhm: 0.0,
            ..Default::default()
        };
        let sampler = crate::source::ModeSampler::new(&comb, 0);
        let mut rng = stream(2, "t", 0);
        let n = 400_000;
        let photons: Vec<PhotonEvent> = (0..n)
            .map(|i| PhotonEvent {
                time: i,
                detuning: sampler.sample(&mut rng).1,
                mode_index: 0,
                origin: Origin::PairSignal,
            })
            .collect();
        let unit = fp.unit_peak();
        let survived = apply_filter(&photons, &unit, &mut rng).len() as f64 / n as f64;
        assert!((survived - oracle).abs() < 0.003, "{survived} vs {oracle}");
    }

    #[test]
    fn storing_filter_adds_exponential_delay() {
        let photons: Vec<PhotonEvent> = (0..200_000)
            .map(|i| PhotonEvent {
                time: i * 1_000_000,
                detuning: 0.0,
                mode_index: 0,
                origin: Origin::PairSignal,
            })
            .collect();
        let f = FilterSpec {
            peak_transmission: 1.0,
            ..FilterSpec::fabry_perot_cascade()
        };
        let mut rng = stream(3, "t", 0);
        let mut out = apply_filter(&photons, &f, &mut rng);
        assert_eq!(out.len(), photons.len());
        assert!(out.windows(2).all(|w| w[0].time <= w[1].time));
        out.sort_by_key(|p| p.time);
        let mean_delay = out
            .iter()
            .map(|p| (p.time % 1_000_000) as f64)
            .sum::<f64>()
            / out.len() as f64;
        assert!((mean_delay - 7000.0).abs() < 60.0, "{mean_delay}");
    }

    #[test]
    fn loss_composition_matches_product() {
        let photons = poisson_photons(1e6, 1.0, 4);
        let n = photons.len() as f64;
        let mut rng = stream(4, "t", 0);
        let twice = apply_loss(
            &apply_loss(&photons, 0.6, &mut rng).unwrap(),
            0.5,
            &mut rng,
        )
        .unwrap()
        .len() as f64;
        let once = apply_loss(&photons, 0.3, &mut rng).unwrap().len() as f64;
        let sigma = (n * 0.3 * 0.7).sqrt();
        assert!((twice - 0.3 * n).abs() < 3.0 * sigma);
        assert!((once - 0.3 * n).abs() < 3.0 * sigma);
        assert!((twice - once).abs() < 3.0 * 2f64.sqrt() * sigma);
    }

    #[test]
    fn thinned_poisson_rate() {
        let photons = poisson_photons(2.52e6, 0.4, 5);
        let mut rng = stream(5, "t", 0);
        let kept = apply_loss(&photons, 0.27 * 0.5, &mut rng).unwrap();
        let rate = kept.len() as f64 / 0.4;
        assert!((rate - 3.40e5).abs() < 3.0 * (3.4e5f64 / 0.4).sqrt() + 200.0, "{rate}");
        // Inter-arrival CV of a Poisson process is 1.
        let gaps: Vec<f64> = kept.windows(2).map(|w| (w[1].time - w[0].time) as f64).collect();
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64;
        assert!((v.sqrt() / m - 1.0).abs() < 0.01);
    }

    #[test]
    fn ideal_detector_keeps_times() {
        let photons = poisson_photons(1e5, 0.05, 6);
        let mut rng = stream(6, "t", 0);
        let s = detect(&photons, &DetectorSpec::ideal(), seconds_to_ps(0.05), 0, &mut rng).unwrap();
        let times: Vec<Picos> = photons.iter().map(|p| p.time).collect();
        assert_eq!(s.channel_times(0), times);
    }

    #[test]
    fn sspd_detected_rate() {
        let photons = poisson_photons(5.44e5, 0.5, 7);
        let mut rng = stream(7, "t", 0);
        let d = DetectorSpec {
            dark_rate: 0.0,
            dead_time: 0.0,
            ..DetectorSpec::sspd()
        };
        let s = detect(&photons, &d, seconds_to_ps(0.5), 1, &mut rng).unwrap();
        let rate = s.len() as f64 / 0.5;
        assert!((rate - 1.36e5).abs() < 3.0 * (1.36e5f64 / 0.5).sqrt(), "{rate}");
    }

    #[test]
    fn dead_time_never_adds_counts() {
        let photons = poisson_photons(2e6, 0.02, 8);
        let mut rng = stream(8, "t", 0);
        let d = DetectorSpec {
            efficiency: 1.0,
            jitter_sigma: 0.0,
            dark_rate: 0.0,
            dead_time: 200_000.0,
        };
        let s = detect(&photons, &d, seconds_to_ps(0.02), 0, &mut rng).unwrap();
        assert!(s.len() < photons.len());
        let times: std::collections::HashSet<Picos> = photons.iter().map(|p| p.time).collect();
        assert!(s.tags().iter().all(|t| times.contains(&t.time)));
        assert!(s.tags().windows(2).all(|w| w[1].time - w[0].time >= 200_000));
    }

    #[test]
    fn dark_counts_only() {
        let mut rng = stream(9, "t", 0);
        let d = DetectorSpec {
            dark_rate: 1e4,
            dead_time: 0.0,
            ..DetectorSpec::ideal()
        };
        let s = detect(&[], &d, seconds_to_ps(10.0), 0, &mut rng).unwrap();
        assert!((s.len() as f64 - 1e5).abs() < 3.0 * 1e5f64.sqrt());
    }

    #[test]
    fn flat_ensemble_survival_over_one_fsr() {
        let fsr = 1e12 / 939.0;
        let f = FilterSpec {
            kind: FilterKind::SingleLorentzian,
            center: 0.0,
            fwhm: 22e6,
            peak_transmission: 0.8,
            temporal_decay: 0.0,
        };
        let mut rng = stream(10, "t", 0);
        let n = 1_000_000;
        let photons: Vec<PhotonEvent> = (0..n)
            .map(|i| PhotonEvent {
                time: i,
                detuning: (rng.random::<f64>() - 0.5) * fsr,
                mode_index: 0,
                origin: Origin::PairSignal,
            })
            .collect();
        let mean = apply_filter(&photons, &f, &mut rng).len() as f64 / n as f64;
        let expect = std::f64::consts::FRAC_PI_2 * f.fwhm * f.peak_transmission / fsr;
        assert!((mean / expect - 1.0).abs() < 0.02, "{mean} vs {expect}");
    }

    #[test]
    fn unsorted_input_rejected_by_detect() {
        let p = |t| PhotonEvent {
            time: t,
            detuning: 0.0,
            mode_index: 0,
            origin: Origin::PairIdler,
        };
        let mut rng = stream(11, "t", 0);
        assert!(detect(&[p(5), p(2)], &DetectorSpec::ideal(), 10, 0, &mut rng).is_err());
    }
}
