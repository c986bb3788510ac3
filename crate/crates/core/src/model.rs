//! Shared domain types: time tags, photon events and the spectral comb of
//! the OPO output.
//!
//! Times are integer picoseconds since run start. Frequencies are `f64` Hz
//! relative to the atomic resonance (signal arm) or to its energy-conjugate
//! (idler arm); absolute optical frequencies never appear.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Picos = i64;

pub const PS_PER_SECOND: f64 = 1e12;

/// Full width at half maximum of `sinc²(x) = (sin πx / πx)²` in units of `x`.
pub const SINC2_FWHM: f64 = 0.885_892_941_378_670_4;

/// Converts seconds to integer picoseconds, rounding to nearest.
pub fn seconds_to_ps(s: f64) -> Picos {
    (s * PS_PER_SECOND).round() as Picos
}

pub fn ps_to_seconds(ps: Picos) -> f64 {
    ps as f64 / PS_PER_SECOND
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub time: Picos,
    pub channel: u16,
}

impl TimeTag {
    pub fn new(time: Picos, channel: u16) -> Self {
        TimeTag { time, channel }
    }
}

/// Time-ordered detection events over `[0, duration)`.
///
/// Channels are numbered `0..n_channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    tags: Vec<TimeTag>,
    n_channels: u16,
    duration: Picos,
}

impl EventStream {
    pub fn new(tags: Vec<TimeTag>, n_channels: u16, duration: Picos) -> Result<Self> {
        if duration < 0 {
            return Err(Error::input("stream duration must be non-negative"));
        }
        if let Some(i) = first_unsorted(&tags) {
            return Err(Error::input(format!("tags not sorted at index {i}")));
        }
        if let Some(t) = tags.iter().find(|t| t.time < 0 || t.time >= duration) {
            return Err(Error::input(format!(
                "tag time {} outside [0, {duration})",
                t.time
            )));
        }
        if let Some(t) = tags.iter().find(|t| t.channel >= n_channels) {
            return Err(Error::input(format!(
                "channel {} not declared (n_channels = {n_channels})",
                t.channel
            )));
        }
        Ok(EventStream {
            tags,
            n_channels,
            duration,
        })
    }

    pub fn empty(n_channels: u16, duration: Picos) -> Self {
        EventStream {
            tags: Vec::new(),
            n_channels,
            duration,
        }
    }

    /// Builds a single-channel stream from sorted times.
    pub fn from_times(times: &[Picos], channel: u16, duration: Picos) -> Result<Self> {
        let tags = times.iter().map(|&t| TimeTag::new(t, channel)).collect();
        EventStream::new(tags, channel + 1, duration)
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn n_channels(&self) -> u16 {
        self.n_channels
    }

    pub fn duration(&self) -> Picos {
        self.duration
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Timestamps of one channel, in order.
    pub fn channel_times(&self, channel: u16) -> Vec<Picos> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.time)
            .collect()
    }

    /// Merges two streams into one, keeping time order. Channel sets are
    /// unioned and the longer duration wins.
    pub fn merge(&self, other: &EventStream) -> EventStream {
        let mut tags = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.tags.len() && j < other.tags.len() {
            if other.tags[j].time < self.tags[i].time {
                tags.push(other.tags[j]);
                j += 1;
            } else {
                tags.push(self.tags[i]);
                i += 1;
            }
        }
        tags.extend_from_slice(&self.tags[i..]);
        tags.extend_from_slice(&other.tags[j..]);
        EventStream {
            tags,
            n_channels: self.n_channels.max(other.n_channels),
            duration: self.duration.max(other.duration),
        }
    }
}

pub(crate) fn first_unsorted(tags: &[TimeTag]) -> Option<usize> {
    tags.windows(2).position(|w| w[1].time < w[0].time).map(|i| i + 1)
}

pub(crate) fn first_unsorted_photons(events: &[PhotonEvent]) -> Option<usize> {
    events.windows(2).position(|w| w[1].time < w[0].time).map(|i| i + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    PairSignal,
    PairIdler,
    BackgroundSignalArm,
    BackgroundIdlerArm,
}

/// A photon before detection.
///
/// `time` starts as the emission time and accumulates propagation and
/// storage delays as the photon passes through the optics chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    pub time: Picos,
    pub detuning: f64,
    pub mode_index: i32,
    pub origin: Origin,
}

/// Output spectrum of the OPO: a comb of Lorentzian modes under a sinc²
/// phase-matching envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralCombModel {
    /// Free spectral range, Hz.
    pub fsr: f64,
    /// FWHM of a single comb mode, Hz. Zero means monochromatic modes.
    pub mode_fwhm: f64,
    /// FWHM of the sinc² phase-matching envelope, Hz.
    pub envelope_fwhm: f64,
    /// Cavity round trip, ps.
    pub round_trip_time: f64,
    /// Cavity energy decay time, ps.
    pub cavity_decay_time: f64,
    /// Slow offset of the whole comb, Hz.
    pub center_offset: f64,
    /// FWHM of the Lorentzian frequency jitter of the locked OPO, Hz.
    pub jitter_fwhm: f64,
}

impl Default for SpectralCombModel {
    fn default() -> Self {
        SpectralCombModel::from_round_trip(939.0)
    }
}

impl SpectralCombModel {
    /// Default comb with the FSR derived from the given round-trip time.
    pub fn from_round_trip(round_trip_ps: f64) -> Self {
        SpectralCombModel {
            fsr: PS_PER_SECOND / round_trip_ps,
            mode_fwhm: 7.2e6,
            envelope_fwhm: 275e9,
            round_trip_time: round_trip_ps,
            cavity_decay_time: 22_700.0,
            center_offset: 0.0,
            jitter_fwhm: 4e6,
        }
    }

    pub fn with_fsr(mut self, fsr: f64) -> Self {
        self.fsr = fsr;
        self.round_trip_time = PS_PER_SECOND / fsr;
        self
    }

    pub fn with_round_trip(mut self, round_trip_ps: f64) -> Self {
        self.round_trip_time = round_trip_ps;
        self.fsr = PS_PER_SECOND / round_trip_ps;
        self
    }

    /// Width parameter of the sinc² envelope: `sinc²(ν / scale)`.
    pub fn envelope_scale(&self) -> f64 {
        self.envelope_fwhm / SINC2_FWHM
    }

    /// Envelope value at detuning `nu` from the comb center.
    pub fn envelope(&self, nu: f64) -> f64 {
        sinc2(nu / self.envelope_scale())
    }

    /// Largest mode index sampled by default: the fourth zero of the envelope.
    pub fn default_max_mode(&self) -> u32 {
        (4.0 * self.envelope_scale() / self.fsr).floor() as u32
    }

    /// Per-round-trip survival probability of a photon stored in the cavity.
    pub fn round_trip_survival(&self) -> f64 {
        if self.cavity_decay_time <= 0.0 {
            0.0
        } else {
            (-self.round_trip_time / self.cavity_decay_time).exp()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("fsr", self.fsr),
            ("envelope_fwhm", self.envelope_fwhm),
            ("round_trip_time", self.round_trip_time),
        ] {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("comb.{name} must be positive and finite (got {v})"));
            }
        }
        for (name, v) in [
            ("mode_fwhm", self.mode_fwhm),
            ("cavity_decay_time", self.cavity_decay_time),
            ("jitter_fwhm", self.jitter_fwhm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("comb.{name} must be non-negative and finite (got {v})"));
            }
        }
        if !self.center_offset.is_finite() {
            problems.push("comb.center_offset must be finite".into());
        }
        if problems.is_empty() {
            let dual = self.fsr * self.round_trip_time / PS_PER_SECOND;
            if (dual - 1.0).abs() >= 1e-6 {
                problems.push(format!(
                    "comb.fsr and comb.round_trip_time disagree (fsr*rtt = {dual})"
                ));
            }
            if self.mode_fwhm > 0.0 {
                let q = self.mode_fwhm * 2.0 * PI * self.cavity_decay_time / PS_PER_SECOND;
                if (q - 1.0).abs() >= 0.15 {
                    problems.push(format!(
                        "comb.mode_fwhm and comb.cavity_decay_time disagree (2π·Γ·τ = {q:.3})"
                    ));
                }
            }
            if self.envelope_fwhm < 10.0 * self.fsr || self.fsr < 10.0 * self.mode_fwhm {
                problems.push("comb requires envelope_fwhm ≫ fsr ≫ mode_fwhm".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// `(sin πx / πx)²`.
pub fn sinc2(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0
    } else {
        let s = (PI * x).sin() / (PI * x);
        s * s
    }
}

/// Unit-peak Lorentzian of full width `fwhm` evaluated at offset `x`.
pub fn lorentzian(x: f64, fwhm: f64) -> f64 {
    if fwhm <= 0.0 {
        return if x == 0.0 { 1.0 } else { 0.0 };
    }
    let hw2 = 0.25 * fwhm * fwhm;
    hw2 / (hw2 + x * x)
}

/// Spectral density of the comb at detuning `nu`, normalized so the peak of
/// the resonant mode is 1 when `center_offset` is zero.
///
/// Each point is attributed to its nearest comb mode, so the density is
/// periodic with period `fsr` apart from the slowly varying envelope.
pub fn comb_spectral_density(model: &SpectralCombModel, nu: f64) -> Result<f64> {
    if !nu.is_finite() {
        return Err(Error::input(format!("non-finite frequency {nu}")));
    }
    let x = nu - model.center_offset;
    let m = (x / model.fsr).round();
    let r = x - m * model.fsr;
    Ok(model.envelope(x) * lorentzian(r, model.mode_fwhm))
}

/// Linewidth (FWHM, Hz) of a cavity with energy decay time `tau_ps`.
pub fn linewidth_from_decay(tau_ps: f64) -> Result<f64> {
    if !(tau_ps > 0.0) || !tau_ps.is_finite() {
        return Err(Error::input(format!("decay time must be positive, got {tau_ps}")));
    }
    Ok(PS_PER_SECOND / (2.0 * PI * tau_ps))
}

/// Configuration of the photon-pair source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Pair generation rate over all sampled comb modes, s⁻¹.
    pub pair_rate: f64,
    /// Unpaired photon rate in the signal arm, s⁻¹.
    pub background_signal_rate: f64,
    /// Unpaired photon rate in the idler arm, s⁻¹.
    pub background_idler_rate: f64,
    /// Pump power, mW (bookkeeping only).
    pub pump_power_mw: f64,
    pub comb: SpectralCombModel,
    pub seed: u64,
    /// Largest |mode index| sampled; `None` samples the envelope out to its
    /// fourth zero. `Some(0)` restricts the source to the resonant mode.
    pub max_mode: Option<u32>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            pair_rate: 2.52e6,
            background_signal_rate: 0.0,
            background_idler_rate: 0.0,
            pump_power_mw: 300.0,
            comb: SpectralCombModel::default(),
            seed: 0,
            max_mode: None,
        }
    }
}

impl SourceConfig {
    pub fn max_mode(&self) -> u32 {
        self.max_mode.unwrap_or_else(|| self.comb.default_max_mode())
    }

    /// Envelope weight of each sampled mode index `-M..=M`.
    pub fn mode_weights(&self) -> Vec<f64> {
        let m = self.max_mode() as i64;
        (-m..=m)
            .map(|k| self.comb.envelope(k as f64 * self.comb.fsr))
            .collect()
    }

    /// Rate of pairs whose signal photon is in the resonant mode.
    pub fn resonant_pair_rate(&self) -> f64 {
        let w = self.mode_weights();
        let total: f64 = w.iter().sum();
        self.pair_rate * w[w.len() / 2] / total
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("pair_rate", self.pair_rate),
            ("background_signal_rate", self.background_signal_rate),
            ("background_idler_rate", self.background_idler_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("source.{name} must be a non-negative rate (got {v})"));
            }
        }
        if !(self.pump_power_mw > 0.0) {
            problems.push(format!(
                "source.pump_power_mw must be positive (got {})",
                self.pump_power_mw
            ));
        }
        if let Err(Error::Validation(p)) = self.comb.validate() {
            problems.extend(p);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}
