//! Photon-pair and background generation.
//!
//! Idler photons leave the cavity immediately; their emission times form a
//! homogeneous Poisson process. Each signal partner is stored for a
//! geometric number of cavity round trips before it leaks out. Frequencies
//! follow the comb: a mode drawn from the phase-matching envelope, a
//! Lorentzian offset within the mode, and a Lorentzian lock jitter shared by
//! both photons of the pair.
//!
//! Generation is cut into fixed shards of simulated time, each with its own
//! random stream, so the output is the same whether shards are produced in
//! one call, streamed, or run on several threads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Origin, PhotonEvent, Picos, SourceConfig, SpectralCombModel, PS_PER_SECOND};
use crate::rng::{self, RngStream};

/// Length of one generation shard (0.1 s).
pub const SHARD_PS: Picos = 100_000_000_000;

/// Jitter offsets are truncated at this many FWHM.
const JITTER_TRUNCATION: f64 = 50.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairEventBatch {
    pub signal_events: Vec<PhotonEvent>,
    pub idler_events: Vec<PhotonEvent>,
    /// `(signal index, idler index)` of every pair with both photons present.
    pub pair_links: Vec<(u32, u32)>,
}

/// Draws `(mode index, detuning)` from the comb.
#[derive(Debug, Clone)]
pub struct ModeSampler {
    cdf: Vec<f64>,
    max_mode: i32,
    fsr: f64,
    mode_fwhm: f64,
    jitter_fwhm: f64,
    center_offset: f64,
}

impl ModeSampler {
    pub fn new(comb: &SpectralCombModel, max_mode: u32) -> Self {
        let m = max_mode as i32;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (-m..=m)
            .map(|k| {
                acc += comb.envelope(k as f64 * comb.fsr);
                acc
            })
            .collect();
        for c in &mut cdf {
            *c /= acc;
        }
        ModeSampler {
            cdf,
            max_mode: m,
            fsr: comb.fsr,
            mode_fwhm: comb.mode_fwhm,
            jitter_fwhm: comb.jitter_fwhm,
            center_offset: comb.center_offset,
        }
    }

    pub fn for_source(cfg: &SourceConfig) -> Self {
        ModeSampler::new(&cfg.comb, cfg.max_mode())
    }

    #[inline]
    pub fn sample_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> i32 {
        if self.max_mode == 0 {
            return 0;
        }
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        i as i32 - self.max_mode
    }

    /// Mode index and signal-frame detuning (Hz) of one photon, without the
    /// lock jitter.
    #[inline]
    pub fn sample_in_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> (i32, f64) {
        let m = self.sample_mode(rng);
        let within = rng::truncated_cauchy(rng, self.mode_fwhm, 0.5 * self.fsr);
        (m, m as f64 * self.fsr + within + self.center_offset)
    }

    #[inline]
    pub fn sample_jitter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng::truncated_cauchy(rng, self.jitter_fwhm, JITTER_TRUNCATION * self.jitter_fwhm)
    }

    /// Mode index and detuning including lock jitter.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (i32, f64) {
        let (m, d) = self.sample_in_mode(rng);
        (m, d + self.sample_jitter(rng))
    }
}

/// Draws a signal photon's storage delay: a whole number of round trips.
pub fn sample_signal_delay<R: Rng + ?Sized>(comb: &SpectralCombModel, rng: &mut R) -> Picos {
    let k = rng::geometric(rng, 1.0 - comb.round_trip_survival());
    (k as f64 * comb.round_trip_time).round() as Picos
}

/// Draws a comb mode and detuning using the default mode range.
pub fn sample_mode_frequency<R: Rng + ?Sized>(comb: &SpectralCombModel, rng: &mut R) -> (i32, f64) {
    ModeSampler::new(comb, comb.default_max_mode()).sample(rng)
}

/// Survival probabilities applied to each arm at generation time.
///
/// Bernoulli thinning commutes with everything downstream, so spectrally
/// flat losses can be folded in here; pairs where neither photon survives
/// are never materialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmKeep {
    pub signal: f64,
    pub idler: f64,
}

impl ArmKeep {
    pub const ALL: ArmKeep = ArmKeep {
        signal: 1.0,
        idler: 1.0,
    };

    pub fn new(signal: f64, idler: f64) -> Result<Self> {
        for p in [signal, idler] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::input(format!("survival probability {p} outside [0, 1]")));
            }
        }
        Ok(ArmKeep { signal, idler })
    }
}

/// Generates the pairs emitted (idler time) in shard `shard`, i.e. in
/// `[shard·SHARD_PS, min((shard+1)·SHARD_PS, end))`, keeping each photon
/// with the given probability. Signals may fall after the shard end.
pub fn generate_pair_shard(
    cfg: &SourceConfig,
    sampler: &ModeSampler,
    shard: u64,
    end: Picos,
    keep: ArmKeep,
) -> PairEventBatch {
    let t0 = shard as Picos * SHARD_PS;
    let t1 = (t0 + SHARD_PS).min(end);
    let mut out = PairEventBatch::default();
    let (a, b) = (keep.signal, keep.idler);
    let any = a + b - a * b;
    let rate = cfg.pair_rate * any / PS_PER_SECOND;
    if rate <= 0.0 || t1 <= t0 {
        return out;
    }
    let p_both = a * b / any;
    let p_signal_only = a * (1.0 - b) / any;
    let mut rng = rng::stream(cfg.seed, "pairs", shard);
    let span = (t1 - t0) as f64;
    let mut signals: Vec<(PhotonEvent, u32)> = Vec::new();
    let mut t = 0.0;
    loop {
        t += rng::exp1(&mut rng) / rate;
        if t >= span {
            break;
        }
        let emitted = t0 + t as Picos;
        let (mode, detuning) = sampler.sample(&mut rng);
        let u: f64 = rng.random();
        let (has_signal, has_idler) = if u < p_both {
            (true, true)
        } else if u < p_both + p_signal_only {
            (true, false)
        } else {
            (false, true)
        };
        let idler_index = out.idler_events.len() as u32;
        if has_signal {
            let delay = sample_signal_delay(&cfg.comb, &mut rng);
            let link = if has_idler { idler_index } else { u32::MAX };
            signals.push((
                PhotonEvent {
                    time: emitted + delay,
                    detuning,
                    mode_index: mode,
                    origin: Origin::PairSignal,
                },
                link,
            ));
        }
        if has_idler {
            out.idler_events.push(PhotonEvent {
                time: emitted,
                detuning: -detuning,
                mode_index: -mode,
                origin: Origin::PairIdler,
            });
        }
    }
    signals.sort_by_key(|(p, _)| p.time);
    out.signal_events.reserve(signals.len());
    for (i, (p, link)) in signals.into_iter().enumerate() {
        out.signal_events.push(p);
        if link != u32::MAX {
            out.pair_links.push((i as u32, link));
        }
    }
    out
}

/// Number of shards covering `[0, duration)`.
pub fn shard_count(duration: Picos) -> u64 {
    ((duration + SHARD_PS - 1) / SHARD_PS).max(0) as u64
}

/// Generates all pairs emitted in `[0, duration)`.
///
/// Signals that leave the cavity after `duration` are kept; detection
/// discards them.
pub fn generate_pair_events(cfg: &SourceConfig, duration: Picos) -> Result<PairEventBatch> {
    if duration <= 0 {
        return Err(Error::input("duration must be positive"));
    }
    cfg.validate()?;
    let expected = cfg.pair_rate * duration as f64 / PS_PER_SECOND;
    if expected > (1u64 << 31) as f64 {
        return Err(Error::Capacity(format!(
            "about {expected:.3e} pairs requested; shard the run into shorter windows"
        )));
    }
    let sampler = ModeSampler::for_source(cfg);
    let shards = crate::par::map_range(shard_count(duration), |s| {
        generate_pair_shard(cfg, &sampler, s, duration, ArmKeep::ALL)
    });
    Ok(concat_batches(shards))
}

/// Joins consecutive shard batches, restoring global order of the signals.
pub fn concat_batches(shards: Vec<PairEventBatch>) -> PairEventBatch {
    let mut out = PairEventBatch::default();
    let mut signals: Vec<(PhotonEvent, u32)> = Vec::new();
    for b in shards {
        let idler_base = out.idler_events.len() as u32;
        let mut partner = vec![u32::MAX; b.signal_events.len()];
        for &(s, i) in &b.pair_links {
            partner[s as usize] = i + idler_base;
        }
        signals.extend(b.signal_events.into_iter().zip(partner));
        out.idler_events.extend(b.idler_events);
    }
    signals.sort_by_key(|(p, _)| p.time);
    for (i, (p, link)) in signals.into_iter().enumerate() {
        out.signal_events.push(p);
        if link != u32::MAX {
            out.pair_links.push((i as u32, link));
        }
    }
    out
}

/// Unpaired photons of one arm emitted in a single shard.
pub fn generate_background_shard(
    rate: f64,
    sampler: &ModeSampler,
    origin: Origin,
    seed: u64,
    shard: u64,
    end: Picos,
) -> Vec<PhotonEvent> {
    let t0 = shard as Picos * SHARD_PS;
    let t1 = (t0 + SHARD_PS).min(end);
    let rate = rate / PS_PER_SECOND;
    let mut out = Vec::new();
    if rate <= 0.0 || t1 <= t0 {
        return out;
    }
    let label = match origin {
        Origin::BackgroundSignalArm | Origin::PairSignal => "background-signal",
        Origin::BackgroundIdlerArm | Origin::PairIdler => "background-idler",
    };
    let sign = match origin {
        Origin::BackgroundIdlerArm | Origin::PairIdler => -1.0,
        _ => 1.0,
    };
    let mut rng = rng::stream(seed, label, shard);
    let span = (t1 - t0) as f64;
    let mut t = 0.0;
    loop {
        t += rng::exp1(&mut rng) / rate;
        if t >= span {
            break;
        }
        let (mode, detuning) = sampler.sample(&mut rng);
        out.push(PhotonEvent {
            time: t0 + t as Picos,
            detuning: sign * detuning,
            mode_index: sign as i32 * mode,
            origin,
        });
    }
    out
}

/// Homogeneous Poisson stream of unpaired photons, spectrally identical to
/// the pair photons of `cfg`.
pub fn generate_background(
    rate: f64,
    duration: Picos,
    origin: Origin,
    cfg: &SourceConfig,
    seed: u64,
) -> Result<Vec<PhotonEvent>> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::input(format!("background rate must be non-negative, got {rate}")));
    }
    if duration <= 0 {
        return Ok(Vec::new());
    }
    let sampler = ModeSampler::for_source(cfg);
    let shards = crate::par::map_range(shard_count(duration), |s| {
        generate_background_shard(rate, &sampler, origin, seed, s, duration)
    });
    Ok(shards.into_iter().flatten().collect())
}

/// Convenience: the random stream used for ad-hoc sampling in tests and
/// demos.
pub fn scratch_rng(seed: u64) -> RngStream {
    rng::stream(seed, "scratch", 0)
}
