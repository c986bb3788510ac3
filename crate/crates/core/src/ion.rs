//! Trapped-ion sequence: preparation, exposure to the photon stream,
//! absorption, spontaneous decay and quantum-jump detection.
//!
//! The timeline is tiled by fixed cycles of preparation, exposure and a dead
//! overhead. During exposure a prepared ion absorbs each photon with a
//! detuning-dependent probability; an absorption ends in the ground state
//! (a quantum jump) with the branching probability, otherwise the ion falls
//! back and stays sensitive. A jump makes the ion blind until the next cycle.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lorentzian, PhotonEvent, Picos, SpectralCombModel, PS_PER_SECOND};
use crate::rng::{self, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonParams {
    /// D5/2 lifetime, s.
    pub tau_sp: f64,
    pub branching_to_ground: f64,
    /// Natural linewidth of the transition, Hz.
    pub natural_fwhm: f64,
    /// Absorption probability per resonant-mode photon, averaged over the
    /// photon spectrum at zero detuning.
    pub p_abs_resonant: f64,
    /// Offset of the OPO mode 0 from the ion line, Hz.
    pub detuning: f64,
    /// Fluorescence onset rate, s⁻¹; its inverse is the mean detection
    /// latency of a jump.
    pub fluorescence_detection_rate: f64,
}

impl Default for IonParams {
    fn default() -> Self {
        IonParams {
            tau_sp: 1.17,
            branching_to_ground: 0.94,
            natural_fwhm: 23e6,
            p_abs_resonant: 2e-3,
            detuning: 0.0,
            fluorescence_detection_rate: 2.33e5,
        }
    }
}

impl IonParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.tau_sp > 0.0) || !self.tau_sp.is_finite() {
            problems.push(format!("ion tau_sp must be positive (got {})", self.tau_sp));
        }
        if !(self.branching_to_ground > 0.0 && self.branching_to_ground <= 1.0) {
            problems.push(format!(
                "ion branching_to_ground must be in (0, 1] (got {})",
                self.branching_to_ground
            ));
        }
        if !(self.natural_fwhm > 0.0) || !self.natural_fwhm.is_finite() {
            problems.push(format!("ion natural_fwhm must be positive (got {})", self.natural_fwhm));
        }
        if !(self.p_abs_resonant >= 0.0 && self.p_abs_resonant < 0.1) {
            problems.push(format!(
                "ion p_abs_resonant must be in [0, 0.1) (got {})",
                self.p_abs_resonant
            ));
        }
        if !self.detuning.is_finite() {
            problems.push("ion detuning must be finite".into());
        }
        if !(self.fluorescence_detection_rate > 0.0) {
            problems.push(format!(
                "ion fluorescence_detection_rate must be positive (got {})",
                self.fluorescence_detection_rate
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Ion with its peak absorption probability fixed so that photons of the
    /// `reference` comb's mode 0 are absorbed with `p_abs_resonant` on
    /// average at zero detuning.
    pub fn calibrate(&self, reference: &SpectralCombModel) -> Result<CalibratedIon> {
        self.validate()?;
        let mean_shape = mean_line_overlap(reference, self.natural_fwhm, 0.0);
        let p_peak = self.p_abs_resonant / mean_shape;
        if p_peak > 1.0 {
            return Err(Error::input(format!(
                "p_abs_resonant {} needs a peak absorption probability above 1",
                self.p_abs_resonant
            )));
        }
        Ok(CalibratedIon {
            params: *self,
            p_peak,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedIon {
    pub params: IonParams,
    /// Absorption probability of a monochromatic photon on line center.
    pub p_peak: f64,
}

impl CalibratedIon {
    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.params.detuning = detuning;
        self
    }
}

/// Absorption probability of a photon at signal-frame detuning `delta`.
pub fn absorption_probability(ion: &CalibratedIon, delta: f64) -> f64 {
    ion.p_peak * lorentzian(delta + ion.params.detuning, ion.params.natural_fwhm)
}

/// Expected FWHM of the absorption line scanned with comb photons.
pub fn expected_line_fwhm(ion: &IonParams, comb: &SpectralCombModel) -> f64 {
    ion.natural_fwhm + comb.mode_fwhm + comb.jitter_fwhm
}

/// Mean of the unit-peak ion line over the mode-0 photon spectrum of
/// `comb` (within-mode Lorentzian cut at ±fsr/2, lock jitter cut at ±50
/// FWHM), with the ion line displaced by `offset`.
///
/// Both photon offsets are uniform in θ = atan(2x/γ); the double integral
/// is done by composite Simpson quadrature in those coordinates.
pub fn mean_line_overlap(comb: &SpectralCombModel, natural_fwhm: f64, offset: f64) -> f64 {
    const N: usize = 1600;
    let axis = |fwhm: f64, limit: f64| -> Vec<(f64, f64)> {
        if fwhm <= 0.0 {
            return vec![(0.0, 1.0)];
        }
        let hw = 0.5 * fwhm;
        let th = (limit / hw).atan();
        let h = 2.0 * th / N as f64;
        (0..=N)
            .map(|i| {
                let w = if i == 0 || i == N {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let theta = -th + i as f64 * h;
                (hw * theta.tan(), w * h / 3.0 / (2.0 * th))
            })
            .collect()
    };
    let a = axis(comb.mode_fwhm, 0.5 * comb.fsr);
    let b = axis(comb.jitter_fwhm, 50.0 * comb.jitter_fwhm);
    let mut s = 0.0;
    for &(xa, wa) in &a {
        let mut inner = 0.0;
        for &(xb, wb) in &b {
            inner += wb * lorentzian(xa + xb + offset, natural_fwhm);
        }
        s += wa * inner;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceParams {
    pub prep_duration_us: f64,
    pub prep_success: f64,
    pub exposure_ms: f64,
    pub dead_overhead_us: f64,
}

impl Default for SequenceParams {
    fn default() -> Self {
        SequenceParams {
            prep_duration_us: 71.0,
            prep_success: 0.9999,
            exposure_ms: 7.0,
            dead_overhead_us: 0.0,
        }
    }
}

impl SequenceParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.prep_duration_us > 0.0) {
            problems.push(format!(
                "sequence prep_duration_us must be positive (got {})",
                self.prep_duration_us
            ));
        }
        if !(0.0..=1.0).contains(&self.prep_success) {
            problems.push(format!(
                "sequence prep_success must be in [0, 1] (got {})",
                self.prep_success
            ));
        }
        if !(self.exposure_ms > 0.0) {
            problems.push(format!("sequence exposure_ms must be positive (got {})", self.exposure_ms));
        }
        if !(self.dead_overhead_us >= 0.0) {
            problems.push(format!(
                "sequence dead_overhead_us must be non-negative (got {})",
                self.dead_overhead_us
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn prep_ps(&self) -> Picos {
        (self.prep_duration_us * 1e6).round() as Picos
    }

    pub fn exposure_ps(&self) -> Picos {
        (self.exposure_ms * 1e9).round() as Picos
    }

    pub fn cycle_ps(&self) -> Picos {
        self.prep_ps() + self.exposure_ps() + (self.dead_overhead_us * 1e6).round() as Picos
    }

    /// Start of the exposure window of `cycle`.
    pub fn exposure_start(&self, cycle: u64) -> Picos {
        cycle as Picos * self.cycle_ps() + self.prep_ps()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpCause {
    Absorption,
    Spontaneous,
    /// No jump during the exposure (censored cycle).
    None,
}

/// Outcome of one successfully prepared cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumJumpRecord {
    pub cycle_index: u64,
    /// Fluorescence onset time; end of exposure for censored cycles.
    pub jump_detection_time: Picos,
    /// `jump_detection_time` minus the start of exposure.
    pub delay_since_prep: Picos,
    pub cause: JumpCause,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleLog {
    pub n_cycles: u64,
    pub n_prep_failed: u64,
    pub n_absorptions: u64,
    pub n_absorption_jumps: u64,
    pub n_spontaneous_jumps: u64,
    pub n_censored: u64,
    /// Photons that reached the ion while it was sensitive.
    pub n_photons_exposed: u64,
}

impl CycleLog {
    pub fn n_jumps(&self) -> u64 {
        self.n_absorption_jumps + self.n_spontaneous_jumps
    }
}

#[derive(Debug, Clone, Copy)]
struct Cycle {
    index: u64,
    exposure_start: Picos,
    exposure_end: Picos,
    end: Picos,
    prepared: bool,
    spontaneous_at: Picos,
    jump: Option<(Picos, JumpCause)>,
}

/// Streaming ion experiment. Feed photons in time order, then call
/// [`IonExperiment::finish`].
#[derive(Debug, Clone)]
pub struct IonExperiment {
    seq: SequenceParams,
    ion: CalibratedIon,
    prethinned: bool,
    base: RngStream,
    rng: RngStream,
    cycle: Cycle,
    last_time: Picos,
    records: Vec<QuantumJumpRecord>,
    log: CycleLog,
}

impl IonExperiment {
    /// With `prethinned`, every incoming photon has already survived a
    /// Bernoulli trial with probability `ion.p_peak`, so only the line shape
    /// remains to be applied.
    pub fn new(seq: SequenceParams, ion: CalibratedIon, seed: u64, prethinned: bool) -> Result<Self> {
        seq.validate()?;
        ion.params.validate()?;
        let base = rng::stream(seed, "ion", 0);
        let mut exp = IonExperiment {
            seq,
            ion,
            prethinned,
            rng: base.clone(),
            base,
            cycle: Cycle {
                index: 0,
                exposure_start: 0,
                exposure_end: 0,
                end: 0,
                prepared: false,
                spontaneous_at: 0,
                jump: None,
            },
            last_time: Picos::MIN,
            records: Vec::new(),
            log: CycleLog::default(),
        };
        exp.open_cycle(0);
        Ok(exp)
    }

    fn open_cycle(&mut self, index: u64) {
        let mut r = self.base.clone();
        r.set_stream(index);
        self.rng = r;
        let start = self.seq.exposure_start(index);
        let prepared = self.rng.random::<f64>() < self.seq.prep_success;
        let tau = self.ion.params.tau_sp * PS_PER_SECOND;
        let spont = start as f64 + rng::exp1(&mut self.rng) * tau;
        self.cycle = Cycle {
            index,
            exposure_start: start,
            exposure_end: start + self.seq.exposure_ps(),
            end: (index as Picos + 1) * self.seq.cycle_ps(),
            prepared,
            spontaneous_at: if spont < i64::MAX as f64 { spont as Picos } else { Picos::MAX },
            jump: None,
        };
    }

    fn close_cycle(&mut self) {
        let c = self.cycle;
        self.log.n_cycles += 1;
        if !c.prepared {
            self.log.n_prep_failed += 1;
        } else {
            let jump = c.jump.or_else(|| {
                (c.spontaneous_at < c.exposure_end).then_some((c.spontaneous_at, JumpCause::Spontaneous))
            });
            let rec = match jump {
                Some((t, cause)) => {
                    match cause {
                        JumpCause::Absorption => self.log.n_absorption_jumps += 1,
                        _ => self.log.n_spontaneous_jumps += 1,
                    }
                    let latency = rng::exp1(&mut self.rng) / self.ion.params.fluorescence_detection_rate
                        * PS_PER_SECOND;
                    let detected = t + latency.round() as Picos;
                    QuantumJumpRecord {
                        cycle_index: c.index,
                        jump_detection_time: detected,
                        delay_since_prep: detected - c.exposure_start,
                        cause,
                    }
                }
                None => {
                    self.log.n_censored += 1;
                    QuantumJumpRecord {
                        cycle_index: c.index,
                        jump_detection_time: c.exposure_end,
                        delay_since_prep: c.exposure_end - c.exposure_start,
                        cause: JumpCause::None,
                    }
                }
            };
            self.records.push(rec);
        }
        self.open_cycle(c.index + 1);
    }

    /// Processes photons arriving at the trap. Successive calls must
    /// continue the time order.
    pub fn feed(&mut self, photons: &[PhotonEvent]) -> Result<()> {
        for p in photons {
            if p.time < self.last_time {
                return Err(Error::input(format!(
                    "photons at the trap are not sorted (time {} after {})",
                    p.time, self.last_time
                )));
            }
            self.last_time = p.time;
            while p.time >= self.cycle.end {
                self.close_cycle();
            }
            let c = &self.cycle;
            if !c.prepared
                || c.jump.is_some()
                || p.time < c.exposure_start
                || p.time >= c.exposure_end
                || p.time >= c.spontaneous_at
            {
                continue;
            }
            self.log.n_photons_exposed += 1;
            let shape = lorentzian(p.detuning + self.ion.params.detuning, self.ion.params.natural_fwhm);
            let prob = if self.prethinned { shape } else { self.ion.p_peak * shape };
            if self.rng.random::<f64>() >= prob {
                continue;
            }
            self.log.n_absorptions += 1;
            if self.rng.random::<f64>() < self.ion.params.branching_to_ground {
                self.cycle.jump = Some((p.time, JumpCause::Absorption));
            }
        }
        Ok(())
    }

    /// Closes every cycle that ends at or before `end`. Later photons must
    /// not precede `end`.
    pub fn advance_to(&mut self, end: Picos) {
        while self.cycle.end <= end {
            self.close_cycle();
        }
        self.last_time = self.last_time.max(end.min(self.cycle.exposure_start));
    }

    /// Jumps of cycles not yet closed are detected at or after this time.
    pub fn horizon(&self) -> Picos {
        self.cycle.exposure_start
    }

    /// Takes the records produced so far.
    pub fn drain_records(&mut self) -> Vec<QuantumJumpRecord> {
        std::mem::take(&mut self.records)
    }

    pub fn log(&self) -> CycleLog {
        self.log
    }

    /// Closes all cycles ending by `duration` and returns the remaining
    /// records and the log. A trailing partial cycle is discarded.
    pub fn finish(mut self, duration: Picos) -> (Vec<QuantumJumpRecord>, CycleLog) {
        self.advance_to(duration);
        (self.records, self.log)
    }
}

/// Runs the sequence against a complete, sorted photon stream over
/// `[0, duration)`.
pub fn run_ion_experiment(
    photons_at_trap: &[PhotonEvent],
    seq: &SequenceParams,
    ion: &CalibratedIon,
    duration: Picos,
    seed: u64,
) -> Result<(Vec<QuantumJumpRecord>, CycleLog)> {
    let mut exp = IonExperiment::new(*seq, *ion, seed, false)?;
    exp.feed(photons_at_trap)?;
    Ok(exp.finish(duration))
}
