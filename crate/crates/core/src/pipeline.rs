//! Streaming simulation of a whole scenario.
//!
//! Time is processed in generation shards. A group of shards is generated
//! and filtered in parallel; the groups then pass in order through the
//! detectors or the ion and into the correlator. Photons of shard `k` can
//! arrive after shard `k+1` has started (cavity and filter storage), so each
//! arm keeps a small reorder buffer and only releases photons older than
//! the start of the next shard.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::qtt::QttWriter;
use crate::io::Scenario;
use crate::ion::{CalibratedIon, CycleLog, IonExperiment, JumpCause, QuantumJumpRecord};
use crate::model::{Origin, PhotonEvent, Picos, TimeTag};
use crate::optics::{apply_filter, DetectorSpec, DetectorStage, FilterSpec};
use crate::rng;
use crate::source::{generate_background_shard, generate_pair_shard, shard_count, ArmKeep, ModeSampler, SHARD_PS};
use crate::tagcorr::{accumulate, Histogram};

/// Correlates start and stop tags that arrive in batches.
///
/// Each side reports a horizon: no later batch contains a time below it.
/// A start is histogrammed once every stop it could pair with is known.
#[derive(Debug, Clone)]
pub struct StreamCorrelator {
    h: Histogram,
    starts: VecDeque<Picos>,
    stops: VecDeque<Picos>,
    start_horizon: Picos,
    stop_horizon: Picos,
}

impl StreamCorrelator {
    pub fn new(bin_width: Picos, window: (Picos, Picos)) -> Result<Self> {
        Ok(StreamCorrelator {
            h: Histogram::for_window(bin_width, window)?,
            starts: VecDeque::new(),
            stops: VecDeque::new(),
            start_horizon: Picos::MIN,
            stop_horizon: Picos::MIN,
        })
    }

    /// Sorted start times, all at or after the previous horizon.
    pub fn push_starts(&mut self, times: &[Picos], horizon: Picos) {
        self.starts.extend(times);
        self.start_horizon = horizon;
        self.process();
    }

    /// Stop times; a stop earlier than one already queued is inserted in
    /// order.
    pub fn push_stops(&mut self, times: &[Picos], horizon: Picos) {
        for &t in times {
            match self.stops.back() {
                Some(&b) if t < b => {
                    let i = self.stops.partition_point(|&x| x <= t);
                    self.stops.insert(i, t);
                }
                _ => self.stops.push_back(t),
            }
        }
        self.stop_horizon = horizon;
        self.process();
    }

    fn process(&mut self) {
        let lo = self.h.start_offset;
        let hi = self.h.end_delay();
        let ready = self
            .starts
            .partition_point(|&s| s.saturating_add(hi) <= self.stop_horizon);
        if ready > 0 {
            let starts = self.starts.make_contiguous();
            let stops = self.stops.make_contiguous();
            accumulate(&mut self.h, &starts[..ready], stops);
            self.h.n_starts += ready as u64;
            self.starts.drain(..ready);
        }
        let earliest = self.starts.front().copied().unwrap_or(Picos::MAX).min(self.start_horizon);
        let floor = earliest.saturating_add(lo);
        let drop = self.stops.partition_point(|&t| t < floor);
        self.stops.drain(..drop);
    }

    pub fn finish(mut self, total_time: Picos) -> Histogram {
        self.start_horizon = Picos::MAX;
        self.stop_horizon = Picos::MAX;
        self.process();
        self.h.total_time_ps = total_time;
        self.h
    }
}

#[derive(Debug, Clone)]
enum ArmEnd {
    Detector { name: String, stage: DetectorStage },
    Ion(Box<IonExperiment>),
}

struct Arm {
    label: &'static str,
    keep: f64,
    filters: Vec<FilterSpec>,
    end: ArmEnd,
    buffer: Vec<PhotonEvent>,
    records: Vec<QuantumJumpRecord>,
    arrivals: u64,
    detected: u64,
    writer: Option<QttWriter<std::io::BufWriter<std::fs::File>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IonOutput {
    pub ion: CalibratedIon,
    pub records: Vec<QuantumJumpRecord>,
    pub log: CycleLog,
}

impl IonOutput {
    pub fn jump_times(&self) -> Vec<Picos> {
        jump_times(&self.records)
    }
}

fn jump_times(records: &[QuantumJumpRecord]) -> Vec<Picos> {
    records
        .iter()
        .filter(|r| r.cause != JumpCause::None)
        .map(|r| r.jump_detection_time)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub duration: Picos,
    /// Photons that reached the end of each arm (after fused thinning).
    pub signal_arrivals: u64,
    pub idler_arrivals: u64,
    /// Detected tags per detector name.
    pub counts: BTreeMap<String, u64>,
    /// Idler-start, signal-stop histogram; stops are jumps when the signal
    /// arm ends at the ion.
    pub histogram: Option<Histogram>,
    pub ion: Option<IonOutput>,
    /// Tag files written, by detector name.
    pub tag_files: BTreeMap<String, String>,
}

impl SimulationOutput {
    pub fn rate(&self, detector: &str) -> f64 {
        self.counts.get(detector).copied().unwrap_or(0) as f64 / (self.duration as f64 * 1e-12)
    }
}

/// Name of the tag file written for `detector`.
pub fn tag_file_name(detector: &str) -> String {
    format!("tags_{detector}.qtt")
}

fn build_arm(
    s: &Scenario,
    label: &'static str,
    cfg: &crate::io::ArmConfig,
    ion: Option<CalibratedIon>,
    tag_dir: Option<&Path>,
) -> Result<Arm> {
    let flat = cfg.flat_transmission();
    let (keep, end, writer) = match (&cfg.detector, ion) {
        (Some(name), _) => {
            let d = &s.detectors[name];
            let spec: DetectorSpec = d.spec;
            let writer = match tag_dir {
                Some(dir) => Some(QttWriter::create(&dir.join(tag_file_name(name)), s.n_channels())?),
                None => None,
            };
            (
                flat * spec.efficiency,
                ArmEnd::Detector {
                    name: name.clone(),
                    stage: DetectorStage::new(spec, d.channel, false),
                },
                writer,
            )
        }
        (None, Some(ion)) => {
            let seq = s.ion.as_ref().expect("validated").sequence;
            (
                flat * ion.p_peak,
                ArmEnd::Ion(Box::new(IonExperiment::new(seq, ion, s.seed, true)?)),
                None,
            )
        }
        (None, None) => return Err(Error::input(format!("{label} arm has no end"))),
    };
    Ok(Arm {
        label,
        keep,
        filters: cfg.filters.iter().map(|f| f.unit_peak()).collect(),
        end,
        buffer: Vec::new(),
        records: Vec::new(),
        arrivals: 0,
        detected: 0,
        writer,
    })
}

/// Pairs and background of one shard after fused thinning and filters.
fn produce(
    s: &Scenario,
    sampler: &ModeSampler,
    keep: ArmKeep,
    filters: (&[FilterSpec], &[FilterSpec]),
    shard: u64,
    end: Picos,
) -> (Vec<PhotonEvent>, Vec<PhotonEvent>) {
    let mut src = s.source.clone();
    src.seed = s.seed;
    let pairs = generate_pair_shard(&src, sampler, shard, end, keep);
    let mut sig = pairs.signal_events;
    let mut idl = pairs.idler_events;
    let b1 = src.background_signal_rate * keep.signal;
    let b2 = src.background_idler_rate * keep.idler;
    sig.extend(generate_background_shard(b1, sampler, Origin::BackgroundSignalArm, s.seed, shard, end));
    idl.extend(generate_background_shard(b2, sampler, Origin::BackgroundIdlerArm, s.seed, shard, end));
    sig.sort_by_key(|p| p.time);
    idl.sort_by_key(|p| p.time);
    let mut out = [sig, idl];
    for (k, (events, fs)) in out.iter_mut().zip([filters.0, filters.1]).enumerate() {
        if fs.is_empty() {
            continue;
        }
        let mut r = rng::stream(s.seed, ["filter-signal", "filter-idler"][k], shard);
        for f in fs {
            *events = apply_filter(events, f, &mut r);
        }
    }
    let [sig, idl] = out;
    (sig, idl)
}

/// Runs the scenario's photon streams through detectors and ion. Tag files
/// are written to `tag_dir` when given.
pub fn simulate(s: &Scenario, tag_dir: Option<&Path>) -> Result<SimulationOutput> {
    s.validate()?;
    let duration = s.duration_ps();
    let ion = match &s.ion {
        Some(cfg) if s.signal_to_ion() => {
            let reference = cfg.reference_comb.unwrap_or(s.source.comb);
            Some(cfg.params.calibrate(&reference)?)
        }
        _ => None,
    };
    let mut signal = build_arm(s, "signal", &s.signal, ion, tag_dir)?;
    let mut idler = build_arm(s, "idler", &s.idler, None, tag_dir)?;
    let keep = ArmKeep::new(signal.keep, idler.keep)?;
    let sampler = ModeSampler::for_source(&s.source);
    let mut corr = match s.analysis.correlation() {
        Some((bw, w)) => Some(StreamCorrelator::new(bw, w)?),
        None => None,
    };

    let n = shard_count(duration);
    let group = (crate::par::width() as u64).max(1);
    let (fs, fi) = (signal.filters.clone(), idler.filters.clone());
    let mut first = 0;
    while first < n {
        let count = group.min(n - first);
        let batches = crate::par::map_range(count, |i| produce(s, &sampler, keep, (&fs, &fi), first + i, duration));
        for (i, (sig, idl)) in batches.into_iter().enumerate() {
            let shard = first + i as u64;
            let t0 = shard as Picos * SHARD_PS;
            let last = shard + 1 == n;
            let t1 = if last { duration } else { t0 + SHARD_PS };
            let mut stop_tags = Vec::new();
            let mut start_tags = Vec::new();
            let stop_h = advance(&mut signal, sig, s.seed, shard, t0, t1, last, duration, &mut stop_tags)?;
            let start_h = advance(&mut idler, idl, s.seed, shard, t0, t1, last, duration, &mut start_tags)?;
            if let Some(c) = corr.as_mut() {
                c.push_stops(&stop_tags, stop_h);
                c.push_starts(&start_tags, start_h);
            }
        }
        first += count;
    }

    let mut counts = BTreeMap::new();
    let mut tag_files = BTreeMap::new();
    let mut ion_out = None;
    for arm in [&mut signal, &mut idler] {
        match &mut arm.end {
            ArmEnd::Detector { name, .. } => {
                counts.insert(name.clone(), arm.detected);
                if let Some(w) = arm.writer.take() {
                    w.finish()?;
                    tag_files.insert(name.clone(), tag_file_name(name));
                }
            }
            ArmEnd::Ion(exp) => {
                let (rest, log) = exp.as_ref().clone().finish(duration);
                let mut records = std::mem::take(&mut arm.records);
                records.extend(rest);
                records.sort_by_key(|r| r.cycle_index);
                ion_out = Some(IonOutput {
                    ion: ion.expect("ion arm implies calibration"),
                    records,
                    log,
                });
            }
        }
    }
    Ok(SimulationOutput {
        duration,
        signal_arrivals: signal.arrivals,
        idler_arrivals: idler.arrivals,
        counts,
        histogram: corr.map(|c| c.finish(duration)),
        ion: ion_out,
        tag_files,
    })
}

/// Passes one shard of an arm's photons to its end. Event times go to
/// `out`; returns the horizon below which `out` is complete.
#[allow(clippy::too_many_arguments)]
fn advance(
    arm: &mut Arm,
    photons: Vec<PhotonEvent>,
    seed: u64,
    shard: u64,
    t0: Picos,
    t1: Picos,
    last: bool,
    duration: Picos,
    out: &mut Vec<Picos>,
) -> Result<Picos> {
    arm.buffer.extend(photons);
    arm.buffer.sort_by_key(|p| p.time);
    let split = if last {
        arm.buffer.partition_point(|p| p.time < duration)
    } else {
        arm.buffer.partition_point(|p| p.time < t1)
    };
    let released: Vec<PhotonEvent> = arm.buffer.drain(..split).collect();
    if last {
        arm.buffer.clear();
    }
    arm.arrivals += released.len() as u64;
    match &mut arm.end {
        ArmEnd::Detector { name, stage } => {
            let mut r = rng::stream(seed, &format!("detector-{}-{name}", arm.label), shard);
            stage.feed(released.iter().map(|p| p.time), t0, t1, &mut r);
            let before = if last { Picos::MAX } else { t1 - stage.lookback() };
            let mut tags: Vec<TimeTag> = Vec::new();
            stage.drain(before, duration, &mut tags);
            arm.detected += tags.len() as u64;
            if let Some(w) = arm.writer.as_mut() {
                w.write_all(&tags)?;
            }
            out.extend(tags.iter().map(|t| t.time));
            Ok(before)
        }
        ArmEnd::Ion(exp) => {
            exp.feed(&released)?;
            if !last {
                exp.advance_to(t1);
            }
            let recs = exp.drain_records();
            out.extend(jump_times(&recs));
            let horizon = if last { Picos::MAX } else { exp.horizon() };
            arm.records.extend(recs);
            Ok(horizon)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{exp1, stream};
    use crate::tagcorr::cross_correlate_times;

    fn poisson(rate: f64, span: Picos, seed: u64) -> Vec<Picos> {
        let mut r = stream(seed, "pipeline-test", 0);
        let mut t = 0.0;
        let mut v = Vec::new();
        loop {
            t += exp1(&mut r) / rate;
            if t >= span as f64 {
                return v;
            }
            v.push(t as Picos);
        }
    }

    #[test]
    fn streaming_matches_batch() {
        let span = 10_000_000;
        let a = poisson(1e-4, span, 1);
        let b = poisson(2e-4, span, 2);
        let window = (-30_000, 50_000);
        let batch = cross_correlate_times(&a, &b, 700, window, span).unwrap();
        let mut c = StreamCorrelator::new(700, window).unwrap();
        let step = 333_333;
        let mut t = 0;
        while t < span {
            let next = t + step;
            let sa: Vec<Picos> = a.iter().copied().filter(|&x| x >= t && x < next).collect();
            let sb: Vec<Picos> = b.iter().copied().filter(|&x| x >= t && x < next).collect();
            c.push_stops(&sb, next);
            c.push_starts(&sa, next);
            t = next;
        }
        assert_eq!(c.finish(span), batch);
    }

    const MINIMAL: &str = r#"
name = "minimal"
seed = 11
duration_s = 0.25

[source]
pair_rate = 2e5
background_idler_rate = 1e4

[signal]
losses = { fiber = 0.5 }
detector = "si"
[idler]
detector = "ingaas"

[detectors.si]
channel = 0
spec = { efficiency = 0.3, jitter_sigma = 120.0, dark_rate = 100.0, dead_time = 50000.0 }
[detectors.ingaas]
channel = 1
spec = { efficiency = 0.1, jitter_sigma = 120.0, dark_rate = 500.0, dead_time = 50000.0 }

[analysis]
recipe = "correlation"
bin_width_ps = 100
window_ps = [-5000, 100000]
"#;

    #[test]
    fn minimal_run_rates_and_determinism() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let a = simulate(&s, None).unwrap();
        let b = simulate(&s, None).unwrap();
        assert_eq!(a, b);
        // Expected singles: 2e5·0.5·0.3 + dark, (2e5 + 1e4)·0.1 + dark.
        let si = a.rate("si");
        let ig = a.rate("ingaas");
        assert!((si / 30_100.0 - 1.0).abs() < 0.03, "{si}");
        assert!((ig / 21_500.0 - 1.0).abs() < 0.03, "{ig}");
        let h = a.histogram.unwrap();
        assert_eq!(h.n_starts, a.counts["ingaas"]);
        // Coincidences: P·η1·η2·T, nearly all inside the window.
        let expected = 2e5 * 0.15 * 0.1 * 0.25;
        let excess = h.total_counts() as f64 - si * ig * 105e-9 * 0.25;
        assert!((excess / expected - 1.0).abs() < 0.1, "{excess} vs {expected}");
    }

    #[test]
    fn tag_files_written() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = simulate(&s, Some(dir.path())).unwrap();
        let tags = crate::io::read_tags(&dir.path().join(&out.tag_files["si"])).unwrap();
        assert_eq!(tags.len() as u64, out.counts["si"]);
        assert_eq!(tags.n_channels(), 2);
        assert!(tags.tags().iter().all(|t| t.channel == 0));
    }
}
