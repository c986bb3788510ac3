//! Scenario files: the whole experiment in one TOML document.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::budget::BudgetInputs;
use crate::error::{Error, Result};
use crate::ion::{IonParams, SequenceParams};
use crate::model::{seconds_to_ps, Picos, SourceConfig, SpectralCombModel};
use crate::optics::{DetectorSpec, FilterSpec};

/// One arm of the setup, from the source to a detector or the ion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmConfig {
    /// Spectrally flat transmissions, by name.
    pub losses: BTreeMap<String, f64>,
    /// Spectral filters in order.
    pub filters: Vec<FilterSpec>,
    /// Name of the detector ending the arm. The signal arm may instead end
    /// at the ion.
    pub detector: Option<String>,
}

impl ArmConfig {
    /// Product of the flat losses and the filter peak transmissions.
    pub fn flat_transmission(&self) -> f64 {
        self.losses.values().product::<f64>()
            * self.filters.iter().map(|f| f.peak_transmission).product::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub channel: u16,
    #[serde(default)]
    pub spec: DetectorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonConfig {
    pub params: IonParams,
    pub sequence: SequenceParams,
    /// Spectrum against which `params.p_abs_resonant` is defined; the
    /// source comb when absent.
    pub reference_comb: Option<SpectralCombModel>,
}

impl Default for IonConfig {
    fn default() -> Self {
        IonConfig {
            params: IonParams::default(),
            sequence: SequenceParams::default(),
            reference_comb: None,
        }
    }
}

/// What to do with the simulated streams.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Analysis {
    /// Tag files only.
    #[default]
    None,
    /// Idler-start, signal-stop correlation histogram.
    Correlation { bin_width_ps: Picos, window_ps: [Picos; 2] },
    /// Correlation of the unfiltered comb: peak spacing, envelope decay
    /// and peak/valley contrast.
    CombEnvelope { bin_width_ps: Picos, window_ps: [Picos; 2] },
    /// Analytic first-order coherence of the source comb; nothing is
    /// simulated.
    Coherence {
        /// Number of g¹ revival peaks to locate.
        n_peaks: u32,
    },
    /// Correlation of filtered photons with a two-exponential fit.
    FilteredCorrelation { bin_width_ps: Picos, window_ps: [Picos; 2] },
    /// Herald-to-jump correlation, coincidence statistics, lifetime
    /// analysis and rate budget. Bins are centered on zero delay.
    HeraldedAbsorption {
        bin_width_ps: Picos,
        /// Bins on each side of the zero-delay bin.
        half_width_bins: u32,
        /// First and last peak bin, relative to the zero-delay bin.
        peak_bins: [i64; 2],
    },
    /// Absorption spectrum from the signal-arm photon flux; nothing else
    /// is simulated.
    Spectroscopy {
        /// Scan from −span to +span, MHz.
        span_mhz: f64,
        n_points: u32,
        cycles_per_point: u64,
        #[serde(default)]
        split_halves: bool,
    },
    /// Rate-budget inversion of given measurements.
    Budget {
        inputs: BudgetInputs,
        r_abs: f64,
        #[serde(default)]
        sigma_r_abs: f64,
    },
}

impl Analysis {
    /// Recipes that need the photon streams simulated.
    pub fn simulates_streams(&self) -> bool {
        !matches!(
            self,
            Analysis::Coherence { .. } | Analysis::Spectroscopy { .. } | Analysis::Budget { .. }
        )
    }

    /// Correlation window `(lo, hi)` and bin width, if the recipe
    /// correlates idler starts with signal-arm stops.
    pub fn correlation(&self) -> Option<(Picos, (Picos, Picos))> {
        match *self {
            Analysis::Correlation { bin_width_ps, window_ps }
            | Analysis::CombEnvelope { bin_width_ps, window_ps }
            | Analysis::FilteredCorrelation { bin_width_ps, window_ps } => {
                Some((bin_width_ps, (window_ps[0], window_ps[1])))
            }
            Analysis::HeraldedAbsorption {
                bin_width_ps,
                half_width_bins,
                ..
            } => {
                let half = bin_width_ps / 2 + half_width_bins as Picos * bin_width_ps;
                Some((bin_width_ps, (-half, half + bin_width_ps % 2)))
            }
            _ => None,
        }
    }

    fn validate(&self, problems: &mut Vec<String>) {
        if let Some((bw, (lo, hi))) = self.correlation() {
            if bw <= 0 {
                problems.push(format!("analysis.bin_width_ps must be positive (got {bw})"));
            } else if hi <= lo {
                problems.push(format!("analysis.window_ps is empty ({lo}, {hi})"));
            } else if (hi - lo) / bw > 50_000_000 {
                problems.push("analysis window has more than 5e7 bins".into());
            }
        }
        match self {
            Analysis::HeraldedAbsorption {
                half_width_bins,
                peak_bins,
                ..
            } => {
                let h = *half_width_bins as i64;
                if peak_bins[0] > peak_bins[1] || peak_bins[0] < -h || peak_bins[1] > h {
                    problems.push(format!(
                        "analysis.peak_bins {peak_bins:?} must be ordered and within ±half_width_bins"
                    ));
                }
            }
            Analysis::Coherence { n_peaks } if *n_peaks < 2 => {
                problems.push("analysis.n_peaks must be at least 2".into());
            }
            Analysis::Spectroscopy {
                span_mhz,
                n_points,
                cycles_per_point,
                ..
            } => {
                if !(*span_mhz > 0.0) || !span_mhz.is_finite() {
                    problems.push(format!("analysis.span_mhz must be positive (got {span_mhz})"));
                }
                if *n_points < 7 {
                    problems.push(format!("analysis.n_points must be at least 7 (got {n_points})"));
                }
                if *cycles_per_point == 0 {
                    problems.push("analysis.cycles_per_point must be positive".into());
                }
            }
            Analysis::Budget { inputs, r_abs, sigma_r_abs } => {
                if let Err(Error::Validation(p)) = inputs.validate() {
                    problems.extend(p.into_iter().map(|s| format!("analysis.inputs: {s}")));
                }
                if !(*r_abs > 0.0) {
                    problems.push(format!("analysis.r_abs must be positive (got {r_abs})"));
                }
                if !(*sigma_r_abs >= 0.0) {
                    problems.push(format!("analysis.sigma_r_abs must be non-negative (got {sigma_r_abs})"));
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated time, s.
    pub duration_s: f64,
    /// Write one QTT1 file per detector.
    #[serde(default = "yes")]
    pub write_tags: bool,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub signal: ArmConfig,
    #[serde(default)]
    pub idler: ArmConfig,
    #[serde(default)]
    pub detectors: BTreeMap<String, DetectorConfig>,
    #[serde(default)]
    pub ion: Option<IonConfig>,
    #[serde(default)]
    pub analysis: Analysis,
}

fn yes() -> bool {
    true
}

fn extend(problems: &mut Vec<String>, prefix: &str, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Validation(p)) => problems.extend(p.into_iter().map(|s| format!("{prefix}{s}"))),
        Err(e) => problems.push(format!("{prefix}{e}")),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn duration_ps(&self) -> Picos {
        seconds_to_ps(self.duration_s)
    }

    /// The arm feeding the ion: the signal arm when it has no detector.
    pub fn signal_to_ion(&self) -> bool {
        self.ion.is_some() && self.signal.detector.is_none()
    }

    /// Detector names ordered by channel.
    pub fn channel_names(&self) -> Vec<&str> {
        let mut v: Vec<(&u16, &str)> = self.detectors.iter().map(|(n, d)| (&d.channel, n.as_str())).collect();
        v.sort();
        v.into_iter().map(|(_, n)| n).collect()
    }

    pub fn n_channels(&self) -> u16 {
        self.detectors.values().map(|d| d.channel + 1).max().unwrap_or(0)
    }

    /// Checks every field and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            problems.push(format!("duration_s must be positive (got {})", self.duration_s));
        } else if self.duration_s > 1e6 {
            problems.push(format!("duration_s {} exceeds 1e6 s", self.duration_s));
        }
        if self.seed > i64::MAX as u64 {
            problems.push("seed must fit in a signed 64-bit integer".into());
        }
        extend(&mut problems, "", self.source.validate());
        for (arm_name, arm) in [("signal", &self.signal), ("idler", &self.idler)] {
            for (k, v) in &arm.losses {
                if !(*v > 0.0 && *v <= 1.0) {
                    problems.push(format!("{arm_name}.losses.{k} = {v} is not in (0, 1]"));
                }
            }
            for (i, f) in arm.filters.iter().enumerate() {
                extend(&mut problems, &format!("{arm_name}.filters[{i}]: "), f.validate());
            }
            match &arm.detector {
                Some(d) if !self.detectors.contains_key(d) => {
                    problems.push(format!("{arm_name}.detector \"{d}\" is not declared in [detectors]"));
                }
                None if arm_name == "idler" && self.analysis.simulates_streams() => {
                    problems.push("idler.detector is required".into());
                }
                None if arm_name == "signal" && self.ion.is_none() && self.analysis.simulates_streams() => {
                    problems.push("signal.detector is required unless an [ion] section is present".into());
                }
                _ => {}
            }
        }
        if let (Some(a), Some(b)) = (&self.signal.detector, &self.idler.detector) {
            if a == b {
                problems.push(format!("detector \"{a}\" is referenced by both arms"));
            }
        }
        let mut seen: BTreeMap<u16, &str> = BTreeMap::new();
        for (name, d) in &self.detectors {
            if let Some(other) = seen.insert(d.channel, name) {
                problems.push(format!(
                    "channel {} is declared by both \"{other}\" and \"{name}\"",
                    d.channel
                ));
            }
            extend(&mut problems, &format!("detectors.{name}: "), d.spec.validate());
        }
        if let Some(ion) = &self.ion {
            extend(&mut problems, "", ion.params.validate());
            extend(&mut problems, "", ion.sequence.validate());
            if let Some(c) = &ion.reference_comb {
                extend(&mut problems, "ion.reference_comb: ", c.validate());
            }
        }
        match &self.analysis {
            Analysis::HeraldedAbsorption { .. } | Analysis::Spectroscopy { .. } if self.ion.is_none() => {
                problems.push("this analysis recipe needs an [ion] section".into());
            }
            Analysis::HeraldedAbsorption { .. } if !self.signal_to_ion() => {
                problems.push("heralded-absorption needs the signal arm to end at the ion".into());
            }
            _ => {}
        }
        self.analysis.validate(&mut problems);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
seed = 3
duration_s = 0.001

[source]
pair_rate = 1e5

[signal]
detector = "a"
[idler]
detector = "b"

[detectors.a]
channel = 0
[detectors.b]
channel = 1
"#;

    #[test]
    fn minimal_parses() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.channel_names(), vec!["a", "b"]);
        assert_eq!(s.analysis, Analysis::None);
        assert!(s.write_tags);
        assert_eq!(s.duration_ps(), 1_000_000_000);
    }

    #[test]
    fn round_trip() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let back = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn lists_every_problem() {
        let bad = MINIMAL
            .replace("duration_s = 0.001", "duration_s = -1")
            .replace("channel = 1", "channel = 0")
            .replace("pair_rate = 1e5", "pair_rate = -5");
        match Scenario::from_toml(&bad) {
            Err(Error::Validation(p)) => {
                assert!(p.len() >= 3, "{p:?}");
                assert!(p.iter().any(|m| m.contains("duration_s")));
                assert!(p.iter().any(|m| m.contains("channel 0")));
                assert!(p.iter().any(|m| m.contains("pair_rate")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = MINIMAL.replace("seed = 3", "seed = 3\ncolour = 1");
        assert!(matches!(Scenario::from_toml(&bad), Err(Error::Config(_))));
        let bad = format!("{MINIMAL}\n[analysis]\nrecipe = \"correlation\"\nbin_width_ps = 10\nwindow_ps = [0, 100]\nextra = 1\n");
        assert!(matches!(Scenario::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn undeclared_detector() {
        let bad = MINIMAL.replace("detector = \"a\"", "detector = \"zz\"");
        match Scenario::from_toml(&bad) {
            Err(Error::Validation(p)) => assert!(p[0].contains("zz")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn centered_window() {
        let a = Analysis::HeraldedAbsorption {
            bin_width_ps: 10,
            half_width_bins: 2,
            peak_bins: [0, 1],
        };
        assert_eq!(a.correlation(), Some((10, (-25, 25))));
    }
}
