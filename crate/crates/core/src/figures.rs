//! Analysis recipes, scenario runs and figure reproduction.

use std::fmt::Write as _;
use std::path::Path;

use crate::budget::{budget_report, infer_budget_with_sigma, round_sig, BudgetInputs};
use crate::error::{Error, Result};
use crate::fit::lifetime::{absorption_rate_sigma, absorption_rate_with_branching, bayesian_lifetime};
use crate::fit::models::{exp_convolution_bin, fit_exp_convolution, fit_exponential};
use crate::fit::spectroscopy::{spectroscopy_scan, ScanConfig};
use crate::io::{Analysis, KvReport, Manifest, OutputDir, Scenario};
use crate::ion::{expected_line_fwhm, JumpCause};
use crate::model::{Picos, SpectralCombModel};
use crate::pipeline::{simulate, SimulationOutput};
use crate::tagcorr::{coherence_time, coincidence_stats, comb_period_estimate, g1_peak_position, g1_visibility, Histogram};

/// Bundled scenario files by name.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("figure-1a", include_str!("../scenarios/figure-1a.toml")),
    ("figure-1b", include_str!("../scenarios/figure-1b.toml")),
    ("figure-2", include_str!("../scenarios/figure-2.toml")),
    ("figure-5", include_str!("../scenarios/figure-5.toml")),
    ("figure-6", include_str!("../scenarios/figure-6.toml")),
    ("figure-6-laser", include_str!("../scenarios/figure-6-laser.toml")),
    ("budget", include_str!("../scenarios/budget.toml")),
    ("minimal", include_str!("../scenarios/minimal.toml")),
];

pub fn bundled_scenario(name: &str) -> Result<Scenario> {
    let text = SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::input(format!("no bundled scenario \"{name}\"")))?;
    Scenario::from_toml(text)
}

/// Figure ids accepted by [`reproduce_figure`].
pub const FIGURE_IDS: &[&str] = &["1a", "1b", "2", "5", "6", "budget"];

/// Output files produced by a recipe, with a key-value summary.
#[derive(Debug, Clone, Default)]
pub struct RecipeOutput {
    pub kv: KvReport,
    /// `(file name, kind, contents)`.
    pub files: Vec<(String, String, Vec<u8>)>,
}

impl RecipeOutput {
    fn file(&mut self, name: &str, kind: &str, text: String) {
        self.files.push((name.into(), kind.into(), text.into_bytes()));
    }
}

fn need<'a>(sim: Option<&'a SimulationOutput>) -> Result<&'a SimulationOutput> {
    sim.ok_or_else(|| Error::input("recipe needs simulated streams"))
}

fn need_hist(sim: &SimulationOutput) -> Result<&Histogram> {
    sim.histogram.as_ref().ok_or_else(|| Error::analysis("no correlation histogram"))
}

fn push_rates(kv: &mut KvReport, s: &Scenario, sim: &SimulationOutput) {
    kv.push("duration_s", sim.duration as f64 * 1e-12);
    for name in s.channel_names() {
        kv.push(format!("rate_{name}"), sim.rate(name));
    }
}

/// Runs the scenario's analysis recipe on simulated output.
pub fn analyse(s: &Scenario, sim: Option<&SimulationOutput>) -> Result<RecipeOutput> {
    let mut out = RecipeOutput::default();
    out.kv.push("scenario", &s.name).push("seed", s.seed);
    match &s.analysis {
        Analysis::None => {
            let sim = need(sim)?;
            push_rates(&mut out.kv, s, sim);
        }
        Analysis::Correlation { .. } => {
            let sim = need(sim)?;
            push_rates(&mut out.kv, s, sim);
            let h = need_hist(sim)?;
            out.kv.push("n_starts", h.n_starts).push("total_counts", h.total_counts());
            out.file("histogram.csv", "histogram", h.to_csv());
        }
        Analysis::CombEnvelope { .. } => {
            let sim = need(sim)?;
            push_rates(&mut out.kv, s, sim);
            let h = need_hist(sim)?;
            comb_envelope(h, &mut out)?;
            out.file("histogram.csv", "histogram", h.to_csv());
        }
        Analysis::Coherence { n_peaks } => coherence(s, *n_peaks, &mut out)?,
        Analysis::FilteredCorrelation { .. } => {
            let sim = need(sim)?;
            push_rates(&mut out.kv, s, sim);
            let h = need_hist(sim)?;
            filtered(h, &mut out)?;
            out.file("histogram.csv", "histogram", h.to_csv());
        }
        Analysis::HeraldedAbsorption {
            half_width_bins,
            peak_bins,
            ..
        } => {
            let sim = need(sim)?;
            push_rates(&mut out.kv, s, sim);
            heralded(s, sim, *half_width_bins, *peak_bins, &mut out)?;
        }
        Analysis::Spectroscopy {
            span_mhz,
            n_points,
            cycles_per_point,
            split_halves,
        } => spectroscopy(s, *span_mhz, *n_points, *cycles_per_point, *split_halves, &mut out)?,
        Analysis::Budget {
            inputs,
            r_abs,
            sigma_r_abs,
        } => {
            let b = infer_budget_with_sigma(inputs, *r_abs, *sigma_r_abs)?;
            let text = budget_report(inputs, *r_abs, &b, s.source.pump_power_mw)?;
            out.kv.extend_text(&text);
            out.file("budget.txt", "budget", text);
        }
    }
    Ok(out)
}

fn comb_envelope(h: &Histogram, out: &mut RecipeOutput) -> Result<()> {
    let pe = comb_period_estimate(h)?;
    let period = pe.period;
    let c0 = pe.peaks[0];
    let centers: Vec<f64> = (0..)
        .map(|n| c0 + n as f64 * period)
        .take_while(|c| c + 0.5 * period <= h.end_delay() as f64)
        .collect();
    let mut t = Vec::new();
    let mut area = Vec::new();
    let mut sig = Vec::new();
    for &c in &centers {
        let sum: u64 = (0..h.counts.len())
            .filter(|&i| (h.bin_center(i) - c).abs() < 0.5 * period)
            .map(|i| h.counts[i])
            .sum();
        t.push(c * 1e-3);
        area.push(sum as f64);
        sig.push((sum as f64).max(1.0).sqrt());
    }
    let fit = fit_exponential(&t, &area, Some(&sig), true)?;
    let bin_near = |x: f64, half: f64| -> Vec<u64> {
        (0..h.counts.len())
            .filter(|&i| (h.bin_center(i) - x).abs() <= half)
            .map(|i| h.counts[i])
            .collect()
    };
    let (mut peaks, mut valleys) = (0.0, 0.0);
    for n in 0..5.min(centers.len().saturating_sub(1)) {
        peaks += bin_near(centers[n], 0.25 * period).into_iter().max().unwrap_or(0) as f64;
        let mid = 0.5 * (centers[n] + centers[n + 1]);
        let v = bin_near(mid, 2.5 * h.bin_width as f64);
        valleys += v.iter().sum::<u64>() as f64 / v.len().max(1) as f64;
    }
    let kv = &mut out.kv;
    kv.push("period_ps", pe.period)
        .push("period_err_ps", pe.std_err)
        .push("n_peaks", pe.peaks.len())
        .push("envelope_tau_ns", fit.value("tau"))
        .push("envelope_tau_err_ns", fit.error("tau"))
        .push("peak_valley_ratio", if valleys > 0.0 { peaks / valleys } else { f64::INFINITY });
    let mut csv = String::from("delay_ns,peak_counts,model\n");
    for i in 0..t.len() {
        let m = crate::fit::models::exponential(t[i], &fit.parameters);
        let _ = writeln!(csv, "{},{},{}", t[i], area[i], m);
    }
    out.file("envelope.csv", "envelope", csv);
    Ok(())
}

fn coherence(s: &Scenario, n_peaks: u32, out: &mut RecipeOutput) -> Result<()> {
    let comb: SpectralCombModel = s.source.comb;
    let xs: Vec<f64> = (0..=n_peaks).map(|n| n as f64).collect();
    let ys: Vec<f64> = (0..=n_peaks).map(|n| g1_peak_position(&comb, n)).collect();
    let (_, spacing, _, _) = crate::fit::linear_fit(&xs, &ys, None)?;
    let tc = coherence_time(&comb)?;
    let kv = &mut out.kv;
    kv.push("round_trip_ps", comb.round_trip_time)
        .push("peak_spacing_ps", spacing)
        .push("coherence_time_ps", tc);
    for n in 1..=n_peaks {
        let v = g1_visibility(&comb, &[ys[n as usize]])[0];
        let model = (-std::f64::consts::PI * comb.mode_fwhm * n as f64 * comb.round_trip_time * 1e-12).exp();
        kv.push(format!("visibility_peak_{n}"), v);
        kv.push(format!("envelope_model_{n}"), model);
    }
    // Interferometer fringes: dark counts add an incoherent floor.
    if let Some(name) = &s.signal.detector {
        let d = s.detectors[name].spec;
        let signal = s.source.pair_rate * s.signal.flat_transmission() * d.efficiency;
        kv.push("signal_rate", signal)
            .push("dark_rate", d.dark_rate)
            .push("max_visibility_ideal", 1.0)
            .push("max_visibility_dark", signal / (signal + d.dark_rate));
    }
    let end = (n_peaks as f64 + 0.2) * comb.round_trip_time;
    let delays: Vec<f64> = (0..)
        .map(|i| -20.0 + 0.5 * i as f64)
        .take_while(|&d| d <= end)
        .collect();
    let vis = g1_visibility(&comb, &delays);
    let mut csv = String::from("delay_ps,visibility\n");
    for (d, v) in delays.iter().zip(&vis) {
        let _ = writeln!(csv, "{d},{v}");
    }
    out.file("g1.csv", "g1", csv);
    Ok(())
}

fn filtered(h: &Histogram, out: &mut RecipeOutput) -> Result<()> {
    let f = fit_exp_convolution(h)?;
    out.kv
        .push("tau1_ns", f.tau1)
        .push("tau1_err_ns", f.tau1_err)
        .push("tau2_ns", f.tau2)
        .push("tau2_err_ns", f.tau2_err)
        .push("onset_ns", f.t0)
        .push("offset_counts", f.offset)
        .push("single_exponential", f.single_exponential)
        .push("reduced_chi2", f.fit.reduced_chi2());
    let w = h.bin_width as f64 * 1e-3;
    let p = [f.amplitude, f.tau1.max(1e-9), f.tau2, f.t0, f.offset];
    let mut csv = String::from("delay_ns,counts,model\n");
    for i in 0..h.counts.len() {
        let t = h.bin_center(i) * 1e-3;
        let _ = writeln!(csv, "{},{},{}", t, h.counts[i], exp_convolution_bin(t, w, &p));
    }
    out.file("fit.csv", "fit", csv);
    Ok(())
}

/// Efficiency factors of the two arms for the budget inversion. Idler
/// losses named `unknown*` are left for the inversion to find.
fn budget_factors(s: &Scenario) -> (Vec<(String, f64)>, Vec<(String, f64)>) {
    let mut eta1: Vec<(String, f64)> = s.signal.losses.iter().map(|(k, v)| (k.clone(), *v)).collect();
    for (i, f) in s.signal.filters.iter().enumerate() {
        eta1.push((format!("signal_filter_{i}"), f.peak_transmission));
    }
    if let Some(ion) = &s.ion {
        eta1.push(("eta_ion".into(), ion.params.p_abs_resonant));
    }
    let mut eta2: Vec<(String, f64)> = s
        .idler
        .losses
        .iter()
        .filter(|(k, _)| !k.starts_with("unknown"))
        .map(|(k, v)| (k.clone(), *v))
        .collect();
    for (i, f) in s.idler.filters.iter().enumerate() {
        eta2.push((format!("idler_filter_{i}"), f.peak_transmission));
    }
    if let Some(d) = &s.idler.detector {
        eta2.push((format!("eta_{d}"), s.detectors[d].spec.efficiency));
    }
    (eta1, eta2)
}

fn heralded(
    s: &Scenario,
    sim: &SimulationOutput,
    half_width_bins: u32,
    peak_bins: [i64; 2],
    out: &mut RecipeOutput,
) -> Result<()> {
    let h = need_hist(sim)?;
    let ion = sim.ion.as_ref().ok_or_else(|| Error::analysis("no ion records"))?;
    let t = sim.duration as f64 * 1e-12;
    let zero = half_width_bins as i64;
    let range = (zero + peak_bins[0]) as usize..(zero + peak_bins[1] + 1) as usize;
    let st = coincidence_stats(h, range)?;
    let herald = s.idler.detector.as_deref().expect("validated");
    let n_heralds = sim.counts[herald] as f64;
    let n_jumps = ion.jump_times().len() as f64;
    let r1 = n_jumps / t;
    let r2 = n_heralds / t;
    let dt = h.bin_width as f64 * 1e-12;
    let bg_pred = r1 * r2 * dt;
    let bg_pred_sigma = bg_pred * (1.0 / n_jumps.max(1.0) + 1.0 / n_heralds.max(1.0)).sqrt();

    let delays: Vec<Picos> = ion
        .records
        .iter()
        .filter(|r| r.cause != JumpCause::None)
        .map(|r| r.delay_since_prep)
        .collect();
    let censored = ion.records.len() as u64 - delays.len() as u64;
    let seq = s.ion.as_ref().expect("validated").sequence;
    let p = ion.ion.params;
    let est = bayesian_lifetime(&delays, censored, seq.exposure_ps(), None)?;
    let (r_abs, clamped) = absorption_rate_with_branching(est.tau_eff, p.tau_sp, p.branching_to_ground)?;
    let sigma_r_abs = absorption_rate_sigma(est.tau_eff, est.sigma(), p.branching_to_ground);

    let kv = &mut out.kv;
    kv.push("R1", r1)
        .push("R2", r2)
        .push("C", st.peak_rate_c)
        .push("sigma_C", st.peak_rate_c_sigma)
        .push("BG_per_bin_rate", st.background_per_bin_rate_bg)
        .push("sigma_BG_per_bin_rate", st.background_per_bin_rate_bg_sigma)
        .push("BG_predicted", bg_pred)
        .push("sigma_BG_predicted", bg_pred_sigma)
        .push("SNR", st.snr)
        .push("n_cycles", ion.log.n_cycles)
        .push("n_jumps", n_jumps)
        .push("n_absorption_jumps", ion.log.n_absorption_jumps)
        .push("tau_eff_s", est.tau_eff)
        .push("sigma_tau_eff_s", est.sigma())
        .push("R_abs", r_abs)
        .push("sigma_R_abs", sigma_r_abs)
        .push("R_abs_clamped", clamped)
        .push("P_configured", s.source.resonant_pair_rate());

    let (eta1, eta2) = budget_factors(s);
    let inputs = BudgetInputs {
        r1,
        r2,
        c: st.peak_rate_c,
        bin_width_dt: dt,
        beta1: s.source.background_signal_rate / s.source.pair_rate,
        eta1_factors: eta1,
        known_eta2_factors: eta2,
        sigma_r1: n_jumps.sqrt() / t,
        sigma_r2: n_heralds.sqrt() / t,
        sigma_c: st.peak_rate_c_sigma,
    };
    match infer_budget_with_sigma(&inputs, r_abs, sigma_r_abs) {
        Ok(b) => {
            let text = budget_report(&inputs, r_abs, &b, s.source.pump_power_mw)?;
            let mut prefixed = String::new();
            for line in text.lines() {
                let _ = writeln!(prefixed, "budget.{line}");
            }
            kv.extend_text(&prefixed);
            out.file("budget.txt", "budget", text);
        }
        Err(e) => {
            kv.push("budget_error", e.to_string().replace('\n', " "));
        }
    }

    out.file("histogram.csv", "histogram", h.to_csv());
    let mut surv = String::from("time_s,survival,sigma\n");
    for (a, b, c) in &est.survival {
        let _ = writeln!(surv, "{a},{b},{c}");
    }
    out.file("survival.csv", "survival", surv);
    Ok(())
}

fn spectroscopy(
    s: &Scenario,
    span_mhz: f64,
    n_points: u32,
    cycles_per_point: u64,
    split_halves: bool,
    out: &mut RecipeOutput,
) -> Result<()> {
    let ion = s.ion.as_ref().expect("validated");
    let cfg = ScanConfig {
        photon_rate: s.source.resonant_pair_rate() * s.signal.flat_transmission(),
        comb: s.source.comb,
        reference_comb: ion.reference_comb.unwrap_or(s.source.comb),
        ion: ion.params,
        sequence: ion.sequence,
        cycles_per_point,
        seed: s.seed,
        split_halves,
    };
    let step = 2.0 * span_mhz / (n_points - 1) as f64;
    let detunings: Vec<f64> = (0..n_points).map(|i| (-span_mhz + step * i as f64) * 1e6).collect();
    let r = spectroscopy_scan(&cfg, &detunings)?;
    let kv = &mut out.kv;
    kv.push("photon_rate", cfg.photon_rate)
        .push("expected_fwhm_mhz", expected_line_fwhm(&ion.params, &s.source.comb) * 1e-6)
        .push("fwhm_mhz", r.full.line.fwhm * 1e-6)
        .push("fwhm_err_mhz", r.full.fwhm_err * 1e-6)
        .push("center_mhz", r.full.line.center * 1e-6)
        .push("amplitude", r.full.line.amplitude)
        .push("amplitude_err", r.full.amplitude_err);
    if let (Some(b), Some(rd)) = (&r.blue, &r.red) {
        kv.push("blue_fwhm_mhz", b.line.fwhm * 1e-6)
            .push("blue_amplitude", b.line.amplitude)
            .push("red_fwhm_mhz", rd.line.fwhm * 1e-6)
            .push("red_amplitude", rd.line.amplitude);
    }
    kv.push("mean_fwhm_mhz", r.mean_fwhm() * 1e-6)
        .push("mean_amplitude", r.mean_amplitude());
    out.file("scan.csv", "scan", r.to_csv());
    Ok(())
}

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: Manifest,
    pub kv: KvReport,
}

/// Simulates and analyses a scenario, writing every output to `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunOutput> {
    s.validate()?;
    let mut dir = OutputDir::create(out_dir, Manifest::new(s)?)?;
    dir.write("config.toml", "config", s.to_toml()?.as_bytes())?;
    let sim = if s.analysis.simulates_streams() {
        let tag_dir = s.write_tags.then(|| dir.root().to_path_buf());
        let sim = simulate(s, tag_dir.as_deref())?;
        for f in sim.tag_files.values() {
            dir.register(f, "tags")?;
        }
        if let Some(ion) = &sim.ion {
            let mut csv = String::from("cycle,detection_time_ps,delay_ps,cause\n");
            for r in &ion.records {
                let cause = match r.cause {
                    JumpCause::Absorption => "absorption",
                    JumpCause::Spontaneous => "spontaneous",
                    JumpCause::None => "none",
                };
                let _ = writeln!(csv, "{},{},{},{}", r.cycle_index, r.jump_detection_time, r.delay_since_prep, cause);
            }
            dir.write("jumps.csv", "jumps", csv.as_bytes())?;
        }
        Some(sim)
    } else {
        None
    };
    let out = analyse(s, sim.as_ref())?;
    for (name, kind, bytes) in &out.files {
        dir.write(name, kind, bytes)?;
    }
    dir.write("report.txt", "report", out.kv.render().as_bytes())?;
    let manifest = dir.finish()?;
    Ok(RunOutput { manifest, kv: out.kv })
}

/// How a compared quantity passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Check {
    /// `|value − target| ≤ tol`.
    Absolute { target: f64, tol: f64 },
    /// `|value/target − 1| ≤ rel`.
    Relative { target: f64, rel: f64 },
    Above(f64),
    /// Equal to `target` after rounding to `digits` significant figures.
    SigFigs { target: f64, digits: i32 },
    /// `|value − target| ≤ k·sigma`.
    Sigma { target: f64, sigma: f64, k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub quantity: String,
    pub value: f64,
    pub check: Check,
    pub pass: bool,
}

impl Comparison {
    pub fn new(quantity: impl Into<String>, value: f64, check: Check) -> Self {
        let pass = value.is_finite()
            && match check {
                Check::Absolute { target, tol } => (value - target).abs() <= tol,
                Check::Relative { target, rel } => (value / target - 1.0).abs() <= rel,
                Check::Above(x) => value > x,
                Check::SigFigs { target, digits } => round_sig(value, digits) == round_sig(target, digits),
                Check::Sigma { target, sigma, k } => (value - target).abs() <= k * sigma,
            };
        Comparison {
            quantity: quantity.into(),
            value,
            check,
            pass,
        }
    }

    pub fn target_text(&self) -> String {
        match self.check {
            Check::Absolute { target, tol } => format!("{target} ± {tol}"),
            Check::Relative { target, rel } => format!("{target} ± {}%", round_sig(rel * 100.0, 6)),
            Check::Above(x) => format!("> {x}"),
            Check::SigFigs { target, digits } => format!("{} ({digits} s.f.)", round_sig(target, digits)),
            Check::Sigma { target, sigma, k } => format!("{} ± {k}σ (σ = {})", round_sig(target, 6), round_sig(sigma, 4)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FigureReport {
    pub id: String,
    pub comparisons: Vec<Comparison>,
    pub runs: Vec<RunOutput>,
}

impl FigureReport {
    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        let mut s = format!("figure {}\n", self.id);
        let _ = writeln!(s, "{:<34} {:>16}  {:<32} result", "quantity", "value", "target");
        for c in &self.comparisons {
            let a = c.value.abs();
            let value = if a != 0.0 && !(1e-3..1e6).contains(&a) {
                format!("{:.6e}", c.value)
            } else {
                format!("{:.6}", c.value)
            };
            let _ = writeln!(
                s,
                "{:<34} {:>16}  {:<32} {}",
                c.quantity,
                value,
                c.target_text(),
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("quantity,value,target,pass\n");
        for c in &self.comparisons {
            let _ = writeln!(s, "{},{},\"{}\",{}", c.quantity, c.value, c.target_text(), c.pass);
        }
        s
    }
}

/// A quantity the run could not produce compares as NaN and fails.
fn kv_value(kv: &KvReport, key: &str) -> f64 {
    kv.get_f64(key).unwrap_or(f64::NAN)
}

/// Options for [`reproduce_figure`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FigureOptions {
    pub seed: Option<u64>,
    /// Simulated duration of figure 5, s; the bundled 1/10 scale when absent.
    pub figure5_duration_s: Option<f64>,
}

/// Comparisons of a scenario report against the reference values.
pub fn compare(id: &str, kv: &KvReport, extra: Option<&KvReport>) -> Result<Vec<Comparison>> {
    let v = |k: &str| kv_value(kv, k);
    let mut c = Vec::new();
    match id {
        "1a" => {
            c.push(Comparison::new("envelope decay (ns)", v("envelope_tau_ns"), Check::Relative { target: 22.7, rel: 0.15 }));
            c.push(Comparison::new("comb spacing (ps)", v("period_ps"), Check::Absolute { target: 939.0, tol: 4.0 }));
            c.push(Comparison::new("peak/valley", v("peak_valley_ratio"), Check::Above(5.0)));
        }
        "1b" => {
            let rtt = v("round_trip_ps");
            c.push(Comparison::new("g1 peak spacing (ps)", v("peak_spacing_ps"), Check::Absolute { target: 942.0, tol: 2.0 }));
            c.push(Comparison::new("spacing - round trip (ps)", v("peak_spacing_ps") - rtt, Check::Absolute { target: 0.0, tol: 0.01 }));
            c.push(Comparison::new("coherence time (ps)", v("coherence_time_ps"), Check::Relative { target: 1.4, rel: 0.2 }));
            for n in 1.. {
                let (Some(vis), Some(model)) =
                    (kv.get_f64(&format!("visibility_peak_{n}")), kv.get_f64(&format!("envelope_model_{n}")))
                else {
                    break;
                };
                c.push(Comparison::new(format!("|g1| at peak {n}"), vis, Check::Relative { target: model, rel: 0.01 }));
            }
            c.push(Comparison::new("max visibility with darks", v("max_visibility_dark"), Check::Absolute { target: 0.9, tol: 0.05 }));
        }
        "2" => {
            c.push(Comparison::new("tau1 (ns)", v("tau1_ns"), Check::Absolute { target: 7.0, tol: 1.0 }));
            c.push(Comparison::new("tau2 (ns)", v("tau2_ns"), Check::Absolute { target: 22.7, tol: 3.5 }));
        }
        "5" => {
            let full = v("duration_s") >= 18_000.0;
            if full {
                c.push(Comparison::new("SNR", v("SNR"), Check::Absolute { target: 6.7, tol: 1.5 }));
            } else {
                c.push(Comparison::new("SNR", v("SNR"), Check::Above(2.0)));
            }
            c.push(Comparison::new("C (1/s)", v("C"), Check::Relative { target: 0.9, rel: 0.2 }));
            let sig = v("sigma_BG_per_bin_rate").hypot(v("sigma_BG_predicted"));
            c.push(Comparison::new(
                "BG per bin (1/s)",
                v("BG_per_bin_rate"),
                Check::Sigma { target: v("BG_predicted"), sigma: sig, k: 3.0 },
            ));
            c.push(Comparison::new(
                "closed-loop P (1/s)",
                v("budget.P"),
                Check::Sigma { target: v("P_configured"), sigma: v("budget.sigma_P"), k: 3.0 },
            ));
        }
        "6" => {
            c.push(Comparison::new("FWHM (MHz)", v("mean_fwhm_mhz"), Check::Absolute { target: 34.2, tol: 1.5 }));
            c.push(Comparison::new("peak R_abs (1/s)", v("mean_amplitude"), Check::Relative { target: 670.0, rel: 0.07 }));
            if let Some(laser) = extra {
                c.push(Comparison::new(
                    "laser-limited FWHM (MHz)",
                    kv_value(laser, "fwhm_mhz"),
                    Check::Absolute { target: 23.0, tol: 1.5 },
                ));
            }
        }
        "budget" => {
            let two = |t: f64| Check::SigFigs { target: t, digits: 2 };
            c.push(Comparison::new("P (1/s)", v("P"), two(2.52e6)));
            c.push(Comparison::new("eta1", v("eta1"), two(4.4e-5)));
            c.push(Comparison::new("eta2", v("eta2"), two(8.1e-3)));
            c.push(Comparison::new("beta2", v("beta2"), two(5.7)));
            c.push(Comparison::new("eta_unknown", v("eta_unknown"), two(0.16)));
            c.push(Comparison::new("eta_sat", v("eta_sat"), two(0.163)));
            c.push(Comparison::new("pairs/(s mW)", v("pairs_per_s_mW"), two(8400.0)));
        }
        other => return Err(Error::input(format!("unknown figure id \"{other}\""))),
    }
    Ok(c)
}

/// Runs the bundled scenario(s) of a figure into `out_dir` and compares
/// the extracted quantities with the reference values.
pub fn reproduce_figure(id: &str, out_dir: &Path, opts: FigureOptions) -> Result<FigureReport> {
    let names: &[&str] = match id {
        "1a" => &["figure-1a"],
        "1b" => &["figure-1b"],
        "2" => &["figure-2"],
        "5" => &["figure-5"],
        "6" => &["figure-6", "figure-6-laser"],
        "budget" => &["budget"],
        other => {
            return Err(Error::input(format!(
                "unknown figure id \"{other}\"; expected one of {}",
                FIGURE_IDS.join(", ")
            )))
        }
    };
    let mut runs = Vec::new();
    for name in names {
        let mut s = bundled_scenario(name)?;
        if let Some(seed) = opts.seed {
            s.seed = seed;
        }
        if *name == "figure-5" {
            if let Some(d) = opts.figure5_duration_s {
                s.duration_s = d;
            }
        }
        runs.push(run_scenario(&s, &out_dir.join(name))?);
    }
    let comparisons = compare(id, &runs[0].kv, runs.get(1).map(|r| &r.kv))?;
    let report = FigureReport {
        id: id.to_string(),
        comparisons,
        runs,
    };
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(format!("comparison-{id}.txt")), report.table())?;
    std::fs::write(out_dir.join(format!("comparison-{id}.csv")), report.csv())?;
    Ok(report)
}
