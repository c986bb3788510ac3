//! Property bodies shared by the proptest suite and the acceptance run.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed, TestCaseError};

use opo_herald::budget::{infer_budget, predict_rates, BudgetInputs};
use opo_herald::figures::{bundled_scenario, SCENARIOS};
use opo_herald::fit::models::{exp_convolution, exponential, lorentzian_line};
use opo_herald::fit::numeric_jacobian;
use opo_herald::fit::spectroscopy::{fit_line, ScanPoint};
use opo_herald::io::qtt::{decode, write_tags_to};
use opo_herald::io::Scenario;
use opo_herald::model::{EventStream, Origin, PhotonEvent, Picos, SourceConfig, TimeTag};
use opo_herald::optics::apply_loss;
use opo_herald::pipeline::simulate;
use opo_herald::rng;
use opo_herald::source::{generate_pair_shard, ArmKeep, ModeSampler};
use opo_herald::tagcorr::cross_correlate_times;

pub type Outcome = Result<(), TestCaseError>;

pub fn fixed(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(20_231_016),
        failure_persistence: None,
        ..Config::default()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sorted_times(max_len: usize, span: Picos) -> impl Strategy<Value = Vec<Picos>> {
    prop::collection::vec(0..span, 0..max_len).prop_map(|mut v| {
        v.sort_unstable();
        v
    })
}

/// Count lies within 5 standard deviations of a binomial draw.
fn within_5_sigma(k: usize, n: f64, p: f64) -> bool {
    let mean = n * p;
    let sd = (n * p * (1.0 - p)).sqrt().max(1.0);
    (k as f64 - mean).abs() <= 5.0 * sd
}

// Thinning.

pub fn thinning_case() -> impl Strategy<Value = (f64, f64, u64)> {
    (0.05f64..1.0, 0.05f64..1.0, any::<u64>())
}

pub fn losses_compose((a, b, seed): (f64, f64, u64)) -> Outcome {
    let n = 20_000;
    let input: Vec<PhotonEvent> = (0..n)
        .map(|i| PhotonEvent {
            time: i as Picos * 1000,
            detuning: 0.0,
            mode_index: 0,
            origin: Origin::PairSignal,
        })
        .collect();
    let mut r = rng::stream(seed, "loss", 0);
    let once = apply_loss(&input, a, &mut r).unwrap();
    let twice = apply_loss(&once, b, &mut r).unwrap();
    let fused = apply_loss(&input, a * b, &mut r).unwrap();
    prop_assert!(within_5_sigma(twice.len(), n as f64, a * b), "{} vs {}", twice.len(), n as f64 * a * b);
    prop_assert!(within_5_sigma(fused.len(), n as f64, a * b));
    // Survivors keep their order and their times.
    prop_assert!(twice.windows(2).all(|w| w[0].time < w[1].time));
    prop_assert!(twice.iter().all(|p| p.time % 1000 == 0));
    Ok(())
}

pub fn fused_thinning((a, b, seed): (f64, f64, u64)) -> Outcome {
    let cfg = SourceConfig {
        pair_rate: 1e6,
        seed,
        max_mode: Some(0),
        ..SourceConfig::default()
    };
    let sampler = ModeSampler::for_source(&cfg);
    let end: Picos = 10_000_000_000;
    let batch = generate_pair_shard(&cfg, &sampler, 0, end, ArmKeep::new(a, b).unwrap());
    // Poisson counts with mean 10⁴ times the survival probability.
    let poisson = |k: usize, mean: f64| (k as f64 - mean).abs() <= 5.0 * mean.sqrt();
    prop_assert!(poisson(batch.signal_events.len(), 1e4 * a));
    prop_assert!(poisson(batch.idler_events.len(), 1e4 * b));
    prop_assert!(poisson(batch.pair_links.len(), 1e4 * a * b));
    Ok(())
}

// Tag files.

pub fn qtt_case() -> impl Strategy<Value = (Vec<(Picos, u16)>, u16)> {
    (prop::collection::vec((0i64..1_000_000_000_000, 0u16..8), 0..300), 8u16..16)
}

pub fn qtt_round_trip((raw, n_channels): (Vec<(Picos, u16)>, u16)) -> Outcome {
    let mut tags: Vec<TimeTag> = raw.into_iter().map(|(t, c)| TimeTag::new(t, c)).collect();
    tags.sort_by_key(|t| t.time);
    let duration = tags.last().map_or(0, |t| t.time + 1);
    let stream = EventStream::new(tags, n_channels, duration).unwrap();
    let bytes = write_tags_to(&stream, Vec::new()).unwrap();
    prop_assert_eq!(bytes.len(), 16 + 12 * stream.len());
    let back = decode(&bytes).unwrap();
    prop_assert_eq!(back, stream);
    Ok(())
}

// Correlation.

pub type ShiftCase = (Vec<Picos>, Vec<Picos>, Picos, i64, i64, i64);

pub fn shift_case() -> impl Strategy<Value = ShiftCase> {
    (
        sorted_times(200, 2_000_000),
        sorted_times(200, 2_000_000),
        1i64..500,
        -40i64..0,
        1i64..80,
        -50i64..50,
    )
}

pub fn correlation_shift((starts, stops, bw, lo_bins, n_bins, shift_bins): ShiftCase) -> Outcome {
    let window = (lo_bins * bw, (lo_bins + n_bins) * bw);
    let h = cross_correlate_times(&starts, &stops, bw, window, 3_000_000).unwrap();
    let s = shift_bins * bw;
    let moved: Vec<Picos> = stops.iter().map(|t| t + s).collect();
    let g = cross_correlate_times(&starts, &moved, bw, (window.0 + s, window.1 + s), 3_000_000).unwrap();
    prop_assert_eq!(&h.counts, &g.counts);
    // Shifting everything together changes nothing.
    let both: Vec<Picos> = starts.iter().map(|t| t + s).collect();
    let k = cross_correlate_times(&both, &moved, bw, window, 3_000_000).unwrap();
    prop_assert_eq!(&h.counts, &k.counts);
    Ok(())
}

pub type MirrorCase = (Vec<Picos>, Vec<Picos>, Picos, i64, i64);

pub fn mirror_case() -> impl Strategy<Value = MirrorCase> {
    (
        sorted_times(200, 1_000_000),
        sorted_times(200, 1_000_000),
        1i64..200,
        -30i64..0,
        1i64..60,
    )
}

pub fn correlation_mirror((starts, stops, half_bw, lo_bins, n_bins): MirrorCase) -> Outcome {
    // Stops sit half a bin off the start grid so no delay lands on an edge.
    let bw = 2 * half_bw;
    let a: Vec<Picos> = starts.iter().map(|t| t * bw).collect();
    let b: Vec<Picos> = stops.iter().map(|t| t * bw + half_bw).collect();
    let window = (lo_bins * bw, (lo_bins + n_bins) * bw);
    let h = cross_correlate_times(&a, &b, bw, window, i64::MAX / 4).unwrap();
    let r = cross_correlate_times(&b, &a, bw, (-window.1, -window.0), i64::MAX / 4).unwrap();
    let mut mirrored = r.counts.clone();
    mirrored.reverse();
    prop_assert_eq!(&h.counts, &mirrored);
    Ok(())
}

// Fit gradients against analytic derivatives.

fn check_columns(j: &nalgebra::DMatrix<f64>, cols: &[Vec<f64>]) -> Outcome {
    for (k, col) in cols.iter().enumerate() {
        let scale = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, v) in col.iter().enumerate() {
            prop_assert!(
                (j[(i, k)] - v).abs() <= 1e-4 * scale,
                "param {}, point {}: {} vs {}",
                k,
                i,
                j[(i, k)],
                v
            );
        }
    }
    Ok(())
}

pub fn lorentzian_case() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (-30.0f64..30.0, 5.0f64..60.0, 10.0f64..2000.0, 0.0f64..50.0)
}

pub fn lorentzian_gradient((x0, w, amp, off): (f64, f64, f64, f64)) -> Outcome {
    let p = [x0, w, amp, off];
    let xs: Vec<f64> = (0..41).map(|i| -100.0 + 5.0 * i as f64).collect();
    let j = numeric_jacobian(&lorentzian_line, &xs, &p);
    let hw = 0.5 * w;
    let den = |x: f64| (hw * hw + (x - x0).powi(2)).powi(2);
    let cols = vec![
        xs.iter().map(|&x| amp * hw * hw * 2.0 * (x - x0) / den(x)).collect(),
        xs.iter().map(|&x| amp * hw * (x - x0).powi(2) / den(x)).collect(),
        xs.iter().map(|&x| hw * hw / (hw * hw + (x - x0).powi(2))).collect(),
        vec![1.0; xs.len()],
    ];
    check_columns(&j, &cols)
}

pub fn exponential_case() -> impl Strategy<Value = (f64, f64, f64)> {
    (1.0f64..1e5, 0.5f64..50.0, 0.0f64..100.0)
}

pub fn exponential_gradient((a, tau, c): (f64, f64, f64)) -> Outcome {
    let p = [a, tau, c];
    let xs: Vec<f64> = (0..40).map(|i| 0.25 + i as f64 * 1.5).collect();
    let j = numeric_jacobian(&exponential, &xs, &p);
    let cols = vec![
        xs.iter().map(|t| (-t / tau).exp()).collect(),
        xs.iter().map(|t| a * t / (tau * tau) * (-t / tau).exp()).collect(),
        vec![1.0; xs.len()],
    ];
    check_columns(&j, &cols)
}

pub fn convolution_case() -> impl Strategy<Value = (f64, f64, f64, f64, f64)> {
    (1e2f64..1e5, 1.0f64..10.0, 1.3f64..6.0, -5.0f64..5.0, 0.0f64..100.0)
}

pub fn exp_convolution_gradient((amp, t1, ratio, t0, c): (f64, f64, f64, f64, f64)) -> Outcome {
    let t2 = t1 * ratio;
    let p = [amp, t1, t2, t0, c];
    // Points strictly after the onset, away from the kink.
    let xs: Vec<f64> = (0..40).map(|i| t0 + 0.5 + i as f64 * 2.0).collect();
    let j = numeric_jacobian(&exp_convolution, &xs, &p);
    let d = t2 - t1;
    let (mut ca, mut c1, mut c2, mut c0) = (vec![], vec![], vec![], vec![]);
    for &x in &xs {
        let s = x - t0;
        let (e1, e2) = ((-s / t1).exp(), (-s / t2).exp());
        let g = e2 - e1;
        ca.push(g / d);
        c1.push(amp * (-s / (t1 * t1) * e1 * d + g) / (d * d));
        c2.push(amp * (s / (t2 * t2) * e2 * d - g) / (d * d));
        c0.push(-amp * (e1 / t1 - e2 / t2) / d);
    }
    check_columns(&j, &[ca, c1, c2, c0, vec![1.0; xs.len()]])
}

// Line widths.

pub fn widths_case() -> impl Strategy<Value = (f64, f64)> {
    (5.0f64..40.0, 5.0f64..40.0)
}

pub fn lorentzian_widths_add((a, b): (f64, f64)) -> Outcome {
    // Convolution by quadrature in θ = atan(2u/a), where the first
    // unit-peak line times du is (a/2)·dθ.
    let unit = |x: f64, w: f64| (w / 2.0).powi(2) / ((w / 2.0).powi(2) + x * x);
    let conv = |x: f64| {
        let n = 20_000;
        let h = std::f64::consts::PI / n as f64;
        (0..n)
            .map(|i| {
                let th = -std::f64::consts::FRAC_PI_2 + (i as f64 + 0.5) * h;
                unit(x - 0.5 * a * th.tan(), b)
            })
            .sum::<f64>()
            * h
            * 0.5
            * a
    };
    let span = 3.0 * (a + b);
    let pts: Vec<ScanPoint> = (0..81)
        .map(|i| {
            let x = -span + 2.0 * span * i as f64 / 80.0;
            ScanPoint {
                detuning: x * 1e6,
                r_abs: conv(x),
                sigma: 1.0,
                n_jumps: 0,
                n_censored: 0,
            }
        })
        .collect();
    let f = fit_line(&pts).unwrap();
    prop_assert!(rel(f.line.fwhm * 1e-6, a + b) < 0.005, "{} vs {}", f.line.fwhm * 1e-6, a + b);
    Ok(())
}

// Rate budget.

#[derive(Debug, Clone)]
pub struct Truth {
    p: f64,
    beta1: f64,
    beta2: f64,
    chain: Vec<f64>,
    known: Vec<f64>,
    unknown: f64,
    sat: f64,
    dt: f64,
}

pub fn truth() -> impl Strategy<Value = Truth> {
    (
        1e4f64..1e8,
        0.0f64..2.0,
        0.0f64..20.0,
        prop::collection::vec(0.01f64..=1.0, 1..5),
        prop::collection::vec(0.01f64..=1.0, 0..4),
        0.01f64..=1.0,
        0.05f64..=1.0,
        1e-9f64..1e-4,
    )
        .prop_map(|(p, beta1, beta2, chain, known, unknown, sat, dt)| Truth {
            p,
            beta1,
            beta2,
            chain,
            known,
            unknown,
            sat,
            dt,
        })
}

fn forward(t: &Truth) -> (BudgetInputs, f64) {
    let chain: f64 = t.chain.iter().product();
    let known: f64 = t.known.iter().product();
    let eta1 = chain * t.sat;
    let eta2 = known * t.unknown;
    let r = predict_rates(t.p, t.beta1, t.beta2, eta1, eta2, t.dt);
    let r_abs = t.p * chain * (1.0 + t.beta1);
    let named = |v: &[f64], s: &str| v.iter().enumerate().map(|(i, &x)| (format!("{s}{i}"), x)).collect();
    let inputs = BudgetInputs {
        r1: r.r1,
        r2: r.r2,
        c: r.c,
        bin_width_dt: t.dt,
        beta1: t.beta1,
        eta1_factors: named(&t.chain, "eta1_"),
        known_eta2_factors: named(&t.known, "eta2_"),
        sigma_r1: 0.0,
        sigma_r2: 0.0,
        sigma_c: 0.0,
    };
    (inputs, r_abs)
}

pub fn budget_round_trip(t: Truth) -> Outcome {
    let (inputs, r_abs) = forward(&t);
    let out = infer_budget(&inputs, r_abs).unwrap();
    let chain: f64 = t.chain.iter().product();
    let known: f64 = t.known.iter().product();
    let tol = 1e-12;
    prop_assert!(rel(out.p, t.p) < tol, "P {} vs {}", out.p, t.p);
    prop_assert!(rel(out.eta1, chain * t.sat) < tol);
    prop_assert!(rel(out.eta_sat, t.sat) < tol);
    prop_assert!(rel(out.eta2, known * t.unknown) < tol);
    prop_assert!(rel(out.eta_unknown, t.unknown) < tol);
    // β₂ may be near zero; 1 + β₂ is the measured ratio R2/(P·η2).
    prop_assert!(rel(1.0 + out.beta2, 1.0 + t.beta2) < tol);
    prop_assert!(rel(out.p_from_r1, t.p) < tol);
    prop_assert!(out.p_consistent);
    Ok(())
}

pub fn beta_case() -> impl Strategy<Value = (Truth, f64)> {
    (truth(), 0.1f64..10.0)
}

pub fn beta_invariant((t, k): (Truth, f64)) -> Outcome {
    // A different idler efficiency scales R2 and C together.
    let (inputs, r_abs) = forward(&t);
    let scaled = BudgetInputs {
        r2: inputs.r2 * k,
        c: inputs.c * k,
        ..inputs.clone()
    };
    let a = infer_budget(&inputs, r_abs).unwrap();
    let b = infer_budget(&scaled, r_abs).unwrap();
    prop_assert!(rel(1.0 + b.beta2, 1.0 + a.beta2) < 1e-12);
    prop_assert!(rel(b.eta2, k * a.eta2) < 1e-12);
    prop_assert!(rel(b.p, a.p) < 1e-12);
    Ok(())
}

// Configuration and determinism.

pub fn scenario_case() -> impl Strategy<Value = (usize, u64, f64, f64)> {
    (0..SCENARIOS.len(), 0..=i64::MAX as u64, 1e-4f64..1e4, 1.0f64..1e7)
}

pub fn scenario_round_trip((which, seed, duration, rate): (usize, u64, f64, f64)) -> Outcome {
    let mut s = bundled_scenario(SCENARIOS[which].0).unwrap();
    s.seed = seed;
    s.duration_s = duration;
    s.source.pair_rate = rate;
    let text = s.to_toml().unwrap();
    let back = Scenario::from_toml(&text).unwrap();
    prop_assert_eq!(&back, &s);
    prop_assert_eq!(back.to_toml().unwrap(), text);
    Ok(())
}

pub fn seed_case() -> impl Strategy<Value = u64> {
    0..=i64::MAX as u64
}

pub fn simulation_deterministic(seed: u64) -> Outcome {
    let mut s = bundled_scenario("minimal").unwrap();
    s.seed = seed;
    s.duration_s = 0.02;
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let a = simulate(&s, Some(d1.path())).unwrap();
    let b = simulate(&s, Some(d2.path())).unwrap();
    prop_assert_eq!(&a.counts, &b.counts);
    prop_assert_eq!(&a.histogram, &b.histogram);
    for name in a.tag_files.values() {
        let x = std::fs::read(d1.path().join(name)).unwrap();
        let y = std::fs::read(d2.path().join(name)).unwrap();
        prop_assert!(x == y, "{} differs", name);
    }
    Ok(())
}
