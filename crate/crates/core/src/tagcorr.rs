//! Time-tag correlation and related analysis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{self, linear_fit};
use crate::model::{EventStream, Picos, SpectralCombModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: Picos,
    /// Delay of the lower edge of bin 0.
    pub start_offset: Picos,
    pub counts: Vec<u64>,
    pub n_starts: u64,
    /// Measurement time, s (stored as picoseconds to keep `Eq`).
    pub total_time_ps: Picos,
}

impl Histogram {
    pub fn new(bin_width: Picos, start_offset: Picos, n_bins: usize) -> Result<Self> {
        if bin_width <= 0 {
            return Err(Error::input("bin width must be positive"));
        }
        if n_bins == 0 {
            return Err(Error::input("histogram needs at least one bin"));
        }
        Ok(Histogram {
            bin_width,
            start_offset,
            counts: vec![0; n_bins],
            n_starts: 0,
            total_time_ps: 0,
        })
    }

    /// Histogram covering `[min_delay, max_delay)`; the last bin may extend
    /// past `max_delay`.
    pub fn for_window(bin_width: Picos, window: (Picos, Picos)) -> Result<Self> {
        let (lo, hi) = window;
        if hi <= lo {
            return Err(Error::input(format!("inverted correlation window ({lo}, {hi})")));
        }
        if bin_width <= 0 {
            return Err(Error::input("bin width must be positive"));
        }
        let n = ((hi - lo + bin_width - 1) / bin_width) as usize;
        Histogram::new(bin_width, lo, n)
    }

    pub fn total_time(&self) -> f64 {
        self.total_time_ps as f64 * 1e-12
    }

    /// End of the covered delay range.
    pub fn end_delay(&self) -> Picos {
        self.start_offset + self.bin_width * self.counts.len() as Picos
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.start_offset as f64 + (i as f64 + 0.5) * self.bin_width as f64
    }

    /// Bin holding `delay`, if inside.
    pub fn bin_of(&self, delay: Picos) -> Option<usize> {
        if delay < self.start_offset {
            return None;
        }
        let i = ((delay - self.start_offset) / self.bin_width) as usize;
        (i < self.counts.len()).then_some(i)
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum; geometry must match.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.bin_width != other.bin_width
            || self.start_offset != other.start_offset
            || self.counts.len() != other.counts.len()
        {
            return Err(Error::input("histogram geometries differ"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.n_starts += other.n_starts;
        self.total_time_ps += other.total_time_ps;
        Ok(())
    }

    /// CSV with a `#` metadata line and `delay_ps,counts` rows (bin
    /// centers).
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.counts.len() * 16 + 128);
        let _ = writeln!(
            s,
            "# bin_width_ps={}, start_offset_ps={}, n_starts={}, total_time_s={}",
            self.bin_width,
            self.start_offset,
            self.n_starts,
            self.total_time()
        );
        s.push_str("delay_ps,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.bin_center(i), c);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| Error::Format("empty histogram CSV".into()))?;
        let meta = head
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("missing histogram metadata line".into()))?;
        let mut bw = None;
        let mut off = None;
        let mut starts = 0;
        let mut total = 0.0;
        for kv in meta.split(',') {
            let Some((k, v)) = kv.trim().split_once('=') else { continue };
            let bad = |_| Error::Format(format!("bad value for {k}: {v}"));
            match k {
                "bin_width_ps" => bw = Some(v.parse::<Picos>().map_err(bad)?),
                "start_offset_ps" => off = Some(v.parse::<Picos>().map_err(bad)?),
                "n_starts" => starts = v.parse::<u64>().map_err(bad)?,
                "total_time_s" => total = v.parse::<f64>().map_err(|_| Error::Format(format!("bad total_time_s {v}")))?,
                _ => {}
            }
        }
        let (bw, off) = bw.zip(off).ok_or_else(|| Error::Format("missing bin_width_ps or start_offset_ps".into()))?;
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            if n == 0 && line.starts_with("delay_ps") {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let c = line
                .split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<u64>().ok())
                .ok_or_else(|| Error::Format(format!("bad histogram row: {line}")))?;
            counts.push(c);
        }
        let mut h = Histogram::new(bw, off, counts.len())?;
        h.counts = counts;
        h.n_starts = starts;
        h.total_time_ps = (total * 1e12).round() as Picos;
        Ok(h)
    }
}

fn check_sorted(times: &[Picos], what: &str) -> Result<()> {
    if let Some(i) = times.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::input(format!("{what} not sorted at index {}", i + 1)));
    }
    Ok(())
}

/// Adds every in-window (start, stop) pair of two sorted time lists to `h`.
/// Calls over disjoint chunks of starts (or of stops) add up to the
/// correlation of the full lists.
pub fn accumulate(h: &mut Histogram, starts: &[Picos], stops: &[Picos]) {
    let lo = h.start_offset;
    let hi = h.end_delay();
    let bw = h.bin_width;
    let mut first = 0usize;
    for &s in starts {
        let from = s + lo;
        while first < stops.len() && stops[first] < from {
            first += 1;
        }
        let to = s + hi;
        for &t in &stops[first..] {
            if t >= to {
                break;
            }
            h.counts[((t - from) / bw) as usize] += 1;
        }
    }
}

/// Multi-stop cross-correlation of sorted time lists over
/// `[window.0, window.1)`; delay = stop − start.
pub fn cross_correlate_times(
    starts: &[Picos],
    stops: &[Picos],
    bin_width: Picos,
    window: (Picos, Picos),
    total_time: Picos,
) -> Result<Histogram> {
    check_sorted(starts, "start tags")?;
    check_sorted(stops, "stop tags")?;
    let mut h = Histogram::for_window(bin_width, window)?;
    h.n_starts = starts.len() as u64;
    h.total_time_ps = total_time;
    // Split starts across workers; histograms add bin-wise.
    let chunk = 1 << 20;
    if starts.len() > 2 * chunk {
        let pieces: Vec<&[Picos]> = starts.chunks(chunk).collect();
        let parts = crate::par::map_slice(&pieces, |_, piece| {
            let mut p = Histogram::for_window(bin_width, window).expect("window checked");
            accumulate(&mut p, piece, stops);
            p.counts
        });
        for p in parts {
            for (a, b) in h.counts.iter_mut().zip(p) {
                *a += b;
            }
        }
    } else {
        accumulate(&mut h, starts, stops);
    }
    Ok(h)
}

/// Multi-stop cross-correlation of all tags of `starts` against all tags of
/// `stops`.
pub fn cross_correlate(
    starts: &EventStream,
    stops: &EventStream,
    bin_width: Picos,
    window: (Picos, Picos),
) -> Result<Histogram> {
    let a: Vec<Picos> = starts.tags().iter().map(|t| t.time).collect();
    let b: Vec<Picos> = stops.tags().iter().map(|t| t.time).collect();
    let total = starts.duration().max(stops.duration());
    cross_correlate_times(&a, &b, bin_width, window, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceStats {
    /// Background-corrected coincidence rate in the peak window, s⁻¹.
    pub peak_rate_c: f64,
    /// Standard error of `peak_rate_c`.
    pub peak_rate_c_sigma: f64,
    /// Background counts per bin per second.
    pub background_per_bin_rate_bg: f64,
    pub background_per_bin_rate_bg_sigma: f64,
    /// (max peak bin − mean background)/√(mean background).
    pub snr: f64,
    /// Mean background ± its Poisson σ, counts per bin.
    pub poisson_band: (f64, f64),
}

/// Peak and background statistics; `peak_window` is a bin range.
pub fn coincidence_stats(h: &Histogram, peak_window: std::ops::Range<usize>) -> Result<CoincidenceStats> {
    if peak_window.start >= peak_window.end || peak_window.end > h.counts.len() {
        return Err(Error::analysis("peak window outside the histogram"));
    }
    let n_bg = h.counts.len() - peak_window.len();
    if n_bg < 10 {
        return Err(Error::analysis(format!("only {n_bg} background bins; need at least 10")));
    }
    let t = h.total_time();
    if !(t > 0.0) {
        return Err(Error::analysis("histogram has no measurement time"));
    }
    let bg_sum: u64 = h
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| !peak_window.contains(i))
        .map(|(_, c)| *c)
        .sum();
    let mean_bg = bg_sum as f64 / n_bg as f64;
    let peak = &h.counts[peak_window.clone()];
    let peak_sum: u64 = peak.iter().sum();
    let np = peak.len() as f64;
    let c = (peak_sum as f64 - mean_bg * np) / t;
    let var = peak_sum as f64 + np * np * bg_sum as f64 / (n_bg as f64).powi(2);
    let max_peak = *peak.iter().max().unwrap() as f64;
    let snr = if mean_bg > 0.0 {
        ((max_peak - mean_bg) / mean_bg.sqrt()).max(0.0)
    } else {
        0.0
    };
    Ok(CoincidenceStats {
        peak_rate_c: c,
        peak_rate_c_sigma: var.sqrt() / t,
        background_per_bin_rate_bg: mean_bg / t,
        background_per_bin_rate_bg_sigma: (bg_sum as f64).sqrt() / n_bg as f64 / t,
        snr,
        poisson_band: (mean_bg - mean_bg.sqrt(), mean_bg + mean_bg.sqrt()),
    })
}

/// Comb modes summed by the coherence functions: the same range the source
/// samples.
fn g1_weights(comb: &SpectralCombModel) -> Vec<(f64, f64)> {
    let m = comb.default_max_mode() as i32;
    (-m..=m)
        .map(|k| {
            let nu = k as f64 * comb.fsr + comb.center_offset;
            (nu, comb.envelope(k as f64 * comb.fsr))
        })
        .collect()
}

/// Complex first-order coherence at delay `tau_ps`: Fourier transform of
/// the comb spectrum (Lorentzian modes under the envelope), normalized to
/// one at zero delay.
pub fn g1(comb: &SpectralCombModel, tau_ps: f64) -> (f64, f64) {
    let w = g1_weights(comb);
    g1_with(&w, comb.mode_fwhm, tau_ps)
}

fn g1_with(w: &[(f64, f64)], mode_fwhm: f64, tau_ps: f64) -> (f64, f64) {
    let tau = tau_ps * 1e-12;
    let norm: f64 = w.iter().map(|v| v.1).sum();
    let (mut re, mut im) = (0.0, 0.0);
    for &(nu, e) in w {
        let ph = std::f64::consts::TAU * nu * tau;
        re += e * ph.cos();
        im += e * ph.sin();
    }
    let damp = (-std::f64::consts::PI * mode_fwhm * tau.abs()).exp();
    (re / norm * damp, im / norm * damp)
}

/// |g¹(τ)| at every delay (ps); the interferometer visibility.
pub fn g1_visibility(comb: &SpectralCombModel, delays: &[f64]) -> Vec<f64> {
    let w = g1_weights(comb);
    delays
        .iter()
        .map(|&d| {
            let (re, im) = g1_with(&w, comb.mode_fwhm, d);
            re.hypot(im).min(1.0)
        })
        .collect()
}

/// Delay of the `n`-th revival of |g¹| near `n·round_trip_time`, by
/// golden-section search; ps.
pub fn g1_peak_position(comb: &SpectralCombModel, n: u32) -> f64 {
    let w = g1_weights(comb);
    let f = |t: f64| {
        let (re, im) = g1_with(&w, comb.mode_fwhm, t);
        -(re.hypot(im))
    };
    let c = n as f64 * comb.round_trip_time;
    let (mut a, mut b) = (c - 0.5, c + 0.5);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Coherence time of the zero-delay peak, ps: decay constant of a
/// two-sided exponential `A·exp(−|τ|/τc)` fitted to |g¹| over ±10 ps.
pub fn coherence_time(comb: &SpectralCombModel) -> Result<f64> {
    let delays: Vec<f64> = (0..=400).map(|i| -10.0 + 0.05 * i as f64).collect();
    let v = g1_visibility(comb, &delays);
    let model = |t: f64, p: &[f64]| p[0] * (-t.abs() / p[1].abs()).exp();
    let r = fit::nlls_fit(model, &["amplitude", "tau_c"], &[1.0, 1.0], &delays, &v, None)?;
    Ok(r.parameters[1].abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    /// ps.
    pub period: f64,
    /// Jackknife standard error, ps.
    pub std_err: f64,
    /// Peak centroids used, ps.
    pub peaks: Vec<f64>,
}

const BASELINE_WINDOW: usize = 101;

fn sliding_quartile(counts: &[u64]) -> Vec<f64> {
    let n = counts.len();
    let half = BASELINE_WINDOW / 2;
    let mut out = Vec::with_capacity(n);
    let mut buf: Vec<u64> = Vec::with_capacity(BASELINE_WINDOW);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&counts[lo..hi]);
        let k = (buf.len() - 1) / 4;
        let (_, q, _) = buf.select_nth_unstable(k);
        out.push(*q as f64);
    }
    out
}

/// Mean spacing of the peaks of a comb-like histogram.
///
/// Peaks are runs of bins more than 3σ above a sliding lower-quartile
/// baseline (gaps of up to two bins bridged) whose maximum exceeds 5σ.
/// Centroids are regressed on their integer peak index; the slope is the
/// period and its error comes from a leave-one-out jackknife.
pub fn comb_period_estimate(h: &Histogram) -> Result<PeriodEstimate> {
    let base = sliding_quartile(&h.counts);
    let resid: Vec<f64> = h.counts.iter().zip(&base).map(|(&c, &b)| c as f64 - b).collect();
    let sig: Vec<f64> = base.iter().map(|b| b.max(1.0).sqrt()).collect();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for i in 0..resid.len() {
        if resid[i] > 3.0 * sig[i] {
            match runs.last_mut() {
                Some(r) if i - r.1 <= 3 => r.1 = i,
                _ => runs.push((i, i)),
            }
        }
    }
    let mut centroids = Vec::new();
    for (a, b) in runs {
        let strong = (a..=b).any(|i| resid[i] > 5.0 * sig[i]);
        if !strong {
            continue;
        }
        let (mut sw, mut sx) = (0.0, 0.0);
        for i in a..=b {
            let w = resid[i].max(0.0);
            sw += w;
            sx += w * h.bin_center(i);
        }
        if sw > 0.0 {
            centroids.push(sx / sw);
        }
    }
    if centroids.len() < 5 {
        return Err(Error::analysis(format!("{} resolved peaks; need at least 5", centroids.len())));
    }
    let mut diffs: Vec<f64> = centroids.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(f64::total_cmp);
    let d0 = diffs[diffs.len() / 2];
    let c0 = centroids[0];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &c in &centroids {
        let k = (c - c0) / d0;
        if (k - k.round()).abs() < 0.25 {
            xs.push(k.round());
            ys.push(c);
        }
    }
    if xs.len() < 5 {
        return Err(Error::analysis("peaks do not form a regular comb"));
    }
    let (_, period, _, _) = linear_fit(&xs, &ys, None)?;
    let n = xs.len();
    let mut loo = Vec::with_capacity(n);
    for skip in 0..n {
        let x: Vec<f64> = xs.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
        let y: Vec<f64> = ys.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| *v).collect();
        loo.push(linear_fit(&x, &y, None)?.1);
    }
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n as f64 - 1.0) / n as f64 * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok(PeriodEstimate {
        period,
        std_err: var.sqrt(),
        peaks: ys,
    })
}
