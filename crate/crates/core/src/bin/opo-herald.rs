use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use opo_herald::budget::{budget_report, infer_budget_with_sigma, BudgetInputs};
use opo_herald::figures::{reproduce_figure, run_scenario, FigureOptions};
use opo_herald::fit::lifetime::{absorption_rate_sigma, absorption_rate_with_branching, bayesian_lifetime};
use opo_herald::fit::models::fit_exp_convolution;
use opo_herald::fit::spectroscopy::{fit_line, ScanPoint};
use opo_herald::io::{read_tags, KvReport, Scenario};
use opo_herald::model::Picos;
use opo_herald::tagcorr::{coincidence_stats, cross_correlate_times, Histogram};
use opo_herald::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_COMPARISON: u8 = 4;

#[derive(Parser)]
#[command(name = "opo-herald", version, about = "Photon-pair heralded absorption: simulation and time-tag analysis")]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file: simulation, analysis and manifest.
    Simulate { config: PathBuf },
    /// Multi-stop cross-correlation of QTT1 tag files.
    Correlate {
        /// File with the start tags.
        #[arg(long)]
        starts: PathBuf,
        /// File with the stop tags (default: the start file).
        #[arg(long)]
        stops: Option<PathBuf>,
        #[arg(long)]
        start_channel: Option<u16>,
        #[arg(long)]
        stop_channel: Option<u16>,
        #[arg(long)]
        bin_width_ps: Picos,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        window_ps: Vec<Picos>,
        /// Peak bin range (inclusive) for coincidence statistics.
        #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
        peak_bins: Option<Vec<usize>>,
    },
    /// Fit a model to a CSV written by this tool.
    Fit {
        #[arg(value_enum)]
        model: FitModel,
        input: PathBuf,
        /// Exposure per cycle for lifetime fits, ms.
        #[arg(long, default_value_t = 7.0)]
        exposure_ms: f64,
        #[arg(long, default_value_t = 1.17)]
        tau_sp: f64,
        #[arg(long, default_value_t = 0.94)]
        branching: f64,
    },
    /// Rate-budget inversion.
    Budget {
        /// TOML file with the budget inputs; the reference measurement when
        /// absent.
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 680.0)]
        r_abs: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_r_abs: f64,
        #[arg(long, default_value_t = 300.0)]
        pump_mw: f64,
    },
    /// Run a bundled figure scenario and compare with the reference values.
    ReproduceFigure {
        /// One of 1a, 1b, 2, 5, 6, budget.
        id: String,
        /// Simulated time for figure 5, s.
        #[arg(long)]
        duration_s: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitModel {
    /// Rise/decay fit of a correlation histogram CSV.
    ExpConvolution,
    /// Lifetime and absorption rate from a jumps CSV.
    Lifetime,
    /// Lorentzian line from a scan CSV.
    Lorentzian,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Comparison(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_)
        | Error::Validation(_)
        | Error::Config(_)
        | Error::Format(_)
        | Error::Corruption { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Comparison(m)) => {
            eprintln!("{m}");
            ExitCode::from(EXIT_COMPARISON)
        }
    }
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        opo_herald::configure_threads(n)?;
    }
    let out = cli.out_dir.as_path();
    match cli.cmd {
        Cmd::Simulate { config } => {
            let mut s = Scenario::load(&config)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
                s.validate()?;
            }
            let r = run_scenario(&s, out)?;
            print!("{}", r.kv.render());
            eprintln!("wrote {} files to {}", r.manifest.outputs.len() + 1, out.display());
        }
        Cmd::Correlate {
            starts,
            stops,
            start_channel,
            stop_channel,
            bin_width_ps,
            window_ps,
            peak_bins,
        } => {
            let a = read_tags(&starts)?;
            let b = match &stops {
                Some(p) => read_tags(p)?,
                None => a.clone(),
            };
            let pick = |s: &opo_herald::model::EventStream, ch: Option<u16>| -> Vec<Picos> {
                s.tags().iter().filter(|t| ch.is_none_or(|c| t.channel == c)).map(|t| t.time).collect()
            };
            let (ta, tb) = (pick(&a, start_channel), pick(&b, stop_channel));
            let total = a.duration().max(b.duration());
            let h = cross_correlate_times(&ta, &tb, bin_width_ps, (window_ps[0], window_ps[1]), total)?;
            let mut kv = KvReport::new();
            kv.push("n_starts", h.n_starts)
                .push("n_stops", tb.len())
                .push("total_counts", h.total_counts())
                .push("total_time_s", h.total_time());
            if let Some(p) = peak_bins {
                let st = coincidence_stats(&h, p[0]..p[1] + 1)?;
                kv.push("C", st.peak_rate_c)
                    .push("sigma_C", st.peak_rate_c_sigma)
                    .push("BG_per_bin_rate", st.background_per_bin_rate_bg)
                    .push("SNR", st.snr);
            }
            write_out(out, "histogram.csv", &h.to_csv())?;
            write_out(out, "correlation.txt", &kv.render())?;
            print!("{}", kv.render());
        }
        Cmd::Fit {
            model,
            input,
            exposure_ms,
            tau_sp,
            branching,
        } => {
            let text = std::fs::read_to_string(&input)?;
            let mut kv = KvReport::new();
            match model {
                FitModel::ExpConvolution => {
                    let h = Histogram::from_csv(&text)?;
                    let f = fit_exp_convolution(&h)?;
                    kv.push("tau1_ns", f.tau1)
                        .push("tau1_err_ns", f.tau1_err)
                        .push("tau2_ns", f.tau2)
                        .push("tau2_err_ns", f.tau2_err)
                        .push("onset_ns", f.t0)
                        .push("offset_counts", f.offset)
                        .push("reduced_chi2", f.fit.reduced_chi2());
                }
                FitModel::Lifetime => {
                    let mut delays = Vec::new();
                    let mut censored = 0u64;
                    for (i, line) in text.lines().enumerate().skip(1) {
                        let f: Vec<&str> = line.split(',').collect();
                        if f.len() != 4 {
                            return Err(Error::Format(format!("line {}: expected 4 columns", i + 1)).into());
                        }
                        if f[3] == "none" {
                            censored += 1;
                        } else {
                            let d: Picos = f[2]
                                .parse()
                                .map_err(|_| Error::Format(format!("line {}: bad delay", i + 1)))?;
                            delays.push(d);
                        }
                    }
                    let exposure = (exposure_ms * 1e9).round() as Picos;
                    let e = bayesian_lifetime(&delays, censored, exposure, None)?;
                    kv.push("n_jumps", e.n_jumps)
                        .push("n_censored", e.n_censored)
                        .push("tau_eff_s", e.tau_eff)
                        .push("sigma_tau_eff_s", e.sigma())
                        .push("tau_mle_s", e.tau_mle)
                        .push("lower_bound_only", e.lower_bound_only);
                    if !e.lower_bound_only {
                        let (r, clamped) = absorption_rate_with_branching(e.tau_eff, tau_sp, branching)?;
                        kv.push("R_abs", r)
                            .push("sigma_R_abs", absorption_rate_sigma(e.tau_eff, e.sigma(), branching))
                            .push("R_abs_clamped", clamped);
                    }
                }
                FitModel::Lorentzian => {
                    let mut pts = Vec::new();
                    for (i, line) in text.lines().enumerate().skip(1) {
                        let v: Vec<f64> = line
                            .split(',')
                            .map(|x| x.trim().parse::<f64>())
                            .collect::<Result<_, _>>()
                            .map_err(|_| Error::Format(format!("line {}: bad number", i + 1)))?;
                        if v.len() != 3 {
                            return Err(Error::Format(format!("line {}: expected 3 columns", i + 1)).into());
                        }
                        pts.push(ScanPoint {
                            detuning: v[0],
                            r_abs: v[1],
                            sigma: v[2],
                            n_jumps: 0,
                            n_censored: 0,
                        });
                    }
                    let f = fit_line(&pts)?;
                    kv.push("center_mhz", f.line.center * 1e-6)
                        .push("fwhm_mhz", f.line.fwhm * 1e-6)
                        .push("fwhm_err_mhz", f.fwhm_err * 1e-6)
                        .push("amplitude", f.line.amplitude)
                        .push("amplitude_err", f.amplitude_err);
                }
            }
            write_out(out, "fit.txt", &kv.render())?;
            print!("{}", kv.render());
        }
        Cmd::Budget {
            inputs,
            r_abs,
            sigma_r_abs,
            pump_mw,
        } => {
            let inputs = match inputs {
                Some(p) => {
                    let text = std::fs::read_to_string(p)?;
                    toml::from_str::<BudgetInputs>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => BudgetInputs::reference(),
            };
            let b = infer_budget_with_sigma(&inputs, r_abs, sigma_r_abs)?;
            let text = budget_report(&inputs, r_abs, &b, pump_mw)?;
            write_out(out, "budget.txt", &text)?;
            print!("{text}");
        }
        Cmd::ReproduceFigure { id, duration_s } => {
            if !opo_herald::figures::FIGURE_IDS.contains(&id.as_str()) {
                return Err(Failure::Usage(format!(
                    "unknown figure id \"{id}\"; expected one of {}",
                    opo_herald::figures::FIGURE_IDS.join(", ")
                )));
            }
            let opts = FigureOptions {
                seed: cli.seed,
                figure5_duration_s: duration_s,
            };
            let r = reproduce_figure(&id, out, opts)?;
            print!("{}", r.table());
            if !r.passed() {
                return Err(Failure::Comparison(format!("figure {id}: comparison failed")));
            }
        }
    }
    Ok(())
}
