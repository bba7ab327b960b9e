//! `squeezelab` command-line front end.
//!
//! Exit codes: 0 success (or entangled), 2 configuration / input error,
//! 3 I/O error, 4 fit did not converge, 5 state is separable.

pub mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::chain::{infer_source_variance, pair_flux, pump_budget, solve_waveguide_loss};
use crate::entanglement::{duan_variance, epr_from_two_squeezers, AntiSqueezing};
use crate::error::{Error, Result};
use crate::estimation::{
    fit_with_options, generate_synthetic_dataset, DataSet, EtaBound, FitOptions, Weighting,
    RECONSTRUCTION_POWERS_MW,
};
use crate::trace::{estimate_extrema_with_window, synthesize_trace, video_filter, DEFAULT_EXTREMA_WINDOW_RAD};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;
pub const EXIT_SEPARABLE: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "squeezelab", version, about = "Guided-wave squeezed-light simulation and fitting")]
pub struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Override a configuration key, e.g. `--set mu=0.12`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Squeezing and anti-squeezing versus pump power.
    Model(ModelArgs),
    /// Fit (mu, eta) to a squeezing dataset.
    Fit(FitArgs),
    /// Synthesize a phase-scanned homodyne trace.
    Trace(TraceArgs),
    /// Detection-efficiency budget and its inversions.
    Budget(BudgetArgs),
    /// Duan criterion for two squeezers mixed on a 50:50 splitter.
    Duan(DuanArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Comma-separated pump powers in mW.
    #[arg(long, value_delimiter = ',', conflicts_with = "range")]
    powers: Option<Vec<f64>>,
    /// `start:stop:step` in mW, inclusive of stop.
    #[arg(long)]
    range: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset CSV. Without it a seeded synthetic reconstruction is fitted.
    dataset: Option<PathBuf>,
    #[arg(long, requires = "initial_eta")]
    initial_mu: Option<f64>,
    #[arg(long, requires = "initial_mu")]
    initial_eta: Option<f64>,
    /// Form residuals in linear variance instead of dB.
    #[arg(long)]
    linear: bool,
    /// Fit eta without the logistic bound.
    #[arg(long)]
    unbounded: bool,
    /// Relative pump-power uncertainty (e.g. 0.05) folded into the weights.
    #[arg(long)]
    power_uncertainty: Option<f64>,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    /// Also write the dataset that was fitted.
    #[arg(long)]
    dump_data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TraceArgs {
    /// Pump power in mW; overrides `power_mw`.
    #[arg(long)]
    power: Option<f64>,
    /// Half-width of the extremum averaging window, rad.
    #[arg(long, default_value_t = DEFAULT_EXTREMA_WINDOW_RAD)]
    window: f64,
    /// Apply an additional single-pole video filter at this bandwidth, Hz.
    #[arg(long)]
    video_filter: Option<f64>,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Measured squeezing to correct back to the source, dB.
    #[arg(long, allow_hyphen_values = true)]
    measured_db: Option<f64>,
    /// Fitted overall efficiency; enables the waveguide-loss solve.
    #[arg(long)]
    eta_fit: Option<f64>,
}

#[derive(Debug, Args)]
struct DuanArgs {
    /// Squeezing of each input, dB (must be negative).
    #[arg(long, allow_hyphen_values = true)]
    squeezing: Option<f64>,
    /// Extra splitter loss on both outputs, dB.
    #[arg(long)]
    bs_loss: Option<f64>,
    /// Anti-squeezing of each input, dB.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "pure")]
    antisqueezing: Option<f64>,
    /// Use minimum-uncertainty inputs.
    #[arg(long)]
    pure: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&cli.common)?;
    let common = &cli.common;
    match &cli.command {
        Command::Model(a) => {
            if let Some(mu) = a.mu {
                cfg.mu = mu;
            }
            if let Some(eta) = a.eta {
                cfg.eta = eta;
            }
            cmd_model(&cfg, a, common, stdout, stderr)
        }
        Command::Fit(a) => cmd_fit(&cfg, a, common, stdout),
        Command::Trace(a) => {
            if let Some(p) = a.power {
                cfg.power_mw = p;
            }
            cmd_trace(&cfg, a, common, stdout, stderr)
        }
        Command::Budget(a) => {
            if let Some(m) = a.measured_db {
                cfg.measured_squeezing_db = m;
            }
            if a.eta_fit.is_some() {
                cfg.eta_fit = a.eta_fit;
            }
            cmd_budget(&cfg, common, stdout)
        }
        Command::Duan(a) => {
            if let Some(s) = a.squeezing {
                cfg.measured_squeezing_db = s;
            }
            if let Some(l) = a.bs_loss {
                cfg.bs_loss_db = l;
            }
            if let Some(x) = a.antisqueezing {
                cfg.measured_antisqueezing_db = x;
            }
            cmd_duan(&cfg, a.pure, common, stdout)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

/// Writes via `body` to `path`, or to `fallback` when no path is given.
fn write_output(
    path: Option<&Path>,
    fallback: &mut dyn Write,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(io_err(p))?;
            let mut w = BufWriter::new(file);
            body(&mut w).map_err(io_err(p))?;
            w.flush().map_err(io_err(p))
        }
        None => body(fallback).map_err(io_err(Path::new("<stdout>"))),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::Io { path: PathBuf::from("<stdout>"), source: e }
}

fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("range `{spec}` is not start:stop:step"));
    let [start, stop, step] = parts.as_slice() else {
        return Err(bad());
    };
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
    if !(step > 0.0 && stop >= start && start.is_finite() && stop.is_finite()) {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn cmd_model(
    cfg: &RunConfig,
    args: &ModelArgs,
    common: &CommonArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    let model = cfg.model()?;
    let powers = match (&args.powers, &args.range) {
        (Some(p), _) => p.clone(),
        (None, Some(r)) => parse_range(r)?,
        (None, None) => parse_range("0:28:2")?,
    };
    let rows = powers
        .iter()
        .map(|&p| Ok((p, model.squeezing_db(p)?, model.antisqueezing_db(p)?)))
        .collect::<Result<Vec<_>>>()?;

    write_output(common.out.as_deref(), stdout, |w| {
        writeln!(w, "power_mw,squeezing_db,antisqueezing_db")?;
        for (p, s, a) in &rows {
            writeln!(w, "{p:?},{s:?},{a:?}")?;
        }
        Ok(())
    })?;

    let p = cfg.power_mw;
    let (sq, anti) = (model.squeezing_db(p)?, model.antisqueezing_db(p)?);
    let summary: &mut dyn Write = if common.out.is_some() { stdout } else { stderr };
    if common.json {
        writeln!(
            summary,
            "{}",
            json!({ "power_mw": p, "mu": model.mu, "eta": model.eta,
                    "squeezing_db": sq, "antisqueezing_db": anti })
        )
    } else {
        writeln!(
            summary,
            "at {p} mW (mu = {}, eta = {}): squeezing = {sq:.3} dB, antisqueezing = {anti:.3} dB",
            model.mu, model.eta
        )
    }
    .map_err(stdout_err)?;
    Ok(EXIT_OK)
}

fn cmd_fit(cfg: &RunConfig, args: &FitArgs, common: &CommonArgs, stdout: &mut dyn Write) -> Result<i32> {
    cfg.validate()?;
    let data = match &args.dataset {
        Some(path) => DataSet::read_csv(File::open(path).map_err(io_err(path))?)?,
        None => generate_synthetic_dataset(cfg.mu, cfg.eta, &RECONSTRUCTION_POWERS_MW, cfg.sigma_db, cfg.seed)?,
    };
    if let Some(path) = &args.dump_data {
        write_output(Some(path), stdout, |w| data.write_csv(w))?;
    }
    let opts = FitOptions {
        initial: args.initial_mu.zip(args.initial_eta),
        weighting: if args.linear { Weighting::Linear } else { Weighting::Decibel },
        eta_bound: if args.unbounded { EtaBound::Unbounded } else { EtaBound::Logistic },
        power_rel_uncertainty: args.power_uncertainty,
        max_iterations: args.max_iterations,
    };
    let fit = fit_with_options(&data, &opts)?;
    let text = fit.to_report();
    let json = serde_json::to_string_pretty(&fit).expect("fit result serializes");

    if let Some(path) = &common.out {
        let (text_path, json_path) = if path.extension().is_some_and(|e| e == "json") {
            (path.with_extension("txt"), path.clone())
        } else {
            (path.clone(), path.with_extension("json"))
        };
        write_output(Some(&text_path), stdout, |w| w.write_all(text.as_bytes()))?;
        write_output(Some(&json_path), stdout, |w| writeln!(w, "{json}"))?;
    }
    if common.json {
        writeln!(stdout, "{json}")
    } else {
        write!(stdout, "{text}")
    }
    .map_err(stdout_err)?;
    Ok(if fit.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn cmd_trace(
    cfg: &RunConfig,
    args: &TraceArgs,
    common: &CommonArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32> {
    let model = cfg.model()?;
    let scan = cfg.scan_config()?;
    let mut trace = synthesize_trace(&model, cfg.power_mw, &scan)?;
    if let Some(vbw) = args.video_filter {
        trace = video_filter(&trace, vbw)?;
    }
    let ex = estimate_extrema_with_window(&trace, args.window)?;
    write_output(common.out.as_deref(), stdout, |w| trace.write_csv(w))?;

    let summary: &mut dyn Write = if common.out.is_some() { stdout } else { stderr };
    if common.json {
        let mut v = serde_json::to_value(ex).expect("extrema serialize");
        v["power_mw"] = json!(cfg.power_mw);
        v["model_squeezing_db"] = json!(model.squeezing_db(cfg.power_mw)?);
        v["model_antisqueezing_db"] = json!(model.antisqueezing_db(cfg.power_mw)?);
        writeln!(summary, "{v}")
    } else {
        writeln!(
            summary,
            "{} samples at {} mW: squeezing = {:.3} +- {:.3} dB, antisqueezing = {:.3} +- {:.3} dB \
             (model {:.3} / {:.3} dB)",
            trace.len(),
            cfg.power_mw,
            ex.squeezing_db,
            ex.squeezing_se_db,
            ex.antisqueezing_db,
            ex.antisqueezing_se_db,
            model.squeezing_db(cfg.power_mw)?,
            model.antisqueezing_db(cfg.power_mw)?
        )
    }
    .map_err(stdout_err)?;
    Ok(EXIT_OK)
}

fn cmd_budget(cfg: &RunConfig, common: &CommonArgs, stdout: &mut dyn Write) -> Result<i32> {
    let budget = cfg.loss_budget()?;
    let eta_est = budget.eta_estimated();
    let inferred = infer_source_variance(cfg.measured_squeezing_db, eta_est)?;
    let alpha = cfg
        .eta_fit
        .map(|fit| solve_waveguide_loss(fit, eta_est, cfg.length_cm, cfg.effective_length_fraction))
        .transpose()?;
    let specs = cfg.source_specs()?;
    let coupled_pump_mw = pump_budget(cfg.fundamental_power_w, &specs)?;
    let flux = pair_flux(cfg.power_mw, &specs)?;

    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    kv("eta_el", format!("{:.4}", budget.eta_el));
    kv("eta_est", format!("{eta_est:.4}"));
    kv("eta_waveguide", format!("{:.4}", budget.eta_waveguide()));
    kv("eta_total", format!("{:.4}", budget.eta_total()));
    kv("measured_squeezing_db", format!("{:.3}", cfg.measured_squeezing_db));
    kv("inferred_source_squeezing_db", format!("{inferred:.3}"));
    if let (Some(fit), Some(a)) = (cfg.eta_fit, alpha) {
        kv("eta_fit", format!("{fit:.4}"));
        kv("waveguide_loss_db_per_cm", format!("{a:.3}"));
    }
    kv("coupled_pump_mw", format!("{coupled_pump_mw:.3}"));
    kv("pair_flux_per_s", format!("{flux:.4e}"));

    if common.json {
        let v = json!({
            "eta_el": budget.eta_el,
            "eta_est": eta_est,
            "eta_waveguide": budget.eta_waveguide(),
            "eta_total": budget.eta_total(),
            "measured_squeezing_db": cfg.measured_squeezing_db,
            "inferred_source_squeezing_db": inferred,
            "eta_fit": cfg.eta_fit,
            "waveguide_loss_db_per_cm": alpha,
            "coupled_pump_mw": coupled_pump_mw,
            "pair_flux_per_s": flux,
        });
        writeln!(stdout, "{v}").map_err(stdout_err)?;
    } else {
        write!(stdout, "{out}").map_err(stdout_err)?;
    }
    if let Some(path) = &common.out {
        write_output(Some(path), stdout, |w| w.write_all(out.as_bytes()))?;
    }
    Ok(EXIT_OK)
}

fn cmd_duan(cfg: &RunConfig, pure: bool, common: &CommonArgs, stdout: &mut dyn Write) -> Result<i32> {
    if !(cfg.measured_squeezing_db < 0.0) {
        return Err(Error::Config(format!(
            "squeezing must be negative (dB below shot noise), got {}",
            cfg.measured_squeezing_db
        )));
    }
    let anti = if pure {
        AntiSqueezing::Pure
    } else {
        AntiSqueezing::Measured(cfg.measured_antisqueezing_db)
    };
    let report = duan_variance(&epr_from_two_squeezers(cfg.measured_squeezing_db, anti, cfg.bs_loss_db)?)?;
    let body = if common.json {
        format!("{}\n", serde_json::to_string(&report).expect("report serializes"))
    } else {
        report.to_text()
    };
    write!(stdout, "{body}").map_err(stdout_err)?;
    if let Some(path) = &common.out {
        write_output(Some(path), stdout, |w| w.write_all(body.as_bytes()))?;
    }
    Ok(if report.entangled { EXIT_OK } else { EXIT_SEPARABLE })
}
