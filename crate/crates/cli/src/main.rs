//! `chshsim` command-line driver.
//!
//! Exit codes: 0 success, 1 usage, 2 domain or input error, 3 numerical
//! degeneracy (singularity, no violation, ...), 4 I/O.

// `!(x > 0.0)` is used on purpose so that NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chshsim::calibration::{
    c_gamma_from_point, estimate_c_gamma, estimate_channel, read_records, tau_to_db, write_records, CalibrationPoint,
    CalibrationResult, MeasuredRecord,
};
use chshsim::model::chsh;
use chshsim::montecarlo::{chsh_from_counts, correlation_from_counts, run_experiment_sharded, CountRecord};
use chshsim::optimizer::{optimize_mu, sweep_mu};
use chshsim::oracle::identify_g;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{CalibrateOpts, McOpts, Merge, OptimizeOpts, SweepOpts, ValidateOpts};
use output::{artifact_json, csv_comments, emit, write_atomic, write_metadata};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(chshsim::Error),
    Io(String),
}

impl From<chshsim::Error> for CliError {
    fn from(e: chshsim::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use chshsim::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                E::Domain(_) | E::Input(_) | E::Regime(_) => 2,
                E::Singularity { .. } | E::Degenerate(_) | E::State(_) | E::NoViolation(_) => 3,
                E::Csv(c) if !c.is_io_error() => 2,
                E::Io(_) | E::Csv(_) | E::Json(_) => 4,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "chshsim", version, about = "CHSH experiments with multi-pair photon sources over lossy channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct IoArgs {
    /// JSON config file, or an artifact with an embedded config; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent. A `<out>.meta.json` sidecar is written alongside
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate S, ΔS and (S-2)/ΔS over a range of μ
    Sweep {
        #[command(flatten)]
        io: IoArgs,
        /// Output format [default: json if --out ends in .json, else csv]
        #[arg(long)]
        format: Option<Format>,
        #[command(flatten)]
        opts: SweepOpts,
    },
    /// Find the μ that maximizes (S-2)/ΔS
    Optimize {
        #[command(flatten)]
        io: IoArgs,
        /// Print only the JSON report on stdout
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        opts: OptimizeOpts,
    },
    /// Fit the closed-form model candidates against the exact Gaussian oracle
    Validate {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        opts: ValidateOpts,
    },
    /// Monte Carlo count simulation
    Mc {
        #[command(flatten)]
        io: IoArgs,
        /// Also write the empirical CHSH report (JSON) here
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        opts: McOpts,
    },
    /// Estimate τ_A, τ_B, μ and C_γ from a count file
    Calibrate {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        opts: CalibrateOpts,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Sweep { .. } => "sweep",
            Command::Optimize { .. } => "optimize",
            Command::Validate { .. } => "validate",
            Command::Mc { .. } => "mc",
            Command::Calibrate { .. } => "calibrate",
        }
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn merged<T: Merge + serde::de::DeserializeOwned>(flags: T, path: Option<&Path>) -> Result<T, CliError> {
    match path {
        Some(p) => Ok(flags.merge(config::load(p)?)),
        None => Ok(flags),
    }
}

fn finish<C: Serialize>(command: &str, config: &C, outputs: &[Option<&Path>]) -> Result<(), CliError> {
    let files: Vec<&Path> = outputs.iter().flatten().copied().collect();
    write_metadata(command, config, &files)
}

fn cmd_sweep(io: IoArgs, format: Option<Format>, opts: SweepOpts) -> Result<(), CliError> {
    let (exp, cfg) = merged(opts, io.config.as_deref())?.resolve()?;
    let result = sweep_mu(&exp, cfg.mu_min.unwrap(), cfg.mu_max.unwrap(), cfg.points.unwrap(), cfg.scale.unwrap())?;
    let format = format.unwrap_or(match io.out.as_ref().and_then(|p| p.extension()) {
        Some(ext) if ext == "json" => Format::Json,
        _ => Format::Csv,
    });
    let bytes = match format {
        Format::Csv => {
            let mut buf = Vec::new();
            result.write_csv(&mut buf, &csv_comments("sweep", &cfg)?)?;
            buf
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Payload<'a> {
                points: &'a [chshsim::optimizer::SweepPoint],
            }
            artifact_json("sweep", &cfg, Payload { points: &result.points })?
        }
    };
    emit(io.out.as_deref(), &bytes)?;
    let flagged = result.points.iter().filter(|p| p.flag.is_some()).count();
    if flagged > 0 {
        warn(format!("{flagged} of {} points could not be evaluated (see the flag column)", result.points.len()));
    }
    if let Some(best) = result.best() {
        eprintln!("best sampled point: mu = {:.6}, S = {:.6}, (S-2)/dS = {:.4}", best.mu, best.s, best.fom);
    }
    if let Some(mu) = result.crossing(2.0) {
        eprintln!("S crosses 2 at mu = {mu:.6}");
    }
    finish("sweep", &cfg, &[io.out.as_deref()])
}

fn cmd_optimize(io: IoArgs, json: bool, opts: OptimizeOpts) -> Result<(), CliError> {
    let (exp, cfg) = merged(opts, io.config.as_deref())?.resolve()?;
    let optimum = optimize_mu(&exp, (cfg.mu_min.unwrap(), cfg.mu_max.unwrap()), cfg.tol.unwrap())?;
    let report = exp.report(optimum.mu_star)?;
    #[derive(Serialize)]
    struct Payload<'a> {
        optimum: &'a chshsim::optimizer::Optimum,
        report: &'a chshsim::model::ChshReport,
    }
    let bytes = artifact_json("optimize", &cfg, Payload { optimum: &optimum, report: &report })?;
    if let Some(out) = io.out.as_deref() {
        write_atomic(out, &bytes)?;
    }
    if json {
        emit(None, &bytes)?;
    } else {
        println!("mu*        = {:.6}", optimum.mu_star);
        println!("(S-2)/dS*  = {:.4}", optimum.fom_star);
        println!("S at mu*   = {:.6}", optimum.s_at_star);
        println!("dS at mu*  = {:.6e}", optimum.delta_s_at_star);
        println!("bracket    = [{:.6}, {:.6}] after {} evaluations", optimum.bracket.0, optimum.bracket.1, optimum.evaluations);
    }
    finish("optimize", &cfg, &[io.out.as_deref()])
}

fn cmd_validate(io: IoArgs, opts: ValidateOpts) -> Result<(), CliError> {
    let (grid, cfg) = merged(opts, io.config.as_deref())?.resolve()?;
    let report = identify_g(&grid)?;
    eprintln!("{:<8} {:<11} {:>14} {:>7}", "G", "form", "max |dE|", "pass");
    for fit in &report.candidates {
        let dev = fit.max_deviation.map_or_else(|| format!("fails at {}", fit.failed_points), |d| format!("{d:.3e}"));
        eprintln!(
            "{:<8} {:<11} {:>14} {:>7}",
            fit.candidate.g_model.name(),
            fit.candidate.coefficient_form.name(),
            dev,
            if fit.passed { "yes" } else { "no" }
        );
    }
    match report.selected {
        Some(sel) => eprintln!("selected: {} / {}", sel.g_model.name(), sel.coefficient_form.name()),
        None => warn(format!("no candidate agrees with the oracle within {}", report.tolerance)),
    }
    if report.degenerate {
        warn("several candidates pass: the grid gains are too small to tell them apart");
    }
    if report.mismatch {
        warn("the selected candidate differs from the library default");
    }
    #[derive(Serialize)]
    struct Payload<'a> {
        report: &'a chshsim::oracle::FitReport,
    }
    emit(io.out.as_deref(), &artifact_json("validate", &cfg, Payload { report: &report })?)?;
    finish("validate", &cfg, &[io.out.as_deref()])
}

#[derive(Serialize)]
struct SettingReport {
    phi_a: f64,
    phi_b: f64,
    windows: u64,
    coincidences: u64,
    e: f64,
    delta_e: f64,
    e_model: f64,
}

#[derive(Serialize)]
struct McPayload {
    mu: f64,
    settings: Vec<SettingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<chshsim::model::ChshReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic: Option<chshsim::model::ChshReport>,
    /// (S_empirical - S_analytic) / ΔS_empirical
    #[serde(skip_serializing_if = "Option::is_none")]
    s_deviation_sigma: Option<f64>,
}

fn cmd_mc(io: IoArgs, report_path: Option<PathBuf>, opts: McOpts) -> Result<(), CliError> {
    let (run, cfg) = merged(opts, io.config.as_deref())?.resolve()?;
    let exp = &run.experiment;
    let source = exp.source(run.mu)?;
    let settings: Vec<(f64, f64)> = match cfg.setting {
        Some(s) => vec![s],
        None => exp.angles.settings().to_vec(),
    };
    let t_acq = cfg.setup.t_acq.unwrap();
    let records: Vec<CountRecord> = settings
        .iter()
        .enumerate()
        .map(|(k, &s)| run_experiment_sharded(&source, &exp.channel, s, t_acq, run.seed.wrapping_add(k as u64), run.shards))
        .collect::<chshsim::Result<_>>()?;

    let loss_db = tau_to_db(exp.channel.tau_a * exp.channel.tau_b)?;
    let power = run.power_mw.unwrap_or(f64::NAN);
    let measured: Vec<MeasuredRecord> = records.iter().map(|r| MeasuredRecord::from_count_record(power, loss_db, r)).collect();
    let mut csv = Vec::new();
    write_records(&mut csv, &measured, &csv_comments("mc", &cfg)?)?;
    emit(io.out.as_deref(), &csv)?;

    let mut setting_reports = Vec::new();
    for r in &records {
        let theta = (r.phi_a - r.phi_b).to_radians();
        let e_model = chshsim::model::correlation(theta, &source, &exp.channel)?;
        let (e, delta_e) = correlation_from_counts(&r.squashed(), exp.alpha).unwrap_or((f64::NAN, f64::NAN));
        eprintln!(
            "phi_a = {:>6.2}, phi_b = {:>6.2}: {} coincidences, E = {e:.5} ± {delta_e:.5} (model {e_model:.5})",
            r.phi_a,
            r.phi_b,
            r.coincidences()
        );
        setting_reports.push(SettingReport {
            phi_a: r.phi_a,
            phi_b: r.phi_b,
            windows: r.windows,
            coincidences: r.coincidences(),
            e,
            delta_e,
            e_model,
        });
    }
    let mut payload = McPayload { mu: run.mu, settings: setting_reports, empirical: None, analytic: None, s_deviation_sigma: None };
    if cfg.setting.is_none() {
        match chsh_from_counts(&records, &exp.angles, exp.alpha) {
            Ok(emp) => {
                let ana = chsh(&source, &exp.channel, &exp.angles, exp.alpha, t_acq)?;
                let z = (emp.s - ana.s) / emp.delta_s;
                eprintln!("S = {:.5} ± {:.5} (model {:.5}, {z:+.2} sigma)", emp.s, emp.delta_s, ana.s);
                payload.empirical = Some(emp);
                payload.analytic = Some(ana);
                payload.s_deviation_sigma = Some(z);
            }
            Err(e) => warn(format!("no empirical CHSH report: {e}")),
        }
    }
    if let Some(p) = report_path.as_deref() {
        write_atomic(p, &artifact_json("mc", &cfg, payload)?)?;
    }
    finish("mc", &cfg, &[io.out.as_deref(), report_path.as_deref()])
}

#[derive(Serialize)]
struct RecordEstimate {
    power_mw: f64,
    tau_a: f64,
    tau_b: f64,
    mu: f64,
}

#[derive(Serialize)]
struct CalibratePayload {
    records: Vec<RecordEstimate>,
    /// True when C_γ comes from a single point without a fit.
    single_point: bool,
    result: CalibrationResult,
}

fn cmd_calibrate(io: IoArgs, opts: CalibrateOpts) -> Result<(), CliError> {
    let cfg = merged(opts, io.config.as_deref())?.resolve()?;
    let input = cfg.input.as_deref().unwrap();
    let file = std::fs::File::open(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
    let records = read_records(file)?;
    let t_int = cfg.t_int_ns.unwrap() / 1e9;
    let threshold = cfg.regime_threshold.unwrap();
    let convention = cfg.mu_convention.unwrap();

    if records.iter().any(MeasuredRecord::is_lossy) {
        warn("pairwise coincidence columns only: multi-click patterns were already squashed, so per-pattern information is lost");
    }
    if records.iter().any(|r| (r.phi_a_deg - r.phi_b_deg).rem_euclid(180.0).min((r.phi_b_deg - r.phi_a_deg).rem_euclid(180.0)) > 1e-9) {
        warn("some records are not at matched bases; the channel estimate assumes phi_a = phi_b");
    }
    let mut estimates = Vec::with_capacity(records.len());
    for r in &records {
        let e = estimate_channel(&r.rates()?, t_int, threshold)?;
        estimates.push(RecordEstimate { power_mw: r.power_mw, tau_a: e.tau_a, tau_b: e.tau_b, mu: e.mu(convention) });
    }
    let (result, single_point) = if records.len() >= 2 {
        (estimate_c_gamma(&records, t_int, threshold, convention)?, false)
    } else {
        warn("a single power point: C_γ = asinh(√μ)/√P without a fit");
        let e = &estimates[0];
        let c_gamma = c_gamma_from_point(e.power_mw, e.mu)?;
        let point = CalibrationPoint { power_mw: e.power_mw, mu: e.mu, gamma: e.mu.sqrt().asinh(), residual: 0.0 };
        (CalibrationResult { tau_a: e.tau_a, tau_b: e.tau_b, c_gamma, mu_convention: convention, points: vec![point] }, true)
    };
    eprintln!(
        "tau_A = {:.4}, tau_B = {:.4}, C_gamma = {:.5} ({} point{})",
        result.tau_a,
        result.tau_b,
        result.c_gamma,
        result.points.len(),
        if result.points.len() == 1 { "" } else { "s" }
    );
    let payload = CalibratePayload { records: estimates, single_point, result };
    emit(io.out.as_deref(), &artifact_json("calibrate", &cfg, payload)?)?;
    finish("calibrate", &cfg, &[io.out.as_deref()])
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sweep { io, format, opts } => cmd_sweep(io, format, opts),
        Command::Optimize { io, json, opts } => cmd_optimize(io, json, opts),
        Command::Validate { io, opts } => cmd_validate(io, opts),
        Command::Mc { io, report, opts } => cmd_mc(io, report, opts),
        Command::Calibrate { io, opts } => cmd_calibrate(io, opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let name = cli.command.name();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(msg) => {
                    let mut cmd = Cli::command();
                    cmd.build();
                    let usage = cmd.find_subcommand_mut(name).map(|c| c.render_usage().to_string()).unwrap_or_default();
                    eprintln!("error: {msg}\n\n{usage}\n\nFor more information, try '--help'.");
                }
                CliError::Core(e) => eprintln!("error: {e}"),
                CliError::Io(msg) => eprintln!("error: {msg}"),
            }
            ExitCode::from(err.exit_code())
        }
    }
}
