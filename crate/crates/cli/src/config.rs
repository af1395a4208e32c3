//! Command options shared by flags and JSON config files.
//!
//! Every option is optional at parse time. Flags are merged over the
//! config file, defaults fill the rest, and the fully resolved options are
//! echoed into each artifact in the same schema, so an artifact's config
//! can be fed back through `--config`.

use std::path::{Path, PathBuf};

use chshsim::calibration::{db_to_tau, DEFAULT_REGIME_THRESHOLD};
use chshsim::model::{AngleSet, ChannelParams, CoefficientForm, GModel, MuConvention};
use chshsim::optimizer::{Scale, DEFAULT_MU_MAX, DEFAULT_TOL};
use clap::Args;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default channel: 10 dB and 9.2 dB of loss.
const DEFAULT_LOSS_A_DB: f64 = -10.0;
const DEFAULT_LOSS_B_DB: f64 = -9.2;
const DEFAULT_T_INT_NS: f64 = 3.0;
const DEFAULT_C_GAMMA: f64 = 0.0469;

pub trait Merge {
    /// Keep values set in `self`, take the rest from `file`.
    fn merge(self, file: Self) -> Self;
}

macro_rules! merge_options {
    ($ty:ty { $($field:ident),* $(,)? } $(nested { $($sub:ident),* })?) => {
        impl Merge for $ty {
            fn merge(mut self, file: Self) -> Self {
                $( if self.$field.is_none() { self.$field = file.$field; } )*
                $( $( self.$sub = self.$sub.merge(file.$sub); )* )?
                self
            }
        }
    };
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("`{}` is not a number", x.trim())))
        .collect()
}

fn parse_angles(s: &str) -> Result<AngleSet, String> {
    match parse_list(s)?.as_slice() {
        &[phi_a1, phi_a2, phi_b1, phi_b2] => Ok(AngleSet { phi_a1, phi_a2, phi_b1, phi_b2 }),
        _ => Err("expected four angles a1,a2,b1,b2 in degrees".into()),
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    match parse_list(s)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err("expected two angles phi_a,phi_b in degrees".into()),
    }
}

fn input_error(msg: impl Into<String>) -> CliError {
    CliError::Core(chshsim::Error::Input(msg.into()))
}

/// Channel transmittance per arm, in dB of loss or as a linear factor.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelOpts {
    /// Alice arm loss in dB (sign ignored) [default: -10]
    #[arg(long, allow_negative_numbers = true, conflicts_with = "tau_a")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_a_db: Option<f64>,
    /// Bob arm loss in dB (sign ignored) [default: -9.2]
    #[arg(long, allow_negative_numbers = true, conflicts_with = "tau_b")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_b_db: Option<f64>,
    /// Alice arm transmittance in (0, 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_a: Option<f64>,
    /// Bob arm transmittance in (0, 1]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_b: Option<f64>,
}

impl Merge for ChannelOpts {
    fn merge(self, file: Self) -> Self {
        // A flag for an arm, in either unit, replaces that whole arm.
        let (tau_a_db, tau_a) =
            if self.tau_a_db.is_some() || self.tau_a.is_some() { (self.tau_a_db, self.tau_a) } else { (file.tau_a_db, file.tau_a) };
        let (tau_b_db, tau_b) =
            if self.tau_b_db.is_some() || self.tau_b.is_some() { (self.tau_b_db, self.tau_b) } else { (file.tau_b_db, file.tau_b) };
        ChannelOpts { tau_a_db, tau_b_db, tau_a, tau_b }
    }
}

impl ChannelOpts {
    fn arm(db: Option<f64>, linear: Option<f64>, default_db: f64, name: &str) -> Result<f64, CliError> {
        match (db, linear) {
            (Some(_), Some(_)) => Err(input_error(format!("both {name}_db and {name} given"))),
            (None, Some(t)) => Ok(t),
            (db, None) => Ok(db_to_tau(db.unwrap_or(default_db))?),
        }
    }

    /// Resolved channel, echoed as linear transmittances.
    pub fn resolve(&self) -> Result<(ChannelParams, ChannelOpts), CliError> {
        let a = Self::arm(self.tau_a_db, self.tau_a, DEFAULT_LOSS_A_DB, "tau_a")?;
        let b = Self::arm(self.tau_b_db, self.tau_b, DEFAULT_LOSS_B_DB, "tau_b")?;
        let channel = ChannelParams::new(a, b)?;
        Ok((channel, ChannelOpts { tau_a: Some(a), tau_b: Some(b), ..Default::default() }))
    }
}

/// Timing, uncertainty scaling and model choices.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetupOpts {
    /// Coincidence window in ns [default: 3]
    #[arg(long)]
    pub t_int_ns: Option<f64>,
    /// Acquisition time per setting in s [default: 1]
    #[arg(long)]
    pub t_acq: Option<f64>,
    /// Count-uncertainty scale α, ΔN = α√N [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Basis angles a1,a2,b1,b2 in degrees [default: 0,45,22.5,67.5]
    #[arg(long, value_parser = parse_angles, allow_negative_numbers = true)]
    pub angles: Option<AngleSet>,
    /// Gain-to-G mapping: tanh2, tanh, sinh2 [default: tanh2]
    #[arg(long)]
    pub g_model: Option<GModel>,
    /// Coefficient form: reciprocal, tabulated [default: reciprocal]
    #[arg(long)]
    pub coefficient_form: Option<CoefficientForm>,
    /// Meaning of μ: per-mode-pair, total-pairs [default: per-mode-pair]
    #[arg(long)]
    pub mu_convention: Option<MuConvention>,
}

merge_options!(SetupOpts { t_int_ns, t_acq, alpha, angles, g_model, coefficient_form, mu_convention });

impl SetupOpts {
    pub fn resolve(&self) -> SetupOpts {
        SetupOpts {
            t_int_ns: Some(self.t_int_ns.unwrap_or(DEFAULT_T_INT_NS)),
            t_acq: Some(self.t_acq.unwrap_or(1.0)),
            alpha: Some(self.alpha.unwrap_or(1.0)),
            angles: Some(self.angles.unwrap_or_default()),
            g_model: Some(self.g_model.unwrap_or_default()),
            coefficient_form: Some(self.coefficient_form.unwrap_or_default()),
            mu_convention: Some(self.mu_convention.unwrap_or_default()),
        }
    }

    /// Coincidence window in seconds; call on resolved options.
    pub fn t_int(&self) -> f64 {
        self.t_int_ns.expect("resolved") / 1e9
    }
}

fn experiment(channel: &ChannelOpts, setup: &SetupOpts) -> Result<(chshsim::optimizer::Experiment, ChannelOpts, SetupOpts), CliError> {
    let (ch, channel) = channel.resolve()?;
    let setup = setup.resolve();
    let mut exp = chshsim::optimizer::Experiment::new(ch, setup.t_int(), setup.t_acq.unwrap(), setup.alpha.unwrap());
    exp.angles = setup.angles.unwrap();
    exp.g_model = setup.g_model.unwrap();
    exp.coefficient_form = setup.coefficient_form.unwrap();
    exp.mu_convention = setup.mu_convention.unwrap();
    Ok((exp, channel, setup))
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOpts {
    #[command(flatten)]
    pub channel: ChannelOpts,
    #[command(flatten)]
    pub setup: SetupOpts,
    /// Smallest μ [default: 1e-4]
    #[arg(long)]
    pub mu_min: Option<f64>,
    /// Largest μ [default: 0.9]
    #[arg(long)]
    pub mu_max: Option<f64>,
    /// Number of μ values [default: 200]
    #[arg(long)]
    pub points: Option<usize>,
    /// Spacing of μ values: log, linear [default: log]
    #[arg(long)]
    pub scale: Option<Scale>,
}

merge_options!(SweepOpts { mu_min, mu_max, points, scale } nested { channel, setup });

impl SweepOpts {
    pub fn resolve(&self) -> Result<(chshsim::optimizer::Experiment, SweepOpts), CliError> {
        let (exp, channel, setup) = experiment(&self.channel, &self.setup)?;
        Ok((
            exp,
            SweepOpts {
                channel,
                setup,
                mu_min: Some(self.mu_min.unwrap_or(1e-4)),
                mu_max: Some(self.mu_max.unwrap_or(DEFAULT_MU_MAX)),
                points: Some(self.points.unwrap_or(200)),
                scale: Some(self.scale.unwrap_or(Scale::Log)),
            },
        ))
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeOpts {
    #[command(flatten)]
    pub channel: ChannelOpts,
    #[command(flatten)]
    pub setup: SetupOpts,
    /// Lower end of the μ bracket [default: 1e-4]
    #[arg(long)]
    pub mu_min: Option<f64>,
    /// Upper end of the μ bracket [default: 0.9]
    #[arg(long)]
    pub mu_max: Option<f64>,
    /// Final bracket width in μ [default: 1e-4]
    #[arg(long)]
    pub tol: Option<f64>,
}

merge_options!(OptimizeOpts { mu_min, mu_max, tol } nested { channel, setup });

impl OptimizeOpts {
    pub fn resolve(&self) -> Result<(chshsim::optimizer::Experiment, OptimizeOpts), CliError> {
        let (exp, channel, setup) = experiment(&self.channel, &self.setup)?;
        Ok((
            exp,
            OptimizeOpts {
                channel,
                setup,
                mu_min: Some(self.mu_min.unwrap_or(1e-4)),
                mu_max: Some(self.mu_max.unwrap_or(DEFAULT_MU_MAX)),
                tol: Some(self.tol.unwrap_or(DEFAULT_TOL)),
            },
        ))
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateOpts {
    /// Largest per-mode-pair gain γ on the grid, at most 0.6 [default: 0.5]
    #[arg(long)]
    pub gamma_max: Option<f64>,
    /// Number of gains, evenly spaced on (0, gamma_max] [default: 10]
    #[arg(long)]
    pub gamma_points: Option<usize>,
    /// Comma-separated transmittances; all ordered pairs are used [default: 0.1,0.5,0.9]
    #[arg(long)]
    pub taus: Option<String>,
    /// Number of angles spanning [0, π/2] [default: 16]
    #[arg(long)]
    pub theta_points: Option<usize>,
}

merge_options!(ValidateOpts { gamma_max, gamma_points, taus, theta_points });

impl ValidateOpts {
    pub fn resolve(&self) -> Result<(chshsim::oracle::FitGrid, ValidateOpts), CliError> {
        let resolved = ValidateOpts {
            gamma_max: Some(self.gamma_max.unwrap_or(0.5)),
            gamma_points: Some(self.gamma_points.unwrap_or(10)),
            taus: Some(self.taus.clone().unwrap_or_else(|| "0.1,0.5,0.9".into())),
            theta_points: Some(self.theta_points.unwrap_or(16)),
        };
        let taus = parse_list(resolved.taus.as_deref().unwrap()).map_err(|e| input_error(format!("taus: {e}")))?;
        let grid = chshsim::oracle::FitGrid::with_gamma_max(
            resolved.gamma_max.unwrap(),
            resolved.gamma_points.unwrap(),
            &taus,
            resolved.theta_points.unwrap(),
        );
        Ok((grid, resolved))
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOpts {
    #[command(flatten)]
    pub channel: ChannelOpts,
    #[command(flatten)]
    pub setup: SetupOpts,
    /// Mean photon number
    #[arg(long, conflicts_with = "power_mw")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Pump power in mW, converted with μ = sinh²(C_γ √P)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_mw: Option<f64>,
    /// Calibration constant used with --power-mw [default: 0.0469]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_gamma: Option<f64>,
    /// Simulate one setting phi_a,phi_b (degrees) instead of the four CHSH settings
    #[arg(long, value_parser = parse_pair, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<(f64, f64)>,
    /// Random seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent random streams per setting [default: 1]
    #[arg(long)]
    pub shards: Option<u64>,
}

impl Merge for McOpts {
    fn merge(mut self, file: Self) -> Self {
        // μ and pump power are alternatives; a flag for either wins.
        if self.mu.is_none() && self.power_mw.is_none() {
            self.mu = file.mu;
            self.power_mw = file.power_mw;
        }
        self.c_gamma = self.c_gamma.or(file.c_gamma);
        self.setting = self.setting.or(file.setting);
        self.seed = self.seed.or(file.seed);
        self.shards = self.shards.or(file.shards);
        self.channel = self.channel.merge(file.channel);
        self.setup = self.setup.merge(file.setup);
        self
    }
}

pub struct McRun {
    pub experiment: chshsim::optimizer::Experiment,
    pub mu: f64,
    pub power_mw: Option<f64>,
    pub seed: u64,
    pub shards: u64,
}

impl McOpts {
    pub fn resolve(&self) -> Result<(McRun, McOpts), CliError> {
        let (experiment, channel, setup) = experiment(&self.channel, &self.setup)?;
        let (mu, c_gamma) = match (self.mu, self.power_mw) {
            (Some(_), Some(_)) => return Err(input_error("both mu and power_mw given")),
            (Some(mu), None) => (mu, None),
            (None, Some(p)) => {
                let c = self.c_gamma.unwrap_or(DEFAULT_C_GAMMA);
                (chshsim::calibration::mu_at_power(p, c)?, Some(c))
            }
            (None, None) => return Err(CliError::Usage("one of --mu or --power-mw is required".into())),
        };
        let resolved = McOpts {
            channel,
            setup,
            mu: self.mu,
            power_mw: self.power_mw,
            c_gamma,
            setting: self.setting,
            seed: Some(self.seed.unwrap_or(1)),
            shards: Some(self.shards.unwrap_or(1)),
        };
        let run = McRun {
            experiment,
            mu,
            power_mw: self.power_mw,
            seed: resolved.seed.unwrap(),
            shards: resolved.shards.unwrap(),
        };
        Ok((run, resolved))
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateOpts {
    /// Count file (CSV)
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Coincidence window in ns [default: 3]
    #[arg(long)]
    pub t_int_ns: Option<f64>,
    /// Meaning of the reported μ: per-mode-pair, total-pairs [default: per-mode-pair]
    #[arg(long)]
    pub mu_convention: Option<MuConvention>,
    /// Largest accepted N⊥/N∥ [default: 0.02]
    #[arg(long)]
    pub regime_threshold: Option<f64>,
}

merge_options!(CalibrateOpts { input, t_int_ns, mu_convention, regime_threshold });

impl CalibrateOpts {
    pub fn resolve(&self) -> Result<CalibrateOpts, CliError> {
        let Some(input) = self.input.clone() else {
            return Err(CliError::Usage("an input count file is required".into()));
        };
        Ok(CalibrateOpts {
            input: Some(input),
            t_int_ns: Some(self.t_int_ns.unwrap_or(DEFAULT_T_INT_NS)),
            mu_convention: Some(self.mu_convention.unwrap_or_default()),
            regime_threshold: Some(self.regime_threshold.unwrap_or(DEFAULT_REGIME_THRESHOLD)),
        })
    }
}

/// Load options from a config file, or from the config embedded in an
/// artifact (a JSON object with a `config` field, or a `# config:` line).
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| input_error(format!("config {}: {e}", path.display()));
    if text.trim_start().starts_with('#') {
        let line = text
            .lines()
            .find_map(|l| l.strip_prefix("# config: "))
            .ok_or_else(|| input_error(format!("{} has no embedded config", path.display())))?;
        return serde_json::from_str(line).map_err(bad);
    }
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(bad)
}
