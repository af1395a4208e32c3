//! Sweeps of the CHSH statistics over the mean photon number and
//! maximization of the figure of merit `(S - 2) / ΔS`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{chsh, AngleSet, ChannelParams, ChshReport, CoefficientForm, GModel, MuConvention, SourceParams};

/// Default upper limit of the μ search range.
pub const DEFAULT_MU_MAX: f64 = 0.9;
/// Default width of the final golden-section bracket.
pub const DEFAULT_TOL: f64 = 1e-4;
const PRE_SWEEP_POINTS: usize = 64;

/// Everything except μ needed to evaluate a CHSH report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub channel: ChannelParams,
    /// Coincidence window in seconds.
    pub t_int: f64,
    /// Acquisition time per setting in seconds.
    pub t_acq: f64,
    pub alpha: f64,
    pub angles: AngleSet,
    pub g_model: GModel,
    pub coefficient_form: CoefficientForm,
    pub mu_convention: MuConvention,
}

impl Experiment {
    pub fn new(channel: ChannelParams, t_int: f64, t_acq: f64, alpha: f64) -> Self {
        Experiment {
            channel,
            t_int,
            t_acq,
            alpha,
            angles: AngleSet::default(),
            g_model: GModel::default(),
            coefficient_form: CoefficientForm::default(),
            mu_convention: MuConvention::default(),
        }
    }

    /// Check the μ-independent parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(domain(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.t_acq > 0.0 && self.t_acq.is_finite()) {
            return Err(domain(format!("acquisition time must be > 0, got {}", self.t_acq)));
        }
        if !(self.t_int > 0.0 && self.t_int.is_finite()) {
            return Err(domain(format!("coincidence window must be > 0, got {}", self.t_int)));
        }
        Ok(())
    }

    pub fn source(&self, mu: f64) -> Result<SourceParams> {
        Ok(SourceParams::from_mu(mu, self.t_int)?
            .with_g_model(self.g_model)
            .with_coefficient_form(self.coefficient_form)
            .with_mu_convention(self.mu_convention))
    }

    pub fn report(&self, mu: f64) -> Result<ChshReport> {
        chsh(&self.source(mu)?, &self.channel, &self.angles, self.alpha, self.t_acq)
    }

    pub fn fom(&self, mu: f64) -> Result<f64> {
        Ok(self.report(mu)?.fom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "lin" => Ok(Scale::Linear),
            "log" => Ok(Scale::Log),
            other => Err(Error::Input(format!("unknown scale `{other}`"))),
        }
    }
}

/// `n` points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, n: usize, scale: Scale) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / last;
            match scale {
                Scale::Linear => lo + t * (hi - lo),
                Scale::Log => (lo.ln() + t * (hi.ln() - lo.ln())).exp(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub mu: f64,
    pub s: f64,
    pub delta_s: f64,
    pub fom: f64,
    /// Evaluation error at this point, if any; the numeric fields are NaN.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub experiment: Experiment,
    pub scale: Scale,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Valid point with the largest figure of merit.
    pub fn best(&self) -> Option<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.flag.is_none())
            .max_by(|a, b| a.fom.total_cmp(&b.fom))
    }

    /// Linear interpolation of the first downward crossing of `S = level`.
    pub fn crossing(&self, level: f64) -> Option<f64> {
        self.points.windows(2).find_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            if a.flag.is_some() || b.flag.is_some() {
                return None;
            }
            if a.s >= level && b.s < level {
                Some(a.mu + (a.s - level) / (a.s - b.s) * (b.mu - a.mu))
            } else {
                None
            }
        })
    }

    /// CSV with columns `mu, s, delta_s, fom, flag`; `comments` become
    /// leading `#` lines.
    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["mu", "s", "delta_s", "fom", "flag"])?;
        for p in &self.points {
            w.write_record([
                p.mu.to_string(),
                p.s.to_string(),
                p.delta_s.to_string(),
                p.fom.to_string(),
                p.flag.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(domain(format!("μ range must satisfy 0 < min < max, got [{lo}, {hi}]")));
    }
    Ok(())
}

fn evaluate(experiment: &Experiment, mu: f64) -> SweepPoint {
    match experiment.report(mu) {
        Ok(r) => SweepPoint { mu, s: r.s, delta_s: r.delta_s, fom: r.fom, flag: None },
        Err(e) => SweepPoint { mu, s: f64::NAN, delta_s: f64::NAN, fom: f64::NAN, flag: Some(e.to_string()) },
    }
}

/// Evaluate the CHSH statistics on `n_points` values of μ. Points that fail
/// to evaluate are kept with a flag.
pub fn sweep_mu(experiment: &Experiment, mu_min: f64, mu_max: f64, n_points: usize, scale: Scale) -> Result<SweepResult> {
    check_range(mu_min, mu_max)?;
    if n_points < 2 {
        return Err(domain(format!("a sweep needs at least 2 points, got {n_points}")));
    }
    // Validate the fixed parameters once so that they are not reported per point.
    experiment.validate()?;
    experiment.source(mu_min)?;
    let points = grid(mu_min, mu_max, n_points, scale)
        .into_par_iter()
        .map(|mu| evaluate(experiment, mu))
        .collect();
    Ok(SweepResult { experiment: *experiment, scale, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    GoldenSection,
    GridRefine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub mu_star: f64,
    pub fom_star: f64,
    pub s_at_star: f64,
    pub delta_s_at_star: f64,
    /// Final search interval.
    pub bracket: (f64, f64),
    pub evaluations: usize,
    pub method: SearchMethod,
}

fn is_unimodal(values: &[f64]) -> bool {
    if values.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut falling = false;
    for w in values.windows(2) {
        if w[1] < w[0] {
            falling = true;
        } else if falling && w[1] > w[0] {
            return false;
        }
    }
    true
}

/// Maximize `(S - 2)/ΔS` over μ in `bracket`, down to a final interval
/// of width `tol`.
pub fn optimize_mu(experiment: &Experiment, bracket: (f64, f64), tol: f64) -> Result<Optimum> {
    let (lo, hi) = bracket;
    check_range(lo, hi)?;
    if !(tol > 0.0) {
        return Err(domain(format!("tolerance must be > 0, got {tol}")));
    }
    experiment.validate()?;
    experiment.source(lo)?;
    let scale = if hi / lo > 10.0 { Scale::Log } else { Scale::Linear };
    let xs = grid(lo, hi, PRE_SWEEP_POINTS, scale);
    let results: Vec<Result<f64>> = xs.par_iter().map(|&mu| experiment.fom(mu)).collect();
    let mut evaluations = xs.len();
    if results.iter().all(|r| r.is_err()) {
        return Err(results.into_iter().find_map(|r| r.err()).expect("non-empty pre-sweep"));
    }
    let ys: Vec<f64> = results.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect();
    if !ys.iter().any(|&y| y > 0.0) {
        return Err(Error::NoViolation(format!(
            "(S - 2)/ΔS <= 0 at all {} sampled points in [{lo}, {hi}]",
            xs.len()
        )));
    }
    let best = (0..xs.len())
        .filter(|&i| ys[i].is_finite())
        .max_by(|&i, &j| ys[i].total_cmp(&ys[j]))
        .expect("a positive value exists");
    let mut a = xs[best.saturating_sub(1)];
    let mut b = xs[(best + 1).min(xs.len() - 1)];
    let f = |mu: f64| experiment.fom(mu).unwrap_or(f64::NEG_INFINITY);

    let method = if is_unimodal(&ys) {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (f(c), f(d));
        evaluations += 2;
        while b - a > tol {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = f(d);
            }
            evaluations += 1;
        }
        SearchMethod::GoldenSection
    } else {
        while b - a > tol {
            let xs = grid(a, b, 17, Scale::Linear);
            let ys: Vec<f64> = xs.iter().map(|&mu| f(mu)).collect();
            evaluations += xs.len();
            let k = (0..xs.len()).max_by(|&i, &j| ys[i].total_cmp(&ys[j])).expect("non-empty grid");
            a = xs[k.saturating_sub(1)];
            b = xs[(k + 1).min(xs.len() - 1)];
        }
        SearchMethod::GridRefine
    };

    let mid = 0.5 * (a + b);
    let mut candidates = vec![(mid, experiment.report(mid))];
    candidates.push((xs[best], experiment.report(xs[best])));
    evaluations += 2;
    let (mu_star, report) = candidates
        .into_iter()
        .filter_map(|(mu, r)| r.ok().map(|r| (mu, r)))
        .max_by(|x, y| x.1.fom.total_cmp(&y.1.fom))
        .ok_or_else(|| Error::Degenerate("optimum could not be evaluated".into()))?;
    Ok(Optimum {
        mu_star,
        fom_star: report.fom,
        s_at_star: report.s,
        delta_s_at_star: report.delta_s,
        bracket: (a, b),
        evaluations,
        method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints() {
        let g = grid(1e-3, 1.0, 4, Scale::Log);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[3] - 1.0).abs() < 1e-12);
        assert!((g[1] - 1e-2).abs() < 1e-12);
        assert_eq!(grid(0.0, 1.0, 3, Scale::Linear), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn unimodality() {
        assert!(is_unimodal(&[1.0, 2.0, 3.0, 2.0, 1.0]));
        assert!(is_unimodal(&[3.0, 2.0, 1.0]));
        assert!(!is_unimodal(&[1.0, 3.0, 2.0, 4.0]));
        assert!(!is_unimodal(&[1.0, f64::NAN]));
    }
}
