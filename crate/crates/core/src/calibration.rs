//! Source and channel estimation from low-power count data, and the count
//! file format.
//!
//! In the low-power regime, with `P` pairs emitted per window,
//! `N_A = P τ_A / T_int`, `N_B = P τ_B / T_int` and
//! `N∥ = P τ_A τ_B / T_int`, so the arm transmittances and the pair number
//! follow from singles and coincidence rates alone. The gain then follows
//! `γ = C_γ √P_pump`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{loss_db_to_tau, MuConvention};
use crate::montecarlo::CountRecord;
use crate::oracle::{squash_pattern_weights, SquashedCounts, PATTERNS};

/// Default bound on `N⊥ / N∥` for the low-power estimators.
pub const DEFAULT_REGIME_THRESHOLD: f64 = 0.02;

/// Coincidence data of one measured record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coincidences {
    /// Full click-pattern counts, bit order A₊A₋B₊B₋.
    Patterns([u64; PATTERNS]),
    /// Already-binned counts; multi-click events cannot be re-squashed.
    Pairwise { n_pp: f64, n_pm: f64, n_mp: f64, n_mm: f64 },
}

impl Coincidences {
    pub fn squashed(&self) -> SquashedCounts {
        match self {
            Coincidences::Patterns(counts) => {
                let mut w = [0.0; PATTERNS];
                for (slot, &c) in w.iter_mut().zip(counts.iter()) {
                    *slot = c as f64;
                }
                squash_pattern_weights(&w)
            }
            &Coincidences::Pairwise { n_pp, n_pm, n_mp, n_mm } => SquashedCounts { n_pp, n_pm, n_mp, n_mm },
        }
    }
}

/// One row of a count file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredRecord {
    pub power_mw: f64,
    pub loss_db: f64,
    pub phi_a_deg: f64,
    pub phi_b_deg: f64,
    pub t_acq_s: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub coincidences: Coincidences,
}

impl MeasuredRecord {
    pub fn from_count_record(power_mw: f64, loss_db: f64, record: &CountRecord) -> Self {
        MeasuredRecord {
            power_mw,
            loss_db,
            phi_a_deg: record.phi_a,
            phi_b_deg: record.phi_b,
            t_acq_s: record.t_acq,
            n_a: record.singles_a as f64,
            n_b: record.singles_b as f64,
            coincidences: Coincidences::Patterns(record.pattern_counts),
        }
    }

    pub fn is_lossy(&self) -> bool {
        matches!(self.coincidences, Coincidences::Pairwise { .. })
    }

    /// Count rates in counts per second.
    pub fn rates(&self) -> Result<CountRates> {
        if !(self.t_acq_s > 0.0) {
            return Err(domain(format!("acquisition time must be > 0, got {}", self.t_acq_s)));
        }
        let sq = self.coincidences.squashed();
        Ok(CountRates {
            n_a: self.n_a / self.t_acq_s,
            n_b: self.n_b / self.t_acq_s,
            n_par: sq.n_par() / self.t_acq_s,
            n_perp: sq.n_perp() / self.t_acq_s,
        })
    }
}

/// Singles and coincidence rates in counts per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRates {
    pub n_a: f64,
    pub n_b: f64,
    pub n_par: f64,
    pub n_perp: f64,
}

impl CountRates {
    fn add(self, other: CountRates) -> CountRates {
        CountRates {
            n_a: self.n_a + other.n_a,
            n_b: self.n_b + other.n_b,
            n_par: self.n_par + other.n_par,
            n_perp: self.n_perp + other.n_perp,
        }
    }
}

/// Result of [`estimate_channel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub tau_a: f64,
    pub tau_b: f64,
    /// Mean number of pairs emitted per window, `T_int N_A N_B / N∥`.
    pub pairs_per_window: f64,
}

impl ChannelEstimate {
    pub fn mu(&self, convention: MuConvention) -> f64 {
        convention.mu_from_pairs(self.pairs_per_window)
    }
}

fn check_regime(rates: &CountRates, threshold: f64) -> Result<()> {
    if !(rates.n_par > 0.0) {
        return Err(Error::Degenerate("no parallel coincidences".into()));
    }
    let ratio = rates.n_perp / rates.n_par;
    if ratio > threshold {
        return Err(Error::Regime(format!(
            "N⊥/N∥ = {ratio:.4} exceeds the low-power threshold {threshold}"
        )));
    }
    Ok(())
}

/// Transmittances and pair number from rates measured at matched bases:
/// `τ_B = N∥ / N_A`, `τ_A = N∥ / N_B`, pairs `= T_int N_A N_B / N∥`.
pub fn estimate_channel(rates: &CountRates, t_int: f64, threshold: f64) -> Result<ChannelEstimate> {
    if !(t_int > 0.0) {
        return Err(domain(format!("coincidence window must be > 0, got {t_int}")));
    }
    check_regime(rates, threshold)?;
    if !(rates.n_a > 0.0 && rates.n_b > 0.0) {
        return Err(Error::Degenerate("zero singles rate".into()));
    }
    Ok(ChannelEstimate {
        tau_a: rates.n_par / rates.n_b,
        tau_b: rates.n_par / rates.n_a,
        pairs_per_window: t_int * rates.n_a * rates.n_b / rates.n_par,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub power_mw: f64,
    pub mu: f64,
    pub gamma: f64,
    /// `γ - C_γ √P`
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau_a: f64,
    pub tau_b: f64,
    /// Gain per square-root pump power, mW^(-1/2).
    pub c_gamma: f64,
    pub mu_convention: MuConvention,
    pub points: Vec<CalibrationPoint>,
}

/// Fit `γ = C_γ √P` by least squares through the origin. Transmittances
/// are estimated from the counts of all points pooled together.
pub fn estimate_c_gamma(
    records: &[MeasuredRecord],
    t_int: f64,
    threshold: f64,
    convention: MuConvention,
) -> Result<CalibrationResult> {
    if records.len() < 2 {
        return Err(domain(format!("need at least 2 power points, got {}", records.len())));
    }
    let mut pooled: Option<CountRates> = None;
    let mut fitted = Vec::with_capacity(records.len());
    for r in records {
        if !(r.power_mw > 0.0) {
            return Err(domain(format!("pump power must be > 0, got {}", r.power_mw)));
        }
        let rates = r.rates()?;
        let est = estimate_channel(&rates, t_int, threshold)?;
        let mu = est.mu(convention);
        fitted.push((r.power_mw, mu, mu.sqrt().asinh()));
        // Weight by acquisition time so pooling sums raw counts.
        let counts = CountRates {
            n_a: rates.n_a * r.t_acq_s,
            n_b: rates.n_b * r.t_acq_s,
            n_par: rates.n_par * r.t_acq_s,
            n_perp: rates.n_perp * r.t_acq_s,
        };
        pooled = Some(pooled.map_or(counts, |p| p.add(counts)));
    }
    let pooled = pooled.expect("at least two records");
    let sxy: f64 = fitted.iter().map(|&(p, _, g)| p.sqrt() * g).sum();
    let sxx: f64 = fitted.iter().map(|&(p, _, _)| p).sum();
    let c_gamma = sxy / sxx;
    let points = fitted
        .into_iter()
        .map(|(power_mw, mu, gamma)| CalibrationPoint { power_mw, mu, gamma, residual: gamma - c_gamma * power_mw.sqrt() })
        .collect();
    Ok(CalibrationResult {
        tau_a: pooled.n_par / pooled.n_b,
        tau_b: pooled.n_par / pooled.n_a,
        c_gamma,
        mu_convention: convention,
        points,
    })
}

/// `C_γ = asinh(√μ) / √P` from a single point; no fit, no residuals.
pub fn c_gamma_from_point(power_mw: f64, mu: f64) -> Result<f64> {
    if !(power_mw > 0.0 && power_mw.is_finite()) {
        return Err(domain(format!("pump power must be > 0, got {power_mw}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(domain(format!("mean photon number must be >= 0, got {mu}")));
    }
    Ok(mu.sqrt().asinh() / power_mw.sqrt())
}

/// `μ = sinh²(C_γ √P)`
pub fn mu_at_power(power_mw: f64, c_gamma: f64) -> Result<f64> {
    if !(power_mw >= 0.0 && power_mw.is_finite()) {
        return Err(domain(format!("pump power must be >= 0, got {power_mw}")));
    }
    Ok((c_gamma * power_mw.sqrt()).sinh().powi(2))
}

/// Inverse of [`mu_at_power`].
pub fn power_for_mu(mu: f64, c_gamma: f64) -> Result<f64> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(domain(format!("mean photon number must be >= 0, got {mu}")));
    }
    if !(c_gamma > 0.0) {
        return Err(domain(format!("C_γ must be > 0, got {c_gamma}")));
    }
    Ok((mu.sqrt().asinh() / c_gamma).powi(2))
}

/// `τ = 10^(-|L|/10)`
pub fn db_to_tau(loss_db: f64) -> Result<f64> {
    loss_db_to_tau(loss_db)
}

/// `L = 10 log₁₀ τ`, reported as a non-positive number.
pub fn tau_to_db(tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(domain(format!("transmittance must lie in (0, 1], got {tau}")));
    }
    Ok(10.0 * tau.log10())
}

const BASE_COLUMNS: [&str; 7] = ["power_mw", "loss_db", "phi_a_deg", "phi_b_deg", "t_acq_s", "n_a", "n_b"];
const PAIRWISE_COLUMNS: [&str; 4] = ["n_pp", "n_pm", "n_mp", "n_mm"];

fn pattern_column(k: usize) -> String {
    format!("c_{k:04b}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Patterns,
    Pairwise,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Input(format!("missing column `{name}`")))
}

fn parse_field(row: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = row.get(idx).unwrap_or("").trim();
    raw.parse::<f64>()
        .map_err(|_| Error::Input(format!("line {line}: cannot parse `{raw}` in column `{name}`")))
}

/// Parse a count file. Lines starting with `#` are ignored.
pub fn read_records<R: Read>(reader: R) -> Result<Vec<MeasuredRecord>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Input("count file has no header".into()));
    }
    let base = BASE_COLUMNS
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let layout = if headers.iter().any(|h| h.trim() == pattern_column(0)) {
        Layout::Patterns
    } else if headers.iter().any(|h| h.trim() == PAIRWISE_COLUMNS[0]) {
        Layout::Pairwise
    } else {
        return Err(Error::Input("expected c_0000..c_1111 or n_pp, n_pm, n_mp, n_mm columns".into()));
    };
    let extra: Vec<(String, usize)> = match layout {
        Layout::Patterns => (0..PATTERNS)
            .map(|k| {
                let name = pattern_column(k);
                column_index(&headers, &name).map(|i| (name, i))
            })
            .collect::<Result<_>>()?,
        Layout::Pairwise => PAIRWISE_COLUMNS
            .iter()
            .map(|&name| column_index(&headers, name).map(|i| (name.to_string(), i)))
            .collect::<Result<_>>()?,
    };

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let mut v = [0.0; 7];
        for (slot, (&idx, name)) in v.iter_mut().zip(base.iter().zip(BASE_COLUMNS.iter())) {
            *slot = parse_field(&row, idx, name, line)?;
        }
        let values = extra
            .iter()
            .map(|(name, idx)| parse_field(&row, *idx, name, line))
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().chain(v[5..].iter()).any(|&x| x < 0.0) {
            return Err(Error::Input(format!("line {line}: negative count")));
        }
        let coincidences = match layout {
            Layout::Patterns => {
                let mut counts = [0u64; PATTERNS];
                for (c, &x) in counts.iter_mut().zip(values.iter()) {
                    if x.fract() != 0.0 {
                        return Err(Error::Input(format!("line {line}: pattern counts must be integers")));
                    }
                    *c = x as u64;
                }
                Coincidences::Patterns(counts)
            }
            Layout::Pairwise => Coincidences::Pairwise { n_pp: values[0], n_pm: values[1], n_mp: values[2], n_mm: values[3] },
        };
        out.push(MeasuredRecord {
            power_mw: v[0],
            loss_db: v[1],
            phi_a_deg: v[2],
            phi_b_deg: v[3],
            t_acq_s: v[4],
            n_a: v[5],
            n_b: v[6],
            coincidences,
        });
    }
    if out.is_empty() {
        return Err(Error::Input("count file contains no records".into()));
    }
    Ok(out)
}

/// Write records in the count-file format. All records must share one
/// layout. `comments` are emitted first as `#` lines.
pub fn write_records<W: Write>(mut writer: W, records: &[MeasuredRecord], comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let layout = match records.first().map(|r| r.is_lossy()) {
        Some(true) => Layout::Pairwise,
        _ => Layout::Patterns,
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
    match layout {
        Layout::Patterns => header.extend((0..PATTERNS).map(pattern_column)),
        Layout::Pairwise => header.extend(PAIRWISE_COLUMNS.iter().map(|s| s.to_string())),
    }
    w.write_record(&header)?;
    for r in records {
        let mut row: Vec<String> = [r.power_mw, r.loss_db, r.phi_a_deg, r.phi_b_deg, r.t_acq_s, r.n_a, r.n_b]
            .iter()
            .map(|x| x.to_string())
            .collect();
        match (&r.coincidences, layout) {
            (Coincidences::Patterns(counts), Layout::Patterns) => row.extend(counts.iter().map(|c| c.to_string())),
            (&Coincidences::Pairwise { n_pp, n_pm, n_mp, n_mm }, Layout::Pairwise) => {
                row.extend([n_pp, n_pm, n_mp, n_mm].iter().map(|x| x.to_string()))
            }
            _ => return Err(Error::Input("records mix pattern and pairwise layouts".into())),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
