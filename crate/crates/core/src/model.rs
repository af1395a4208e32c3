//! Closed-form CHSH statistics for a multi-pair polarization-entangled source
//! distributed over two lossy arms and measured with threshold detectors.
//!
//! The building block is the Q-function
//!
//! ```text
//!            ABCD
//! Q_j = ------------------------------------------------------
//!       ABCD + G^2 - G (AD + BC) cos^2 θ - G (AC + BD) sin^2 θ
//! ```
//!
//! whose coefficients `A, B` (Alice) and `C, D` (Bob) are either `1` or
//! `1 - τ` depending on the index `j`. Correlations and their shot-noise
//! uncertainty are ratios of a handful of Q values, see [`correlation`] and
//! [`delta_correlation`].
//!
//! Sign convention: `E(θ) = (N⊥ - N∥) / (N⊥ + N∥)` with detector labels in
//! the φ⁺ frame, so that `E(θ) → -cos 2θ` for a weak source.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Below this value of G the correlation is evaluated through its
/// first-order series, `E = -cos 2θ`.
pub const SERIES_G_THRESHOLD: f64 = 1e-8;

const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Candidate mappings from the nonlinear gain γ to the Q-function parameter G.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GModel {
    /// G = tanh²γ
    Tanh2,
    /// G = tanh γ
    Tanh,
    /// G = sinh²γ
    Sinh2,
}

impl GModel {
    pub const ALL: [GModel; 3] = [GModel::Tanh2, GModel::Tanh, GModel::Sinh2];

    pub fn name(self) -> &'static str {
        match self {
            GModel::Tanh2 => "tanh2",
            GModel::Tanh => "tanh",
            GModel::Sinh2 => "sinh2",
        }
    }
}

impl Default for GModel {
    fn default() -> Self {
        GModel::Tanh2
    }
}

impl std::str::FromStr for GModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh2" => Ok(GModel::Tanh2),
            "tanh" => Ok(GModel::Tanh),
            "sinh2" => Ok(GModel::Sinh2),
            other => Err(Error::Input(format!("unknown G model `{other}`"))),
        }
    }
}

/// How the tabulated coefficients enter the Q-function.
///
/// `Tabulated` substitutes `A = 1 - τ` (or 1) as printed. `Reciprocal`
/// substitutes `1/A`, which is algebraically
/// `Q_j = 1 / (1 - G[(AD + BC)cos²θ + (AC + BD)sin²θ] + G² ABCD)`, the
/// normalized no-click generating function of the two-mode squeezed pair
/// state when `G = tanh²γ`. The reciprocal form is finite for `τ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientForm {
    Tabulated,
    Reciprocal,
}

impl CoefficientForm {
    pub const ALL: [CoefficientForm; 2] = [CoefficientForm::Tabulated, CoefficientForm::Reciprocal];

    pub fn name(self) -> &'static str {
        match self {
            CoefficientForm::Tabulated => "tabulated",
            CoefficientForm::Reciprocal => "reciprocal",
        }
    }
}

impl Default for CoefficientForm {
    fn default() -> Self {
        CoefficientForm::Reciprocal
    }
}

impl std::str::FromStr for CoefficientForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabulated" => Ok(CoefficientForm::Tabulated),
            "reciprocal" => Ok(CoefficientForm::Reciprocal),
            other => Err(Error::Input(format!("unknown coefficient form `{other}`"))),
        }
    }
}

/// What the mean photon number μ counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuConvention {
    /// μ = sinh²γ is the mean pair number of each of the two squeezed
    /// mode pairs (A_H,B_V) and (A_V,B_H).
    PerModePair,
    /// μ = sinh²γ is the mean total pair number per window; each mode pair
    /// carries μ/2.
    TotalPairs,
}

impl MuConvention {
    /// Mean number of emitted pairs per window (both mode pairs together).
    pub fn pairs_per_window(self, mu: f64) -> f64 {
        match self {
            MuConvention::PerModePair => 2.0 * mu,
            MuConvention::TotalPairs => mu,
        }
    }

    /// Inverse of [`MuConvention::pairs_per_window`].
    pub fn mu_from_pairs(self, pairs: f64) -> f64 {
        match self {
            MuConvention::PerModePair => pairs / 2.0,
            MuConvention::TotalPairs => pairs,
        }
    }
}

impl Default for MuConvention {
    fn default() -> Self {
        MuConvention::PerModePair
    }
}

impl std::str::FromStr for MuConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-mode-pair" => Ok(MuConvention::PerModePair),
            "total-pairs" => Ok(MuConvention::TotalPairs),
            other => Err(Error::Input(format!("unknown mu convention `{other}`"))),
        }
    }
}

/// Source description. `mu = sinh²(gamma)` is maintained by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceParams {
    gamma: f64,
    mu: f64,
    t_int: f64,
    pub g_model: GModel,
    pub coefficient_form: CoefficientForm,
    pub mu_convention: MuConvention,
}

impl SourceParams {
    pub fn from_gamma(gamma: f64, t_int: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(domain(format!("gain must be finite and >= 0, got {gamma}")));
        }
        check_t_int(t_int)?;
        Ok(SourceParams {
            gamma,
            mu: gamma.sinh().powi(2),
            t_int,
            g_model: GModel::default(),
            coefficient_form: CoefficientForm::default(),
            mu_convention: MuConvention::default(),
        })
    }

    pub fn from_mu(mu: f64, t_int: f64) -> Result<Self> {
        if !mu.is_finite() || mu < 0.0 {
            return Err(domain(format!("mean photon number must be finite and >= 0, got {mu}")));
        }
        check_t_int(t_int)?;
        Ok(SourceParams {
            gamma: mu.sqrt().asinh(),
            mu,
            t_int,
            g_model: GModel::default(),
            coefficient_form: CoefficientForm::default(),
            mu_convention: MuConvention::default(),
        })
    }

    pub fn with_g_model(mut self, g_model: GModel) -> Self {
        self.g_model = g_model;
        self
    }

    pub fn with_coefficient_form(mut self, form: CoefficientForm) -> Self {
        self.coefficient_form = form;
        self
    }

    pub fn with_mu_convention(mut self, convention: MuConvention) -> Self {
        self.mu_convention = convention;
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Coincidence window in seconds.
    pub fn t_int(&self) -> f64 {
        self.t_int
    }

    /// Squeezing parameter of each individual mode pair.
    pub fn mode_gain(&self) -> f64 {
        match self.mu_convention {
            MuConvention::PerModePair => self.gamma,
            MuConvention::TotalPairs => (self.mu / 2.0).sqrt().asinh(),
        }
    }

    /// Q-function parameter G for this source.
    pub fn g(&self) -> f64 {
        g_from_gain(self.mode_gain(), self.g_model)
    }
}

fn check_t_int(t_int: f64) -> Result<()> {
    if !(t_int.is_finite() && t_int > 0.0) {
        return Err(domain(format!("coincidence window must be > 0, got {t_int}")));
    }
    Ok(())
}

/// Evaluate the selected G(γ) mapping.
pub fn g_from_gain(gamma: f64, model: GModel) -> f64 {
    match model {
        GModel::Tanh2 => gamma.tanh().powi(2),
        GModel::Tanh => gamma.tanh(),
        GModel::Sinh2 => gamma.sinh().powi(2),
    }
}

/// Transmittances of the two distribution arms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub tau_a: f64,
    pub tau_b: f64,
}

impl ChannelParams {
    pub fn new(tau_a: f64, tau_b: f64) -> Result<Self> {
        for (name, tau) in [("tau_a", tau_a), ("tau_b", tau_b)] {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(domain(format!("{name} must lie in (0, 1], got {tau}")));
            }
        }
        Ok(ChannelParams { tau_a, tau_b })
    }

    /// Build from arm losses in dB. The sign is ignored: `10` and `-10` both
    /// mean a transmittance of 0.1.
    pub fn from_loss_db(loss_a_db: f64, loss_b_db: f64) -> Result<Self> {
        Self::new(loss_db_to_tau(loss_a_db)?, loss_db_to_tau(loss_b_db)?)
    }

    /// Arm losses as positive dB values.
    pub fn loss_db(&self) -> (f64, f64) {
        (-10.0 * self.tau_a.log10(), -10.0 * self.tau_b.log10())
    }

    pub fn swapped(&self) -> Self {
        ChannelParams { tau_a: self.tau_b, tau_b: self.tau_a }
    }
}

pub(crate) fn loss_db_to_tau(loss_db: f64) -> Result<f64> {
    if !loss_db.is_finite() {
        return Err(domain(format!("loss must be finite, got {loss_db}")));
    }
    Ok(10f64.powf(-loss_db.abs() / 10.0))
}

/// Which of the four Q coefficients carry a `1 - τ` factor, per index 1..=16.
/// Order: Alice (A, B), Bob (C, D).
const Q_TABLE: [[bool; 4]; 16] = [
    [false, false, false, false],
    [true, false, false, false],
    [false, true, false, false],
    [false, false, true, false],
    [false, false, false, true],
    [true, false, true, false],
    [true, false, false, true],
    [false, true, true, false],
    [false, true, false, true],
    [true, true, false, false],
    [false, false, true, true],
    [true, true, true, false],
    [true, true, false, true],
    [true, false, true, true],
    [false, true, true, true],
    [true, true, true, true],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl QCoefficients {
    fn product(&self) -> f64 {
        self.a * self.b * self.c * self.d
    }

    /// `(AD + BC) cos²θ + (AC + BD) sin²θ`
    fn mixed(&self, cos2: f64, sin2: f64) -> f64 {
        (self.a * self.d + self.b * self.c) * cos2 + (self.a * self.c + self.b * self.d) * sin2
    }
}

pub fn q_coefficients(j: usize, channel: &ChannelParams) -> Result<QCoefficients> {
    if !(1..=16).contains(&j) {
        return Err(domain(format!("Q index must be in 1..=16, got {j}")));
    }
    let row = Q_TABLE[j - 1];
    let alice = 1.0 - channel.tau_a;
    let bob = 1.0 - channel.tau_b;
    let pick = |lossy: bool, v: f64| if lossy { v } else { 1.0 };
    Ok(QCoefficients {
        a: pick(row[0], alice),
        b: pick(row[1], alice),
        c: pick(row[2], bob),
        d: pick(row[3], bob),
    })
}

/// Q_j written as `1 / (1 + u)` with `u = -G·lin + G²·quad`, or exactly zero.
#[derive(Debug, Clone, Copy)]
enum QShape {
    Zero,
    Regular { lin: f64, quad: f64, u: f64 },
}

impl QShape {
    fn value(&self) -> f64 {
        match *self {
            QShape::Zero => 0.0,
            QShape::Regular { u, .. } => 1.0 / (1.0 + u),
        }
    }
}

fn q_shape(j: usize, theta: f64, g: f64, channel: &ChannelParams, form: CoefficientForm) -> Result<QShape> {
    let k = q_coefficients(j, channel)?;
    let (sin, cos) = theta.sin_cos();
    let (cos2, sin2) = (cos * cos, sin * sin);
    let prod = k.product();
    let mixed = k.mixed(cos2, sin2);
    match form {
        CoefficientForm::Tabulated => {
            let denominator = prod + g * g - g * mixed;
            if !(denominator > 0.0) {
                return Err(Error::Singularity { j, theta, g });
            }
            if prod == 0.0 {
                return Ok(QShape::Zero);
            }
            let (lin, quad) = (mixed / prod, 1.0 / prod);
            Ok(QShape::Regular { lin, quad, u: -g * lin + g * g * quad })
        }
        CoefficientForm::Reciprocal => {
            let u = -g * mixed + g * g * prod;
            if !(1.0 + u > 0.0) {
                return Err(Error::Singularity { j, theta, g });
            }
            Ok(QShape::Regular { lin: mixed, quad: prod, u })
        }
    }
}

/// `Q_a - Q_b`, evaluated without subtracting two numbers close to one.
fn q_difference(a: QShape, b: QShape, g: f64) -> f64 {
    match (a, b) {
        (QShape::Regular { lin: la, quad: qa, u: ua }, QShape::Regular { lin: lb, quad: qb, u: ub }) => {
            let du = -g * (lb - la) + g * g * (qb - qa);
            du / ((1.0 + ua) * (1.0 + ub))
        }
        _ => a.value() - b.value(),
    }
}

/// Evaluate `Q_j(θ)` for a given G.
pub fn q_function(j: usize, theta: f64, g: f64, channel: &ChannelParams, form: CoefficientForm) -> Result<f64> {
    if !(g >= 0.0) {
        return Err(domain(format!("G must be >= 0, got {g}")));
    }
    Ok(q_shape(j, theta, g, channel, form)?.value())
}

/// Ratios of Q values entering the correlation, normalized by `Q_1` so that
/// `coincidence` is a probability per window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTerms {
    /// `2 (Q6 - Q7) / Q1`
    pub numerator: f64,
    /// `(Q1 - Q10 - Q11 + Q16) / Q1`
    pub coincidence: f64,
}

pub fn correlation_terms(theta: f64, g: f64, channel: &ChannelParams, form: CoefficientForm) -> Result<CorrelationTerms> {
    if !(g >= 0.0) {
        return Err(domain(format!("G must be >= 0, got {g}")));
    }
    let q = |j| q_shape(j, theta, g, channel, form);
    let (q1, q6, q7, q10, q11, q16) = (q(1)?, q(6)?, q(7)?, q(10)?, q(11)?, q(16)?);
    let norm = q1.value();
    let numerator = 2.0 * q_difference(q6, q7, g) / norm;
    let coincidence = (q_difference(q1, q10, g) - q_difference(q11, q16, g)) / norm;
    Ok(CorrelationTerms { numerator, coincidence })
}

fn checked_terms(theta: f64, source: &SourceParams, channel: &ChannelParams) -> Result<CorrelationTerms> {
    let g = source.g();
    let terms = correlation_terms(theta, g, channel, source.coefficient_form)?;
    if !(terms.coincidence > DENOMINATOR_FLOOR) {
        return Err(Error::Degenerate(format!(
            "coincidence term {} is not positive (theta={theta}, G={g})",
            terms.coincidence
        )));
    }
    Ok(terms)
}

/// Correlation `E(θ) = 2(Q6 - Q7) / (Q1 - Q10 - Q11 + Q16)` for an angular
/// difference `theta` in radians.
pub fn correlation(theta: f64, source: &SourceParams, channel: &ChannelParams) -> Result<f64> {
    if source.g() < SERIES_G_THRESHOLD {
        return Ok(-(2.0 * theta).cos());
    }
    let terms = checked_terms(theta, source, channel)?;
    let e = terms.numerator / terms.coincidence;
    if e.abs() > 1.0 + 1e-9 {
        return Err(Error::Degenerate(format!(
            "correlation {e} outside [-1, 1] (theta={theta}, G={})",
            source.g()
        )));
    }
    Ok(e.clamp(-1.0, 1.0))
}

/// Shot-noise uncertainty of [`correlation`] for counts with
/// `ΔN = α √N` accumulated over `t_acq` seconds.
pub fn delta_correlation(
    theta: f64,
    source: &SourceParams,
    channel: &ChannelParams,
    alpha: f64,
    t_acq: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(domain(format!("alpha must be > 0, got {alpha}")));
    }
    if !(t_acq > 0.0 && t_acq.is_finite()) {
        return Err(domain(format!("acquisition time must be > 0, got {t_acq}")));
    }
    let terms = checked_terms(theta, source, channel)?;
    let sum = terms.coincidence;
    let spread = if source.g() < SERIES_G_THRESHOLD {
        let e = correlation(theta, source, channel)?;
        sum * sum * (1.0 - e * e)
    } else {
        sum * sum - terms.numerator * terms.numerator
    };
    Ok(alpha * (source.t_int() * spread.max(0.0)).sqrt() / (sum.powf(1.5) * t_acq.sqrt()))
}

/// Polarization-basis angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSet {
    pub phi_a1: f64,
    pub phi_a2: f64,
    pub phi_b1: f64,
    pub phi_b2: f64,
}

impl Default for AngleSet {
    fn default() -> Self {
        AngleSet { phi_a1: 0.0, phi_a2: 45.0, phi_b1: 22.5, phi_b2: 67.5 }
    }
}

impl AngleSet {
    /// Half-wave-plate rotation angles realizing these bases.
    pub fn hwp(&self) -> AngleSet {
        AngleSet {
            phi_a1: self.phi_a1 / 2.0,
            phi_a2: self.phi_a2 / 2.0,
            phi_b1: self.phi_b1 / 2.0,
            phi_b2: self.phi_b2 / 2.0,
        }
    }

    pub fn shifted(&self, offset: f64) -> AngleSet {
        AngleSet {
            phi_a1: self.phi_a1 + offset,
            phi_a2: self.phi_a2 + offset,
            phi_b1: self.phi_b1 + offset,
            phi_b2: self.phi_b2 + offset,
        }
    }

    /// `(φ_Ai, φ_Bj)` in the order (1,1), (1,2), (2,1), (2,2).
    pub fn settings(&self) -> [(f64, f64); 4] {
        [
            (self.phi_a1, self.phi_b1),
            (self.phi_a1, self.phi_b2),
            (self.phi_a2, self.phi_b1),
            (self.phi_a2, self.phi_b2),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshReport {
    /// E_{1,1}, E_{1,2}, E_{2,1}, E_{2,2}
    pub e_values: [f64; 4],
    pub delta_e: [f64; 4],
    pub s: f64,
    pub delta_s: f64,
    /// (S - 2) / ΔS
    pub fom: f64,
}

impl ChshReport {
    /// Assemble S, ΔS and the figure of merit. Uncertainties add in quadrature.
    pub fn from_correlations(e_values: [f64; 4], delta_e: [f64; 4]) -> Self {
        let [e11, e12, e21, e22] = e_values;
        let s = (e11 - e12 + e21 + e22).abs();
        let delta_s = delta_e.iter().map(|d| d * d).sum::<f64>().sqrt();
        ChshReport { e_values, delta_e, s, delta_s, fom: (s - 2.0) / delta_s }
    }
}

pub fn chsh(
    source: &SourceParams,
    channel: &ChannelParams,
    angles: &AngleSet,
    alpha: f64,
    t_acq: f64,
) -> Result<ChshReport> {
    let mut e_values = [0.0; 4];
    let mut delta_e = [0.0; 4];
    for (k, (phi_a, phi_b)) in angles.settings().into_iter().enumerate() {
        let theta = (phi_a - phi_b).to_radians();
        e_values[k] = correlation(theta, source, channel)?;
        delta_e[k] = delta_correlation(theta, source, channel, alpha, t_acq)?;
    }
    Ok(ChshReport::from_correlations(e_values, delta_e))
}

/// Single-photon-level reference `(S, ΔS)` for fringe visibility `V` and
/// `n_total` coincidences per setting: `S = 2√2·V`,
/// `ΔS = √((2 - 2V²) / N)`.
///
/// The common shorthand `S = 4E(0)` overshoots the Tsirelson bound when
/// `E(0)` is read as a visibility, hence the `2√2` factor.
pub fn poisson_reference(visibility: f64, n_total: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(domain(format!("visibility must lie in [0, 1], got {visibility}")));
    }
    if !(n_total > 0.0 && n_total.is_finite()) {
        return Err(domain(format!("coincidence total must be > 0, got {n_total}")));
    }
    let s = 2.0 * SQRT_2 * visibility;
    let delta_s = ((2.0 - 2.0 * visibility * visibility) / n_total).sqrt();
    Ok((s, delta_s))
}
