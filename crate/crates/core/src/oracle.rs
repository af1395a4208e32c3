//! Exact threshold-detector statistics for the multi-pair singlet source,
//! computed in the Gaussian (covariance-matrix) picture.
//!
//! The source is two independent two-mode squeezed vacua on the mode pairs
//! (A_H, B_V) and (A_V, B_H) with opposite phase. Basis choice is a passive
//! rotation of each party's polarization modes, arm loss is a pure-loss
//! channel, and the probability that a set of detectors stays dark is a
//! Gaussian overlap with the vacuum: `1 / sqrt(det(σ_M + I/2))`. Click
//! patterns follow by inclusion–exclusion.
//!
//! Conventions: vacuum covariance `I/2`; quadrature order `(x, p)` per mode;
//! mode order A_H, A_V, B_H, B_V before rotation and A₊, A₋, B₊, B₋ after.
//! Bob's detectors are labelled in the φ⁺ frame (his `+` output pairs with
//! Alice's `+` at equal angles), which amounts to rotating Bob by an extra
//! 90°.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{self, ChannelParams, CoefficientForm, GModel, MuConvention, SourceParams};

pub type Covariance = SMatrix<f64, 8, 8>;

/// Number of detection modes.
pub const MODES: usize = 4;
/// Number of click patterns of four threshold detectors.
pub const PATTERNS: usize = 16;

/// Bit of detection mode `m` (0 = A₊, 1 = A₋, 2 = B₊, 3 = B₋) inside a
/// pattern index. Pattern `0b1010` means A₊ and B₊ clicked.
pub const fn mode_bit(m: usize) -> usize {
    1 << (MODES - 1 - m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    fn modes(self) -> (usize, usize) {
        match self {
            Party::Alice => (0, 1),
            Party::Bob => (2, 3),
        }
    }
}

/// Zero-mean Gaussian state of the four polarization modes.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    matrix: Covariance,
}

impl CovarianceState {
    pub fn vacuum() -> Self {
        CovarianceState { matrix: Covariance::identity() * 0.5 }
    }

    pub fn from_matrix(matrix: Covariance) -> Result<Self> {
        let asym = (matrix - matrix.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::State(format!("covariance not symmetric (max asymmetry {asym:e})")));
        }
        let state = CovarianceState { matrix };
        let min = state.symplectic_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.5 - 1e-9 {
            return Err(Error::State(format!("symplectic eigenvalue {min} below 1/2")));
        }
        Ok(state)
    }

    pub fn matrix(&self) -> &Covariance {
        &self.matrix
    }

    /// Mean photon number of mode `m`, `(tr σ_m - 1) / 2`.
    pub fn mean_photons(&self, m: usize) -> f64 {
        (self.matrix[(2 * m, 2 * m)] + self.matrix[(2 * m + 1, 2 * m + 1)] - 1.0) / 2.0
    }

    /// The four symplectic eigenvalues in ascending order.
    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.matrix);
        let sqrt_d = Covariance::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let root = eig.eigenvectors * sqrt_d * eig.eigenvectors.transpose();
        let omega = symplectic_form();
        let h = root * omega * root;
        let squares = SymmetricEigen::new(h.transpose() * h).eigenvalues;
        let mut values: Vec<f64> = squares.iter().map(|v| v.max(0.0).sqrt()).collect();
        values.sort_by(f64::total_cmp);
        // Each symplectic eigenvalue appears twice.
        values.into_iter().step_by(2).collect()
    }

    pub fn is_physical(&self) -> bool {
        self.symplectic_eigenvalues().iter().all(|&v| v >= 0.5 - 1e-9)
    }
}

fn symplectic_form() -> Covariance {
    let mut omega = Covariance::zeros();
    for m in 0..MODES {
        omega[(2 * m, 2 * m + 1)] = 1.0;
        omega[(2 * m + 1, 2 * m)] = -1.0;
    }
    omega
}

/// Singlet-type pair state with per-mode-pair squeezing `mode_gain`.
pub fn squeezed_singlet(mode_gain: f64) -> CovarianceState {
    let diag = (2.0 * mode_gain).cosh() / 2.0;
    let cross = (2.0 * mode_gain).sinh() / 2.0;
    let mut m = Covariance::identity() * diag;
    // (A_H, B_V): <x x> = +c, <p p> = -c
    set_sym(&mut m, 0, 6, cross);
    set_sym(&mut m, 1, 7, -cross);
    // (A_V, B_H) carries the relative minus sign of the singlet.
    set_sym(&mut m, 2, 4, -cross);
    set_sym(&mut m, 3, 5, cross);
    CovarianceState { matrix: m }
}

fn set_sym(m: &mut Covariance, i: usize, j: usize, v: f64) {
    m[(i, j)] = v;
    m[(j, i)] = v;
}

/// Build the pair state for gain `gamma` (`μ = sinh²γ` in `convention`).
pub fn build_state(gamma: f64, convention: MuConvention) -> Result<CovarianceState> {
    let source = SourceParams::from_gamma(gamma, 1.0)?.with_mu_convention(convention);
    Ok(squeezed_singlet(source.mode_gain()))
}

/// Rotate one party's polarization basis by `phi` radians. The party's
/// first mode becomes `cos φ·H + sin φ·V`, the second `-sin φ·H + cos φ·V`.
pub fn apply_rotation(state: &CovarianceState, party: Party, phi: f64) -> CovarianceState {
    let (m1, m2) = party.modes();
    let (s, c) = phi.sin_cos();
    let mut sym = Covariance::identity();
    for q in 0..2 {
        let (i, j) = (2 * m1 + q, 2 * m2 + q);
        sym[(i, i)] = c;
        sym[(i, j)] = s;
        sym[(j, i)] = -s;
        sym[(j, j)] = c;
    }
    CovarianceState { matrix: sym * state.matrix * sym.transpose() }
}

/// Pure-loss channel of transmittance `tau` on mode `mode`.
pub fn apply_loss(state: &CovarianceState, mode: usize, tau: f64) -> Result<CovarianceState> {
    if mode >= MODES {
        return Err(domain(format!("mode index must be < {MODES}, got {mode}")));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(domain(format!("transmittance must lie in [0, 1], got {tau}")));
    }
    let mut scale = Covariance::identity();
    let root = tau.sqrt();
    scale[(2 * mode, 2 * mode)] = root;
    scale[(2 * mode + 1, 2 * mode + 1)] = root;
    let mut m = scale * state.matrix * scale;
    m[(2 * mode, 2 * mode)] += (1.0 - tau) / 2.0;
    m[(2 * mode + 1, 2 * mode + 1)] += (1.0 - tau) / 2.0;
    Ok(CovarianceState { matrix: m })
}

/// Probabilities of the 16 click patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeDistribution {
    pub p: [f64; PATTERNS],
}

impl OutcomeDistribution {
    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    /// Probability that both sides register at least one click.
    pub fn coincidence_probability(&self) -> f64 {
        (0..PATTERNS).filter(|&k| alice_clicked(k) && bob_clicked(k)).map(|k| self.p[k]).sum()
    }

    pub fn total_variation(&self, other: &OutcomeDistribution) -> f64 {
        0.5 * self.p.iter().zip(other.p.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub fn alice_clicked(pattern: usize) -> bool {
    pattern & (mode_bit(0) | mode_bit(1)) != 0
}

pub fn bob_clicked(pattern: usize) -> bool {
    pattern & (mode_bit(2) | mode_bit(3)) != 0
}

/// `ln det(I + Δ)` for a symmetric excess covariance `Δ = σ_M - I/2`.
fn log_det_shifted(delta: DMatrix<f64>) -> Result<f64> {
    let eig = SymmetricEigen::new(delta);
    let mut acc = 0.0;
    for &v in eig.eigenvalues.iter() {
        if !(v > -1.0) {
            return Err(Error::State(format!("det(σ_M + I/2) not positive (eigenvalue shift {v})")));
        }
        acc += v.ln_1p();
    }
    Ok(acc)
}

/// Click-pattern probabilities of four threshold detectors.
///
/// Vacuum probabilities of every detector subset are kept in the form
/// `exp(-x)`, and the inclusion–exclusion sums use `expm1` so that weak
/// sources do not lose their coincidence signal to cancellation.
pub fn click_distribution(state: &CovarianceState) -> Result<OutcomeDistribution> {
    let excess = state.matrix - Covariance::identity() * 0.5;
    // x[mask] = -ln P(no click on the detectors in mask)
    let mut x = [0.0; PATTERNS];
    for mask in 1..PATTERNS {
        let idx: Vec<usize> = (0..MODES)
            .filter(|&m| mask & mode_bit(m) != 0)
            .flat_map(|m| [2 * m, 2 * m + 1])
            .collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| excess[(idx[r], idx[c])]);
        x[mask] = 0.5 * log_det_shifted(sub)?;
    }
    let all = PATTERNS - 1;
    let mut p = [0.0; PATTERNS];
    for (clicks, slot) in p.iter_mut().enumerate() {
        let dark = all & !clicks;
        let value = if clicks == 0 {
            (-x[all]).exp()
        } else {
            // Σ_{S ⊆ clicks} (-1)^{|S|} P(dark ∪ S); the constant parts cancel.
            let mut acc = 0.0;
            let mut sub = clicks;
            loop {
                let sign = if sub.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * (-x[dark | sub]).exp_m1();
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & clicks;
            }
            acc
        };
        if value < -1e-12 {
            return Err(Error::State(format!("negative click probability {value} for pattern {clicks:04b}")));
        }
        *slot = value.max(0.0);
    }
    Ok(OutcomeDistribution { p })
}

/// Coincidence bins after squashing multi-click events.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SquashedCounts {
    pub n_pp: f64,
    pub n_pm: f64,
    pub n_mp: f64,
    pub n_mm: f64,
}

impl SquashedCounts {
    pub fn n_par(&self) -> f64 {
        self.n_pp + self.n_mm
    }

    pub fn n_perp(&self) -> f64 {
        self.n_pm + self.n_mp
    }

    pub fn total(&self) -> f64 {
        self.n_par() + self.n_perp()
    }

    /// `(N⊥ - N∥) / (N⊥ + N∥)`
    pub fn correlation(&self) -> Result<f64> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::Degenerate("no coincidences".into()));
        }
        Ok((self.n_perp() - self.n_par()) / total)
    }
}

/// Split of one side's click set over its `(+, -)` outcomes.
fn side_weights(plus: bool, minus: bool) -> (f64, f64) {
    match (plus, minus) {
        (true, false) => (1.0, 0.0),
        (false, true) => (0.0, 1.0),
        (true, true) => (0.5, 0.5),
        (false, false) => (0.0, 0.0),
    }
}

/// Squash weights `(pp, pm, mp, mm)` of one click pattern.
pub fn squash_weights(pattern: usize) -> [f64; 4] {
    let bit = |m| pattern & mode_bit(m) != 0;
    let (ap, am) = side_weights(bit(0), bit(1));
    let (bp, bm) = side_weights(bit(2), bit(3));
    [ap * bp, ap * bm, am * bp, am * bm]
}

/// Squash arbitrary per-pattern weights (probabilities or counts).
pub fn squash_pattern_weights(weights: &[f64; PATTERNS]) -> SquashedCounts {
    let mut out = SquashedCounts::default();
    for (pattern, &w) in weights.iter().enumerate() {
        let [pp, pm, mp, mm] = squash_weights(pattern);
        out.n_pp += w * pp;
        out.n_pm += w * pm;
        out.n_mp += w * mp;
        out.n_mm += w * mm;
    }
    out
}

pub fn squash(dist: &OutcomeDistribution) -> SquashedCounts {
    squash_pattern_weights(&dist.p)
}

/// Detected state for bases `phi_a`, `phi_b` (radians) after arm loss.
pub fn detected_state(mode_gain: f64, channel: &ChannelParams, phi_a: f64, phi_b: f64) -> Result<CovarianceState> {
    let mut state = squeezed_singlet(mode_gain);
    state = apply_rotation(&state, Party::Alice, phi_a);
    state = apply_rotation(&state, Party::Bob, phi_b + FRAC_PI_2);
    for (mode, tau) in [(0, channel.tau_a), (1, channel.tau_a), (2, channel.tau_b), (3, channel.tau_b)] {
        state = apply_loss(&state, mode, tau)?;
    }
    Ok(state)
}

/// Click-pattern distribution for per-mode-pair gain `mode_gain`.
pub fn oracle_distribution(mode_gain: f64, channel: &ChannelParams, phi_a: f64, phi_b: f64) -> Result<OutcomeDistribution> {
    click_distribution(&detected_state(mode_gain, channel, phi_a, phi_b)?)
}

/// Squashed-count correlation at bases `phi_a`, `phi_b` (radians).
pub fn oracle_correlation_at(mode_gain: f64, channel: &ChannelParams, phi_a: f64, phi_b: f64) -> Result<f64> {
    squash(&oracle_distribution(mode_gain, channel, phi_a, phi_b)?).correlation()
}

/// Squashed-count correlation for angular difference `theta` (radians).
pub fn oracle_correlation(mode_gain: f64, channel: &ChannelParams, theta: f64) -> Result<f64> {
    oracle_correlation_at(mode_gain, channel, theta, 0.0)
}

/// Grid over which model candidates are compared with the oracle.
/// `gammas` are per-mode-pair gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitGrid {
    pub gammas: Vec<f64>,
    pub channels: Vec<(f64, f64)>,
    pub thetas: Vec<f64>,
}

impl FitGrid {
    /// γ ∈ {0.05, …, 0.5}, τ ∈ {0.1, 0.5, 0.9}², θ on 16 points of [0, π/2].
    pub fn standard() -> Self {
        Self::with_gamma_max(0.5, 10, &[0.1, 0.5, 0.9], 16)
    }

    /// `gamma_points` gains evenly spaced on `(0, gamma_max]`, every ordered
    /// pair of `taus`, and `theta_points` angles spanning `[0, π/2]`.
    pub fn with_gamma_max(gamma_max: f64, gamma_points: usize, taus: &[f64], theta_points: usize) -> Self {
        let gammas = (1..=gamma_points).map(|k| gamma_max * k as f64 / gamma_points as f64).collect();
        let channels = taus.iter().flat_map(|&a| taus.iter().map(move |&b| (a, b))).collect();
        let thetas = if theta_points == 1 {
            vec![0.0]
        } else {
            (0..theta_points).map(|k| FRAC_PI_2 * k as f64 / (theta_points - 1) as f64).collect()
        };
        FitGrid { gammas, channels, thetas }
    }

    fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.channels.is_empty() || self.thetas.is_empty() {
            return Err(Error::Input("fit grid has an empty axis".into()));
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g <= 0.6)) {
            return Err(Error::Input(format!("grid gain {g} outside (0, 0.6]")));
        }
        for &(a, b) in &self.channels {
            ChannelParams::new(a, b).map_err(|e| Error::Input(e.to_string()))?;
        }
        if let Some(t) = self.thetas.iter().find(|t| !t.is_finite()) {
            return Err(Error::Input(format!("grid angle {t} is not finite")));
        }
        Ok(())
    }

    fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.gammas.len() * self.channels.len() * self.thetas.len());
        for &gamma in &self.gammas {
            for &(tau_a, tau_b) in &self.channels {
                for &theta in &self.thetas {
                    out.push(GridPoint { gamma, tau_a, tau_b, theta });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub g_model: GModel,
    pub coefficient_form: CoefficientForm,
}

impl Candidate {
    pub fn all() -> Vec<Candidate> {
        CoefficientForm::ALL
            .iter()
            .flat_map(|&coefficient_form| GModel::ALL.iter().map(move |&g_model| Candidate { g_model, coefficient_form }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub candidate: Candidate,
    /// Largest |E_model - E_oracle| over the grid; `None` when the model
    /// failed to evaluate somewhere.
    pub max_deviation: Option<f64>,
    /// Largest deviation among the points where the model evaluated.
    pub max_finite_deviation: f64,
    pub worst_point: Option<GridPoint>,
    pub failed_points: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tolerance: f64,
    pub grid: FitGrid,
    pub candidates: Vec<CandidateFit>,
    pub selected: Option<Candidate>,
    /// No candidate reached the tolerance.
    pub mismatch: bool,
    /// More than one candidate passed, so the grid cannot tell them apart
    /// (typically because the gains are too small).
    pub degenerate: bool,
}

pub const FIT_TOLERANCE: f64 = 1e-3;

/// Compare every G-model / coefficient-form pair with the oracle over `grid`
/// and select the closest one that stays within [`FIT_TOLERANCE`].
pub fn identify_g(grid: &FitGrid) -> Result<FitReport> {
    grid.validate()?;
    let points = grid.points();
    // Parallel evaluation; reductions below run sequentially in grid order.
    let oracle: Vec<f64> = points
        .par_iter()
        .map(|pt| {
            let ch = ChannelParams { tau_a: pt.tau_a, tau_b: pt.tau_b };
            oracle_correlation(pt.gamma, &ch, pt.theta)
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<CandidateFit> = Candidate::all()
        .into_iter()
        .map(|cand| {
            let deviations: Vec<Option<f64>> = points
                .par_iter()
                .zip(oracle.par_iter())
                .map(|(pt, &e_oracle)| {
                    let ch = ChannelParams { tau_a: pt.tau_a, tau_b: pt.tau_b };
                    let source = SourceParams::from_gamma(pt.gamma, 1.0)
                        .ok()?
                        .with_g_model(cand.g_model)
                        .with_coefficient_form(cand.coefficient_form);
                    model::correlation(pt.theta, &source, &ch).ok().map(|e| (e - e_oracle).abs())
                })
                .collect();
            let mut worst = 0.0;
            let mut worst_point = None;
            let mut failed = 0;
            for (pt, dev) in points.iter().zip(&deviations) {
                match dev {
                    Some(d) if *d > worst || worst_point.is_none() => {
                        worst = *d;
                        worst_point = Some(*pt);
                    }
                    Some(_) => {}
                    None => failed += 1,
                }
            }
            let max_deviation = (failed == 0).then_some(worst);
            CandidateFit {
                candidate: cand,
                max_deviation,
                max_finite_deviation: worst,
                worst_point,
                failed_points: failed,
                passed: max_deviation.is_some_and(|d| d <= FIT_TOLERANCE),
            }
        })
        .collect();

    let selected = candidates
        .iter()
        .filter(|c| c.passed)
        .min_by(|a, b| a.max_finite_deviation.total_cmp(&b.max_finite_deviation))
        .map(|c| c.candidate);
    Ok(FitReport {
        tolerance: FIT_TOLERANCE,
        grid: grid.clone(),
        mismatch: selected.is_none(),
        degenerate: candidates.iter().filter(|c| c.passed).count() > 1,
        candidates,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn vacuum_state() {
        let s = build_state(0.0, MuConvention::PerModePair).unwrap();
        assert_eq!(s, CovarianceState::vacuum());
        let d = click_distribution(&s).unwrap();
        assert_eq!(d.p[0], 1.0);
        assert!(d.p[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn mean_photons_of_each_mode() {
        for conv in [MuConvention::PerModePair, MuConvention::TotalPairs] {
            let s = build_state(0.3, conv).unwrap();
            let mu = 0.3f64.sinh().powi(2);
            let expect = match conv {
                MuConvention::PerModePair => mu,
                MuConvention::TotalPairs => mu / 2.0,
            };
            for m in 0..MODES {
                assert!((s.mean_photons(m) - expect).abs() < 1e-14, "{conv:?} mode {m}");
            }
        }
    }

    #[test]
    fn thermal_mode_vacuum_probability() {
        // Reduced state of one mode of a TMSV is thermal with n = sinh²r.
        let r: f64 = 0.5f64.sqrt().asinh();
        let state = squeezed_singlet(r);
        let n = state.mean_photons(0);
        assert!((n - 0.5).abs() < 1e-14);
        // Only mode 0 observed: marginalize others with fully lossy detectors.
        let mut s = state;
        for m in 1..MODES {
            s = apply_loss(&s, m, 0.0).unwrap();
        }
        let d = click_distribution(&s).unwrap();
        let click = d.p[mode_bit(0)];
        assert!((click - (1.0 - 1.0 / 1.5)).abs() < 1e-14);
    }

    #[test]
    fn rotation_properties() {
        let s = squeezed_singlet(0.4);
        assert_eq!(apply_rotation(&s, Party::Alice, 0.0), s);
        let twice = apply_rotation(&apply_rotation(&s, Party::Bob, 0.3), Party::Bob, 0.3);
        let once = apply_rotation(&s, Party::Bob, 0.6);
        assert!((twice.matrix() - once.matrix()).amax() < 1e-12);
        let lossy = apply_loss(&s, 0, 0.3).unwrap();
        let d0 = click_distribution(&apply_rotation(&lossy, Party::Alice, 0.0)).unwrap();
        let dpi = click_distribution(&apply_rotation(&lossy, Party::Alice, PI)).unwrap();
        assert!(d0.total_variation(&dpi) < 1e-12);
    }

    #[test]
    fn rotation_preserves_symplectic_spectrum() {
        let s = apply_loss(&squeezed_singlet(0.5), 2, 0.4).unwrap();
        let r = apply_rotation(&s, Party::Bob, 1.1);
        for (a, b) in s.symplectic_eigenvalues().iter().zip(r.symplectic_eigenvalues()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(squeezed_singlet(0.5).symplectic_eigenvalues().iter().all(|v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn loss_properties() {
        let s = squeezed_singlet(0.35);
        assert_eq!(apply_loss(&s, 1, 1.0).unwrap(), s);
        let gone = apply_loss(&s, 1, 0.0).unwrap();
        for k in 0..8 {
            if k / 2 != 1 {
                assert_eq!(gone.matrix()[(2, k)], 0.0);
                assert_eq!(gone.matrix()[(3, k)], 0.0);
            }
        }
        assert!((gone.mean_photons(1)).abs() < 1e-15);
        let n = s.mean_photons(3);
        let half = apply_loss(&s, 3, 0.37).unwrap();
        assert!((half.mean_photons(3) - 0.37 * n).abs() < 1e-14);
        assert!(apply_loss(&s, 0, 1.5).is_err());
        assert!(apply_loss(&s, 4, 0.5).is_err());
    }

    #[test]
    fn non_physical_state_rejected() {
        let mut m = Covariance::identity() * 0.5;
        m[(0, 0)] = 0.1;
        assert!(matches!(CovarianceState::from_matrix(m), Err(Error::State(_))));
        let bad = CovarianceState { matrix: Covariance::identity() * -2.0 };
        assert!(matches!(click_distribution(&bad), Err(Error::State(_))));
    }

    #[test]
    fn squash_examples() {
        let pp = mode_bit(0) | mode_bit(2);
        let mut p = [0.0; PATTERNS];
        p[pp] = 1.0;
        let s = squash(&OutcomeDistribution { p });
        assert_eq!((s.n_pp, s.n_pm, s.n_mp, s.n_mm), (1.0, 0.0, 0.0, 0.0));

        let mut p = [0.0; PATTERNS];
        p[mode_bit(0) | mode_bit(1) | mode_bit(2)] = 1.0;
        let s = squash(&OutcomeDistribution { p });
        assert_eq!((s.n_pp, s.n_pm, s.n_mp, s.n_mm), (0.5, 0.0, 0.5, 0.0));

        let mut p = [0.0; PATTERNS];
        p[PATTERNS - 1] = 1.0;
        let s = squash(&OutcomeDistribution { p });
        assert_eq!((s.n_pp, s.n_pm, s.n_mp, s.n_mm), (0.25, 0.25, 0.25, 0.25));
    }

    #[test]
    fn squash_weight_conservation() {
        for pattern in 0..PATTERNS {
            let total: f64 = squash_weights(pattern).iter().sum();
            if alice_clicked(pattern) && bob_clicked(pattern) {
                assert_eq!(total, 1.0, "pattern {pattern:04b}");
            } else {
                assert_eq!(total, 0.0, "pattern {pattern:04b}");
            }
        }
    }

    #[test]
    fn weak_source_is_perfectly_anticorrelated_in_e() {
        let ch = ChannelParams::new(0.3, 0.7).unwrap();
        let e = oracle_correlation(1e-4, &ch, 0.0).unwrap();
        assert!((e + 1.0).abs() < 1e-6, "{e}");
    }

    #[test]
    fn identify_rejects_bad_grid() {
        let mut grid = FitGrid::standard();
        grid.gammas.push(0.7);
        assert!(matches!(identify_g(&grid), Err(Error::Input(_))));
        grid.gammas.clear();
        assert!(matches!(identify_g(&grid), Err(Error::Input(_))));
    }
}
