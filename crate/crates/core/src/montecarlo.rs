//! Finite-statistics simulation of coincidence counting.
//!
//! An acquisition of `t_acq` seconds is split into `floor(t_acq / T_int)`
//! independent windows, each of which produces one of the 16 click patterns
//! with the probabilities computed by [`crate::oracle`]. Pattern counts are
//! drawn from the multinomial distribution with a ChaCha8 generator; shard
//! `k` of seed `s` uses stream `k` of `ChaCha8Rng::seed_from_u64(s)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{domain, Error, Result};
use crate::model::{AngleSet, ChannelParams, ChshReport, SourceParams};
use crate::oracle::{alice_clicked, bob_clicked, oracle_distribution, squash_pattern_weights, SquashedCounts, PATTERNS};

/// One acquisition at a fixed pair of basis angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    /// Alice basis angle in degrees.
    pub phi_a: f64,
    /// Bob basis angle in degrees.
    pub phi_b: f64,
    pub t_acq: f64,
    pub windows: u64,
    pub singles_a: u64,
    pub singles_b: u64,
    /// Counts per click pattern, bit order A₊A₋B₊B₋.
    pub pattern_counts: [u64; PATTERNS],
}

impl CountRecord {
    /// Build a record from pattern counts; singles are derived.
    pub fn from_patterns(phi_a: f64, phi_b: f64, t_acq: f64, pattern_counts: [u64; PATTERNS]) -> Self {
        let windows = pattern_counts.iter().sum();
        let singles_a = (0..PATTERNS).filter(|&k| alice_clicked(k)).map(|k| pattern_counts[k]).sum();
        let singles_b = (0..PATTERNS).filter(|&k| bob_clicked(k)).map(|k| pattern_counts[k]).sum();
        CountRecord { phi_a, phi_b, t_acq, windows, singles_a, singles_b, pattern_counts }
    }

    /// Windows with at least one click on each side.
    pub fn coincidences(&self) -> u64 {
        (0..PATTERNS)
            .filter(|&k| alice_clicked(k) && bob_clicked(k))
            .map(|k| self.pattern_counts[k])
            .sum()
    }

    pub fn squashed(&self) -> SquashedCounts {
        let mut w = [0.0; PATTERNS];
        for (slot, &c) in w.iter_mut().zip(self.pattern_counts.iter()) {
            *slot = c as f64;
        }
        squash_pattern_weights(&w)
    }

    /// Check the internal consistency of the counts.
    pub fn validate(&self) -> Result<()> {
        let rebuilt = CountRecord::from_patterns(self.phi_a, self.phi_b, self.t_acq, self.pattern_counts);
        if rebuilt.windows != self.windows {
            return Err(Error::Input(format!(
                "pattern counts sum to {} but the record has {} windows",
                rebuilt.windows, self.windows
            )));
        }
        if rebuilt.singles_a != self.singles_a || rebuilt.singles_b != self.singles_b {
            return Err(Error::Input("singles inconsistent with pattern counts".into()));
        }
        Ok(())
    }

    /// Sum of two records taken at the same setting.
    pub fn merge(&self, other: &CountRecord) -> Result<CountRecord> {
        if self.phi_a != other.phi_a || self.phi_b != other.phi_b {
            return Err(domain("cannot merge records taken at different settings"));
        }
        let mut counts = self.pattern_counts;
        for (c, o) in counts.iter_mut().zip(other.pattern_counts.iter()) {
            *c += o;
        }
        Ok(CountRecord::from_patterns(self.phi_a, self.phi_b, self.t_acq + other.t_acq, counts))
    }
}

/// Number of coincidence windows in an acquisition.
pub fn window_count(t_acq: f64, t_int: f64) -> Result<u64> {
    if !(t_acq.is_finite() && t_int > 0.0) {
        return Err(domain(format!("invalid timing t_acq={t_acq}, t_int={t_int}")));
    }
    // Guard against 0.3 / 0.1 = 2.9999999999999996.
    let ratio = t_acq / t_int * (1.0 + 8.0 * f64::EPSILON);
    if ratio < 1.0 {
        return Err(domain(format!("acquisition time {t_acq:e} s is shorter than the window {t_int:e} s")));
    }
    Ok(ratio.floor() as u64)
}

/// Draw multinomial counts for `n` trials by successive conditional binomials.
pub fn sample_multinomial<R: rand::Rng + ?Sized>(n: u64, p: &[f64; PATTERNS], rng: &mut R) -> Result<[u64; PATTERNS]> {
    let mut counts = [0u64; PATTERNS];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for k in 0..PATTERNS {
        if left == 0 {
            break;
        }
        if k == PATTERNS - 1 {
            counts[k] = left;
            break;
        }
        let q = if mass > 0.0 { (p[k] / mass).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(left, q)
            .map_err(|e| domain(format!("binomial({left}, {q}): {e}")))?
            .sample(rng);
        counts[k] = draw;
        left -= draw;
        mass -= p[k];
    }
    Ok(counts)
}

/// Simulate one acquisition at basis angles `(phi_a, phi_b)` in degrees.
pub fn run_experiment(
    source: &SourceParams,
    channel: &ChannelParams,
    setting: (f64, f64),
    t_acq: f64,
    seed: u64,
) -> Result<CountRecord> {
    run_experiment_sharded(source, channel, setting, t_acq, seed, 1)
}

/// As [`run_experiment`], with the windows split over `shards` independent
/// streams sampled in parallel. The result depends on `(seed, shards)` only.
pub fn run_experiment_sharded(
    source: &SourceParams,
    channel: &ChannelParams,
    setting: (f64, f64),
    t_acq: f64,
    seed: u64,
    shards: u64,
) -> Result<CountRecord> {
    if shards == 0 {
        return Err(domain("shard count must be >= 1"));
    }
    let windows = window_count(t_acq, source.t_int())?;
    let (phi_a, phi_b) = setting;
    let dist = oracle_distribution(source.mode_gain(), channel, phi_a.to_radians(), phi_b.to_radians())?;
    let per = windows / shards;
    let extra = windows % shards;
    let parts: Vec<[u64; PATTERNS]> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let n = per + u64::from(shard < extra);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard);
            sample_multinomial(n, &dist.p, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut counts = [0u64; PATTERNS];
    for part in &parts {
        for (c, p) in counts.iter_mut().zip(part.iter()) {
            *c += p;
        }
    }
    Ok(CountRecord::from_patterns(phi_a, phi_b, t_acq, counts))
}

/// Simulate the four CHSH settings of `angles`, seeds `seed..seed+4`.
pub fn run_chsh_experiment(
    source: &SourceParams,
    channel: &ChannelParams,
    angles: &AngleSet,
    t_acq: f64,
    seed: u64,
) -> Result<[CountRecord; 4]> {
    let settings = angles.settings();
    let records: Vec<CountRecord> = settings
        .par_iter()
        .enumerate()
        .map(|(k, &s)| run_experiment(source, channel, s, t_acq, seed.wrapping_add(k as u64)))
        .collect::<Result<_>>()?;
    Ok(records.try_into().expect("four settings"))
}

fn same_angle(a: f64, b: f64) -> bool {
    // Polarization bases are 180° periodic.
    let d = (a - b).rem_euclid(180.0);
    d < 1e-9 || 180.0 - d < 1e-9
}

/// Correlation and its uncertainty from squashed bins, with
/// `ΔN = α √N` per bin.
pub fn correlation_from_counts(counts: &SquashedCounts, alpha: f64) -> Result<(f64, f64)> {
    let par = counts.n_par();
    let perp = counts.n_perp();
    let total = par + perp;
    if !(total > 0.0) {
        return Err(Error::Degenerate("no coincidences at this setting".into()));
    }
    let e = (perp - par) / total;
    // ∂E/∂N⊥ = 2N∥/N², ∂E/∂N∥ = -2N⊥/N²; each bin is independent.
    let d_perp = 2.0 * par / (total * total);
    let d_par = 2.0 * perp / (total * total);
    let var = alpha * alpha * (d_perp * d_perp * perp + d_par * d_par * par);
    Ok((e, var.sqrt()))
}

/// Empirical CHSH report from one record per setting of `angles`.
pub fn chsh_from_counts(records: &[CountRecord], angles: &AngleSet, alpha: f64) -> Result<ChshReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(domain(format!("alpha must be > 0, got {alpha}")));
    }
    let mut e_values = [0.0; 4];
    let mut delta_e = [0.0; 4];
    for (k, (phi_a, phi_b)) in angles.settings().into_iter().enumerate() {
        let record = records
            .iter()
            .find(|r| same_angle(r.phi_a, phi_a) && same_angle(r.phi_b, phi_b))
            .ok_or_else(|| Error::Input(format!("no record at setting ({phi_a}°, {phi_b}°)")))?;
        let (e, de) = correlation_from_counts(&record.squashed(), alpha)?;
        e_values[k] = e;
        delta_e[k] = de;
    }
    Ok(ChshReport::from_correlations(e_values, delta_e))
}

/// `α = s / √mean` for a set of repeated counts.
pub fn fit_alpha_values(counts: &[f64]) -> Result<f64> {
    if counts.len() < 5 {
        return Err(domain(format!("need at least 5 replicates, got {}", counts.len())));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::Degenerate("replicate mean is zero".into()));
    }
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((var / mean).sqrt())
}

/// Fit `α` in `ΔN = α √N` to the coincidence counts of repeated records.
pub fn fit_alpha(replicates: &[CountRecord]) -> Result<f64> {
    let counts: Vec<f64> = replicates.iter().map(|r| r.coincidences() as f64).collect();
    fit_alpha_values(&counts)
}

/// Range of plausible `α` values at a given confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBand {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub level: f64,
    pub dof: u32,
}

impl AlphaBand {
    pub fn contains(&self, alpha: f64) -> bool {
        self.alpha_low <= alpha && alpha <= self.alpha_high
    }
}

/// Chi-square quantile by bisection on the regularized lower incomplete
/// gamma function.
pub fn chi_square_quantile(p: f64, dof: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("probability must lie in (0, 1), got {p}")));
    }
    if dof == 0 {
        return Err(domain("degrees of freedom must be >= 1"));
    }
    let k = dof as f64 / 2.0;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let mut hi = dof as f64 + 10.0;
    while cdf(hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided band `α ∈ [√k / χ_{1-a, k}, √k / χ_{a, k}]` with
/// `a = (1 - level) / 4`, where `χ` is a chi quantile. For `level = 0.9`,
/// `k = 4` this is `[2/χ_{0.975,4}, 2/χ_{0.025,4}]`.
pub fn alpha_band(level: f64, dof: u32) -> Result<AlphaBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if dof == 0 {
        return Err(domain("degrees of freedom must be >= 1"));
    }
    let tail = (1.0 - level) / 4.0;
    let scale = (dof as f64).sqrt();
    let alpha_low = scale / chi_square_quantile(1.0 - tail, dof)?.sqrt();
    let alpha_high = scale / chi_square_quantile(tail, dof)?.sqrt();
    Ok(AlphaBand { alpha_low, alpha_high, level, dof })
}
