//! Photon-number (Fock) expansion of the pair state, truncated at a fixed
//! number of pairs. Slow and approximate; it exists to cross-check the
//! Gaussian computation in [`crate::oracle`] at small gain.
//!
//! The n-pair component has amplitude `(-1)^(n-k) tanh^n γ / cosh²γ` on
//! `|k, n-k⟩_A ⊗ |n-k, k⟩_B` (H, V photon numbers). Each party's n photons
//! are rotated into the detection basis, and arm loss acts on detected
//! photon numbers as independent Bernoulli trials.

use std::f64::consts::FRAC_PI_2;

use crate::error::{domain, Result};
use crate::model::ChannelParams;
use crate::oracle::{mode_bit, OutcomeDistribution, PATTERNS};

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for k in 1..=n {
        f[k] = f[k - 1] * k as f64;
    }
    f
}

fn binomial(f: &[f64], n: usize, k: usize) -> f64 {
    f[n] / (f[k] * f[n - k])
}

/// Rotation of an n-photon two-mode state. Entry `[j][k]` is the amplitude
/// of `|j, n-j⟩` in the rotated modes given `|k, n-k⟩` in (H, V).
fn rotation_matrix(n: usize, phi: f64, f: &[f64]) -> Vec<Vec<f64>> {
    let (s, c) = phi.sin_cos();
    let mut u = vec![vec![0.0; n + 1]; n + 1];
    for k in 0..=n {
        let m = n - k;
        // a_H† = c b1† - s b2†, a_V† = s b1† + c b2†
        for i in 0..=k {
            let from_h = binomial(f, k, i) * c.powi(i as i32) * (-s).powi((k - i) as i32);
            for l in 0..=m {
                let from_v = binomial(f, m, l) * s.powi(l as i32) * c.powi((m - l) as i32);
                let j = i + l;
                let norm = (f[j] * f[n - j] / (f[k] * f[m])).sqrt();
                u[j][k] += from_h * from_v * norm;
            }
        }
    }
    u
}

/// Click-pattern distribution from the Fock expansion with at most
/// `max_pairs` pairs. Angles in radians; Bob is labelled in the φ⁺ frame as
/// in the Gaussian oracle.
pub fn fock_click_distribution(
    mode_gain: f64,
    channel: &ChannelParams,
    phi_a: f64,
    phi_b: f64,
    max_pairs: usize,
) -> Result<OutcomeDistribution> {
    if !(mode_gain >= 0.0 && mode_gain.is_finite()) {
        return Err(domain(format!("gain must be finite and >= 0, got {mode_gain}")));
    }
    let f = factorials(max_pairs);
    let lambda = mode_gain.tanh();
    let weight0 = 1.0 / mode_gain.cosh().powi(2);
    let dark_a = 1.0 - channel.tau_a;
    let dark_b = 1.0 - channel.tau_b;
    let mut p = [0.0; PATTERNS];

    for n in 0..=max_pairs {
        let ua = rotation_matrix(n, phi_a, &f);
        let ub = rotation_matrix(n, phi_b + FRAC_PI_2, &f);
        let base = weight0 * lambda.powi(n as i32);
        // Alice holds k H-photons; Bob holds n-k H-photons.
        let amp_k: Vec<f64> = (0..=n)
            .map(|k| if (n - k) % 2 == 0 { base } else { -base })
            .collect();
        for a in 0..=n {
            for b in 0..=n {
                let amp: f64 = (0..=n).map(|k| amp_k[k] * ua[a][k] * ub[b][n - k]).sum();
                let prob = amp * amp;
                if prob == 0.0 {
                    continue;
                }
                let photons = [a, n - a, b, n - b];
                let dark = [dark_a, dark_a, dark_b, dark_b];
                for (pattern, slot) in p.iter_mut().enumerate() {
                    let mut w = prob;
                    for m in 0..4 {
                        let none = dark[m].powi(photons[m] as i32);
                        w *= if pattern & mode_bit(m) != 0 { 1.0 - none } else { none };
                    }
                    *slot += w;
                }
            }
        }
    }
    Ok(OutcomeDistribution { p })
}

/// Probability of exactly `n` pairs (both mode pairs together) for
/// per-mode-pair gain `mode_gain`: `(n + 1) tanh^{2n}γ / cosh⁴γ`.
pub fn pair_number_probability(mode_gain: f64, n: usize) -> f64 {
    (n as f64 + 1.0) * mode_gain.tanh().powi(2 * n as i32) / mode_gain.cosh().powi(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthogonal() {
        let f = factorials(6);
        for n in 0..=6 {
            let u = rotation_matrix(n, 0.37, &f);
            for i in 0..=n {
                for j in 0..=n {
                    let dot: f64 = (0..=n).map(|k| u[k][i] * u[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pair_number_distribution_sums_to_one() {
        let total: f64 = (0..200).map(|n| pair_number_probability(0.4, n)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_with_truncation() {
        let ch = ChannelParams::new(0.4, 0.6).unwrap();
        let d = fock_click_distribution(0.2, &ch, 0.3, 1.0, 12).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-15);
    }
}
