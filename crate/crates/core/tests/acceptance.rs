//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. All tolerances are fixed below.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chshsim::calibration::{estimate_c_gamma, MeasuredRecord, DEFAULT_REGIME_THRESHOLD};
use chshsim::fock::fock_click_distribution;
use chshsim::model::{chsh, AngleSet, ChannelParams, CoefficientForm, GModel, MuConvention, SourceParams};
use chshsim::montecarlo::{alpha_band, chsh_from_counts, fit_alpha, run_chsh_experiment, run_experiment};
use chshsim::optimizer::{optimize_mu, Experiment, DEFAULT_TOL};
use chshsim::oracle::{identify_g, oracle_distribution, FitGrid, FIT_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_INT: f64 = 3e-9;

// Reference anchors.
const S_CROSSING_MU: f64 = 0.303;
const FOM_PEAK: f64 = 91.67;
const FOM_PEAK_MU: f64 = 0.1307;
const C_GAMMA: f64 = 0.0469;
const MEASURED_S: f64 = 2.69;

// Tolerances.
const LIMIT_TOL: f64 = 1e-6;
const CROSSING_REL: f64 = 0.03;
const PEAK_REL: f64 = 0.05;
const PEAK_MU_REL: f64 = 0.03;
const FOCK_TV: f64 = 1e-8;
const MC_SIGMAS: f64 = 3.0;
const MC_MIN_FRACTION: f64 = 0.95;
const C_GAMMA_REL: f64 = 0.05;
const TAU_REL: f64 = 0.02;
const BAND_REL: f64 = 1e-8;
const COVERAGE_TARGET: f64 = 0.90;
const COVERAGE_SIGMAS: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn reference_channel() -> ChannelParams {
    ChannelParams::from_loss_db(10.0, 9.2).unwrap()
}

fn reference_experiment() -> Experiment {
    Experiment::new(reference_channel(), T_INT, 1.0, 1.0)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn low_brightness_limit() -> Outcome {
    let taus = [0.1, 0.5, 0.9];
    let mut worst: f64 = 0.0;
    for &a in &taus {
        for &b in &taus {
            let source = SourceParams::from_mu(1e-10, T_INT).unwrap();
            let ch = ChannelParams::new(a, b).unwrap();
            let r = chsh(&source, &ch, &AngleSet::default(), 1.0, 1.0).unwrap();
            worst = worst.max((r.s - 2.0 * SQRT_2).abs());
        }
    }
    Outcome { pass: worst <= LIMIT_TOL, detail: format!("max |S - 2√2| = {worst:.2e} over 9 channels") }
}

fn oracle_equivalence() -> Outcome {
    let report = identify_g(&FitGrid::standard()).unwrap();
    let summary: Vec<String> = report
        .candidates
        .iter()
        .map(|c| {
            format!(
                "{}/{}={}",
                c.candidate.g_model.name(),
                c.candidate.coefficient_form.name(),
                c.max_deviation.map_or("fails".to_string(), |d| format!("{d:.1e}"))
            )
        })
        .collect();
    let Some(selected) = report.selected else {
        return Outcome { pass: false, detail: format!("no candidate within {FIT_TOLERANCE}: {}", summary.join(", ")) };
    };
    let fit = report.candidates.iter().find(|c| c.candidate == selected).unwrap();
    let dev = fit.max_deviation.unwrap();
    let is_default = selected.g_model == GModel::default() && selected.coefficient_form == CoefficientForm::default();
    Outcome {
        pass: dev <= FIT_TOLERANCE && is_default,
        detail: format!(
            "selected {}/{} (shipped default: {is_default}), max deviation {dev:.2e}; {}",
            selected.g_model.name(),
            selected.coefficient_form.name(),
            summary.join(", ")
        ),
    }
}

fn s_crossing() -> Outcome {
    let exp = reference_experiment();
    let s = |mu: f64| exp.report(mu).unwrap().s;
    let (mut lo, mut hi) = (1e-3, 0.9);
    assert!(s(lo) > 2.0 && s(hi) < 2.0, "crossing not bracketed");
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if s(mid) > 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mu = 0.5 * (lo + hi);
    let err = rel(mu, S_CROSSING_MU);
    Outcome {
        pass: err <= CROSSING_REL,
        detail: format!("S = 2 at mu = {mu:.4} (target {S_CROSSING_MU}, rel. err {:.1}%)", 100.0 * err),
    }
}

fn fom_peak() -> Outcome {
    let opt = optimize_mu(&reference_experiment(), (1e-4, 0.9), DEFAULT_TOL).unwrap();
    let fom_err = rel(opt.fom_star, FOM_PEAK);
    let mu_err = rel(opt.mu_star, FOM_PEAK_MU);
    Outcome {
        pass: fom_err <= PEAK_REL && mu_err <= PEAK_MU_REL,
        detail: format!(
            "peak fom = {:.2} at mu = {:.4} (target {FOM_PEAK} at {FOM_PEAK_MU}; rel. err {:.1}% / {:.1}%)",
            opt.fom_star,
            opt.mu_star,
            100.0 * fom_err,
            100.0 * mu_err
        ),
    }
}

fn gaussian_vs_fock() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let gamma = rng.random_range(0.0..=0.2);
        let ch = ChannelParams::new(rng.random_range(0.01..=1.0), rng.random_range(0.01..=1.0)).unwrap();
        let phi_a = rng.random_range(0.0..std::f64::consts::PI);
        let phi_b = rng.random_range(0.0..std::f64::consts::PI);
        let g = oracle_distribution(gamma, &ch, phi_a, phi_b).unwrap();
        let f = fock_click_distribution(gamma, &ch, phi_a, phi_b, 12).unwrap();
        worst = worst.max(g.total_variation(&f));
    }
    Outcome { pass: worst <= FOCK_TV, detail: format!("max total variation {worst:.2e} over 50 draws") }
}

fn monte_carlo_consistency() -> Outcome {
    let source = SourceParams::from_mu(0.1, T_INT).unwrap();
    let ch = ChannelParams::new(0.1, 0.1).unwrap();
    let angles = AngleSet::default();
    let t_acq = 1e6 * T_INT;
    let analytic = chsh(&source, &ch, &angles, 1.0, t_acq).unwrap().s;
    let seeds = 200u64;
    let mut inside = 0;
    for seed in 0..seeds {
        let records = run_chsh_experiment(&source, &ch, &angles, t_acq, 1000 + 4 * seed).unwrap();
        let r = chsh_from_counts(&records, &angles, 1.0).unwrap();
        if (r.s - analytic).abs() <= MC_SIGMAS * r.delta_s {
            inside += 1;
        }
    }
    let frac = inside as f64 / seeds as f64;
    Outcome {
        pass: frac >= MC_MIN_FRACTION,
        detail: format!("{inside}/{seeds} seeds within 3 ΔS of S = {analytic:.4}"),
    }
}

fn calibration_recovery() -> Outcome {
    let ch = reference_channel();
    let (loss_db, _) = ch.loss_db();
    let windows = 1e7;
    let t_acq = windows * T_INT;
    let records: Vec<MeasuredRecord> = (1..=20)
        .map(|k| {
            let power = 0.1 * k as f64;
            let gamma = C_GAMMA * power.sqrt();
            let source = SourceParams::from_gamma(gamma, T_INT).unwrap();
            let rec = run_experiment(&source, &ch, (0.0, 0.0), t_acq, 2024 + k).unwrap();
            MeasuredRecord::from_count_record(power, -loss_db, &rec)
        })
        .collect();
    let cal = estimate_c_gamma(&records, T_INT, DEFAULT_REGIME_THRESHOLD, MuConvention::default()).unwrap();
    let errs = [rel(cal.c_gamma, C_GAMMA), rel(cal.tau_a, ch.tau_a), rel(cal.tau_b, ch.tau_b)];
    Outcome {
        pass: errs[0] <= C_GAMMA_REL && errs[1] <= TAU_REL && errs[2] <= TAU_REL,
        detail: format!(
            "C_γ = {:.5} ({:.2}%), τ_A = {:.5} ({:.2}%), τ_B = {:.5} ({:.2}%)",
            cal.c_gamma,
            100.0 * errs[0],
            cal.tau_a,
            100.0 * errs[1],
            cal.tau_b,
            100.0 * errs[2]
        ),
    }
}

/// Chi-square quantile for 4 degrees of freedom from the closed-form CDF
/// `1 - e^{-x/2} (1 + x/2)`, by Newton iteration.
fn chi2_4_quantile(p: f64) -> f64 {
    let mut x: f64 = 4.0;
    for _ in 0..100 {
        let cdf = 1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0);
        let pdf = x / 4.0 * (-x / 2.0).exp();
        let step = (cdf - p) / pdf;
        x = (x - step).max(x / 10.0);
        if step.abs() < 1e-15 * x {
            break;
        }
    }
    x
}

fn alpha_band_check() -> Outcome {
    let band = alpha_band(0.90, 4).unwrap();
    let want_low = 2.0 / chi2_4_quantile(0.975).sqrt();
    let want_high = 2.0 / chi2_4_quantile(0.025).sqrt();
    let band_ok = rel(band.alpha_low, want_low) <= BAND_REL && rel(band.alpha_high, want_high) <= BAND_REL;

    // Poisson regime: rare coincidences over many windows.
    let source = SourceParams::from_mu(1e-3, T_INT).unwrap();
    let ch = ChannelParams::new(0.1, 0.1).unwrap();
    let t_acq = 5e6 * T_INT;
    let groups = 500u64;
    let replicates = band.dof as u64 + 1;
    let mut inside = 0;
    for g in 0..groups {
        let recs: Vec<_> = (0..replicates)
            .map(|r| run_experiment(&source, &ch, (0.0, 0.0), t_acq, 77_000 + g * replicates + r).unwrap())
            .collect();
        if band.contains(fit_alpha(&recs).unwrap()) {
            inside += 1;
        }
    }
    let frac = inside as f64 / groups as f64;
    let sigma = (COVERAGE_TARGET * (1.0 - COVERAGE_TARGET) / groups as f64).sqrt();
    let coverage_ok = (frac - COVERAGE_TARGET).abs() <= COVERAGE_SIGMAS * sigma;
    // P(χ²₄ ≥ 4 α_low²) for Poisson counts; the upper bound is far in the tail.
    let x = 4.0 * band.alpha_low * band.alpha_low;
    let expected = (-x / 2.0).exp() * (1.0 + x / 2.0);
    Outcome {
        pass: band_ok && coverage_ok,
        detail: format!(
            "band [{:.6}, {:.6}] vs oracle [{want_low:.6}, {want_high:.6}] ({}); coverage {inside}/{groups} = {frac:.3}, required {:.3}..{:.3} ({}); expected coverage of this band is {expected:.3}",
            band.alpha_low,
            band.alpha_high,
            if band_ok { "ok" } else { "mismatch" },
            COVERAGE_TARGET - COVERAGE_SIGMAS * sigma,
            COVERAGE_TARGET + COVERAGE_SIGMAS * sigma,
            if coverage_ok { "ok" } else { "outside" }
        ),
    }
}

fn experimental_bound() -> Outcome {
    // -19.03 dB total: 10 dB to Alice, 9.03 dB to Bob.
    let ch = ChannelParams::from_loss_db(10.0, 9.03).unwrap();
    let source = SourceParams::from_mu(0.026, T_INT).unwrap();
    let s = chsh(&source, &ch, &AngleSet::default(), 1.0, 1.0).unwrap().s;
    Outcome {
        pass: (MEASURED_S..=2.0 * SQRT_2).contains(&s),
        detail: format!("model S = {s:.4}, measured {MEASURED_S}, bound 2√2"),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("1 low-brightness CHSH limit", Duration::from_secs(1), low_brightness_limit),
        ("2 oracle-model equivalence", Duration::from_secs(60), oracle_equivalence),
        ("3 S crossing", Duration::from_secs(10), s_crossing),
        ("4 fom peak", Duration::from_secs(10), fom_peak),
        ("5 Gaussian vs Fock oracle", Duration::from_secs(60), gaussian_vs_fock),
        ("6 Monte Carlo consistency", Duration::from_secs(300), monte_carlo_consistency),
        ("7 calibration recovery", Duration::from_secs(300), calibration_recovery),
        ("8 alpha band", Duration::from_secs(300), alpha_band_check),
        ("9 experimental sanity bound", Duration::from_secs(10), experimental_bound),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= limit;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {name}: {} - {} [{:.2} s, limit {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", exceeded" }
        );
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
