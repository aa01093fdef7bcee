use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stochwave_core::meta::{self, clopper_pearson, exit_curve, phase_statistics};
use stochwave_core::sim::TrajectoryRecord;
use stochwave_core::Error;

/// γ(t) = c·t + s·W(t) on [0, t_end] sampled every 0.1.
fn brownian(n: usize, c: f64, s: f64, t_end: f64, seed: u64) -> Vec<TrajectoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = (t_end / 0.1).round() as usize;
    (0..n)
        .map(|p| {
            let mut w = 0.0;
            let mut rec = TrajectoryRecord { trajectory: p as u64, exit_time: f64::INFINITY, ..Default::default() };
            for k in 0..=steps {
                let t = k as f64 * 0.1;
                if k > 0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    w += 0.1f64.sqrt() * z;
                }
                rec.times.push(t);
                rec.gamma.push(c * t + s * w);
            }
            rec
        })
        .collect()
}

fn exiting(n: usize, exits: usize, at: f64) -> Vec<TrajectoryRecord> {
    (0..n)
        .map(|p| TrajectoryRecord {
            trajectory: p as u64,
            exit_time: if p < exits { at } else { f64::INFINITY },
            ..Default::default()
        })
        .collect()
}

#[test]
fn brownian_phase_recovers_slope_and_drift() {
    let recs = brownian(400, 0.35, 0.2, 10.0, 1);
    let st = phase_statistics(&recs, 0.35, 9).unwrap();
    assert_eq!(st.n_used, 400);
    assert!((st.var_slope_origin - 0.04).abs() < 0.006, "{}", st.var_slope_origin);
    assert!(st.r2_origin > 0.95);
    assert!(st.var_slope_ci.0 <= st.var_slope && st.var_slope <= st.var_slope_ci.1);
    assert!(st.drift_ci.0 <= st.drift && st.drift <= st.drift_ci.1);
    assert!(st.drift_ci.0 < 0.35 && 0.35 < st.drift_ci.1);
}

#[test]
fn bootstrap_interval_shrinks_like_root_n() {
    let width = |n| {
        let st = phase_statistics(&brownian(n, 0.0, 0.2, 5.0, 2), 0.0, 3).unwrap();
        st.drift_ci.1 - st.drift_ci.0
    };
    let factor = width(200) / width(400);
    assert!((1.25..=1.6).contains(&factor), "{factor}");
}

#[test]
fn noiseless_ensemble_has_no_spread() {
    let st = phase_statistics(&brownian(60, 0.35, 0.0, 2.0, 0), 0.35, 0).unwrap();
    assert!(st.var_slope.abs() < 1e-20 && st.variance.iter().all(|v| v.abs() < 1e-20));
    assert!((st.drift - 0.35).abs() < 1e-12);
    assert_eq!(st.drift_ci.0, st.drift_ci.1);
}

#[test]
fn phase_statistics_needs_fifty_paths() {
    let r = phase_statistics(&brownian(49, 0.0, 0.1, 1.0, 0), 0.0, 0);
    assert!(matches!(r, Err(Error::TooFewSamples { need: 50, have: 49 })));
}

#[test]
fn early_exits_are_censored() {
    let mut recs = brownian(100, 0.0, 0.1, 2.0, 5);
    for r in recs.iter_mut().take(30) {
        r.exit_time = 0.5;
        r.times.truncate(6);
        r.gamma.truncate(6);
    }
    let st = phase_statistics(&recs, 0.0, 0).unwrap();
    assert_eq!(st.n_used, 70);
    assert!(st.censored && (st.early_exit_fraction - 0.3).abs() < 1e-12);
}

#[test]
fn clopper_pearson_reference_values() {
    let (lo, hi) = clopper_pearson(0, 10, 0.95).unwrap();
    assert_eq!(lo, 0.0);
    assert!((hi - (1.0 - 0.05f64.powf(0.1))).abs() < 1e-12);
    // x = 5 of 10: the textbook interval (0.1871, 0.8129)
    let (lo, hi) = clopper_pearson(5, 10, 0.95).unwrap();
    assert!((lo - 0.18709).abs() < 1e-4 && (hi - 0.81291).abs() < 1e-4, "{lo} {hi}");
    assert!(clopper_pearson(3, 2, 0.95).is_err());
}

#[test]
fn exit_curve_design_errors() {
    let none = vec![(0.1, exiting(10, 0, 1.0)), (0.2, exiting(10, 0, 1.0))];
    assert!(matches!(exit_curve(&none, 0.1, 5.0), Err(Error::Design(_))));
    let all = vec![(0.1, exiting(10, 10, 1.0)), (0.2, exiting(10, 10, 1.0))];
    assert!(matches!(exit_curve(&all, 0.1, 5.0), Err(Error::Design(_))));
    let empty = vec![(0.1, Vec::new())];
    assert!(matches!(exit_curve(&empty, 0.1, 5.0), Err(Error::Design(_))));
    let unordered = vec![(0.2, exiting(10, 1, 1.0)), (0.1, exiting(10, 2, 1.0))];
    assert!(matches!(exit_curve(&unordered, 0.1, 5.0), Err(Error::Parameter(_))));
}

#[test]
fn exit_curve_on_a_large_deviation_law() {
    // P = exp(−μη/σ²) with μ = 0.3, η = 0.1
    let sigmas: [f64; 5] = [0.08, 0.1, 0.13, 0.17, 0.25];
    let ens: Vec<(f64, Vec<TrajectoryRecord>)> = sigmas
        .iter()
        .map(|&s| {
            let p = (-0.03 / (s * s)).exp();
            (s, exiting(1000, (p * 1000.0).round() as usize, 2.0))
        })
        .collect();
    let c = exit_curve(&ens, 0.1, 5.0).unwrap();
    assert!((c.mu_fit - 0.3).abs() < 0.02, "{}", c.mu_fit);
    assert!(c.spearman_rho < -0.99 && c.spearman_p < 0.05);
    assert!(c.mu_envelope > 0.0);
    for r in &c.rows {
        assert!(r.ci.0 <= r.p_hat && r.p_hat <= r.ci.1);
        // the envelope exponent keeps every row under 2T·exp(−μη/σ²)
        assert!(r.p_hat <= 2.0 * c.horizon * (-c.mu_envelope * c.eta / (r.sigma * r.sigma)).exp() * (1.0 + 1e-12));
    }
    // exits after the horizon do not count
    let late = vec![(0.1, exiting(10, 5, 6.0)), (0.2, exiting(10, 5, 1.0))];
    assert_eq!(exit_curve(&late, 0.1, 5.0).unwrap().rows[0].exits, 0);
}

#[test]
fn drift_sweep_recovers_quadratic_coefficient() {
    let pts: Vec<(f64, f64)> = [0.05, 0.1, 0.15, 0.2].iter().map(|&s| (s, 0.35 + 0.1 * s * s)).collect();
    let f = meta::sigma_drift_sweep(&pts).unwrap();
    assert!((f.c0 - 0.35).abs() < 1e-12 && (f.c02 - 0.1).abs() < 1e-10);
    assert!(f.c02_half_width < 1e-8 && !f.fit_warning);
    assert!(meta::sigma_drift_sweep(&pts[..1]).is_err());
}

#[test]
fn paired_difference_of_shifted_ensembles() {
    let a = brownian(40, 0.3, 0.1, 2.0, 7);
    let b: Vec<TrajectoryRecord> = a
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.gamma.iter_mut().zip(&r.times).for_each(|(g, t)| *g += 0.01 * t);
            r
        })
        .collect();
    let (m, hw) = meta::paired_drift_difference(&a, &b).unwrap();
    assert!((m - 0.01).abs() < 1e-12 && hw < 1e-12);
}
