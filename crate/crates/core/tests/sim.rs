use std::f64::consts::TAU;

use stochwave_core::fields::{self, Field, Grid, ShiftScheme};
use stochwave_core::models::nagumo;
use stochwave_core::noise::KernelSpec;
use stochwave_core::sim::{self, coupled_difference, Scheme, Setup, SimConfig, TrajectoryRecord};
use stochwave_core::Error;

fn setup() -> Setup {
    let g = Grid::new(20.0, 128, 2, TAU, 8).unwrap();
    Setup::build(&nagumo(0.25), &g, &KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0).unwrap()
}

fn cfg(sigma: f64, t_end: f64) -> SimConfig {
    SimConfig { sigma, dt: 0.01, t_end, record_stride: 1, ..Default::default() }
}

#[test]
fn deterministic_wave_is_relative_equilibrium() {
    let s = setup();
    let sim = s.simulator(SimConfig { dt: 1e-3, ..cfg(0.0, 1.0) }).unwrap();
    let rec = sim.run_trajectory(0, None).unwrap();
    assert!(rec.v_norm.iter().all(|v| *v <= 1e-6));
    assert!(rec.n_series.iter().all(|n| *n <= 1e-10));
    assert!(rec.exit_time.is_infinite() && rec.flags.completed);
    let t = *rec.times.last().unwrap();
    assert!((rec.gamma.last().unwrap() - sim.wave.c * t).abs() <= 10.0 * 1e-3 * t);
}

#[test]
fn orthogonal_perturbation_decays() {
    let s = setup();
    let g = s.grid.clone();
    let sim = s.simulator(cfg(0.0, 6.0)).unwrap();
    // zero transverse mean, so only the gapped modes are excited
    let bump = Field::from_fn(&g, 1, |_, x, y| 0.05 * (-x * x).exp() * y[0].sin());
    let u0 = Field::extend(&s.wave.phi, &g).unwrap().add(&bump);
    let rec = sim.run_trajectory(0, Some(&u0)).unwrap();
    let norms = &rec.v_norm;
    assert!(norms[0] > 1e-3);
    assert!(*norms.last().unwrap() < 0.1 * norms[0], "{} -> {}", norms[0], norms.last().unwrap());
}

#[test]
fn replay_is_bitwise() {
    let sim = setup().simulator(cfg(0.1, 0.5)).unwrap();
    assert_eq!(sim.run_trajectory(4, None).unwrap(), sim.run_trajectory(4, None).unwrap());
    assert_ne!(sim.run_trajectory(4, None).unwrap().gamma, sim.run_trajectory(5, None).unwrap().gamma);
}

#[test]
fn worker_count_does_not_change_results() {
    let sim = setup().simulator(cfg(0.1, 0.3)).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| sim.ensemble(0..6)).unwrap();
    let b = four.install(|| sim.ensemble(0..6)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().enumerate().all(|(i, r)| r.trajectory == i as u64));
}

#[test]
fn exit_time_is_monotone_in_eta() {
    let s = setup();
    let mut last = 0.0;
    for eta in [0.02, 0.05, 0.1, f64::INFINITY] {
        let sim = s.simulator(SimConfig { eta, ..cfg(0.1, 3.0) }).unwrap();
        let rec = sim.run_trajectory(2, None).unwrap();
        assert!(rec.exit_time >= last, "eta {eta}");
        if rec.exit_time.is_finite() {
            // the first recorded N above η is at the exit time
            let k = rec.times.iter().position(|&t| t >= rec.exit_time - 1e-12).unwrap();
            assert!(rec.n_series[k] > eta && rec.n_series[..k].iter().all(|n| *n <= eta));
        }
        last = rec.exit_time;
    }
    assert!(last.is_infinite());
}

#[test]
fn discounted_integral_matches_quadrature() {
    let s = setup();
    let sim = s.simulator(SimConfig { keep_snapshots: true, ..cfg(0.1, 1.0) }).unwrap();
    let rec = sim.run_trajectory(1, None).unwrap();
    let g = &s.grid;
    let eps = sim.cfg.epsilon;
    let k = sim.cfg.k;
    let t = *rec.times.last().unwrap();
    let mut integral = 0.0;
    for j in 0..rec.times.len() - 1 {
        let v = Field::from_vec(g, 1, rec.snapshots[j].clone()).unwrap();
        let dt = rec.times[j + 1] - rec.times[j];
        integral += (-eps * (t - rec.times[j + 1])).exp() * dt * fields::sobolev_norm(&v, k + 1).unwrap().powi(2);
    }
    let v_end = Field::from_vec(g, 1, rec.snapshots.last().unwrap().clone()).unwrap();
    let direct = fields::sobolev_norm(&v_end, k).unwrap().powi(2) + integral;
    let running = *rec.n_series.last().unwrap();
    assert!((running - direct).abs() <= 0.01 * direct, "{running} vs {direct}");
}

#[test]
fn binary_record_round_trip() {
    let sim = setup().simulator(SimConfig { keep_snapshots: true, record_stride: 10, ..cfg(0.1, 0.2) }).unwrap();
    let rec = sim.run_trajectory(0, None).unwrap();
    let mut buf = Vec::new();
    rec.write_binary(&mut buf, "{\"grid\":\"128x8\"}").unwrap();
    assert_eq!(&buf[..6], b"SWTRJ\0");
    let (back, header) = TrajectoryRecord::read_binary(&buf[..]).unwrap();
    assert_eq!(back, rec);
    assert_eq!(header, "{\"grid\":\"128x8\"}");
    buf[0] = b'X';
    assert!(TrajectoryRecord::read_binary(&buf[..]).is_err());
}

#[test]
fn freeze_unfreeze_round_trip() {
    let s = setup();
    let sw = s.stochastic_wave(0.0).unwrap();
    let u = fields::shift(&Field::extend(&sw.phi, &s.grid).unwrap(), 1.3, ShiftScheme::Lagrange8).unwrap();
    let v = sim::freeze(&u, 1.3, &sw.phi, ShiftScheme::Lagrange8).unwrap();
    assert!(v.sup_norm() < 1e-3);
    let back = sim::unfreeze(&v, 1.3, &sw.phi, ShiftScheme::Lagrange8).unwrap();
    assert!(back.sub(&u).sup_norm() < 1e-3);
    assert!(matches!(sim::freeze(&u, 12.0, &sw.phi, ShiftScheme::Lagrange8), Err(Error::Recenter { .. })));
}

#[test]
fn cross_validation_is_exact_without_noise() {
    let sim = setup().simulator(SimConfig { dt: 1e-3, ..cfg(0.0, 1.0) }).unwrap();
    assert!(sim.cross_validate(0, 1.0).unwrap().max <= 1e-6);
}

#[test]
fn strong_error_shrinks_under_dt_halving() {
    let s = setup();
    let mk = |dt: f64, level: u32| s.simulator(SimConfig { dt, noise_level: level, ..cfg(0.05, 1.0) }).unwrap();
    let (a, b, c) = (mk(4e-3, 2), mk(2e-3, 1), mk(1e-3, 0));
    let (mut e1, mut e2) = (0.0, 0.0);
    for p in 0..8 {
        let (du1, dg1) = coupled_difference(&a, &b, p, 1.0).unwrap();
        let (du2, dg2) = coupled_difference(&b, &c, p, 1.0).unwrap();
        e1 += du1 * du1 + dg1 * dg1;
        e2 += du2 * du2 + dg2 * dg2;
    }
    let factor = (e1 / e2).sqrt();
    assert!((1.2..=2.8).contains(&factor), "{factor}");
}

#[test]
fn explicit_scheme_agrees_at_small_dt() {
    let s = setup();
    let imex = s.simulator(SimConfig { dt: 2e-3, ..cfg(0.05, 0.2) }).unwrap();
    let expl = s.simulator(SimConfig { dt: 2e-3, scheme: Scheme::ExplicitEm, ..cfg(0.05, 0.2) }).unwrap();
    let a = imex.run_trajectory(0, None).unwrap();
    let b = expl.run_trajectory(0, None).unwrap();
    assert!((a.gamma.last().unwrap() - b.gamma.last().unwrap()).abs() < 1e-3);
}

#[test]
fn config_validation_names_fields() {
    let bad = SimConfig { sigma: -1.0, dt: 0.0, k: 3, ..Default::default() };
    let v = bad.violations();
    assert_eq!(v.len(), 3);
    assert!(v[0].starts_with("sigma") && v[1].starts_with("dt") && v[2].starts_with("k"));
    assert!(SimConfig { epsilon: 1.0, ..Default::default() }.check_epsilon(0.28).is_err());
}

#[test]
fn long_runs_stay_in_the_comoving_frame() {
    let sim = setup().simulator(SimConfig { dt: 0.02, ..cfg(0.1, 40.0) }).unwrap();
    let rec = sim.run_trajectory(0, None).unwrap();
    assert!(rec.flags.completed);
    // c·t = 14 exceeds L/2; only the fluctuation lives on the grid
    let drift = rec.gamma.last().unwrap() - sim.wave.c * 40.0;
    assert!(drift.abs() < 1.0, "{drift}");
}
