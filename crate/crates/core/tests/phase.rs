use std::f64::consts::TAU;

use stochwave_core::fields::{self, Field, Grid};
use stochwave_core::meta::c02_theory;
use stochwave_core::models::nagumo;
use stochwave_core::noise::KernelSpec;
use stochwave_core::phase::{distance_to_profile, StochasticWave};
use stochwave_core::sim::Setup;

fn setup(kernel: &KernelSpec, mu: f64) -> Setup {
    let g = Grid::new(20.0, 128, 2, TAU, 8).unwrap();
    Setup::build(&nagumo(0.25), &g, kernel, mu).unwrap()
}

#[test]
fn zero_noise_wave_is_the_deterministic_wave() {
    let s = setup(&KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0);
    let sw = s.stochastic_wave(0.0).unwrap();
    assert!((sw.c - s.wave.c).abs() < 1e-10);
    assert!(sw.phi.sub(&s.wave.phi).sup_norm() < 1e-8);
    let det = StochasticWave::deterministic(&s.wave);
    assert_eq!(det.sigma, 0.0);
}

#[test]
fn correction_toggle_moves_only_the_correction_term() {
    let k = KernelSpec::homogeneous_transverse(1.0);
    let (s0, s1) = (setup(&k, 0.0), setup(&k, 1.0));
    let t0 = c02_theory(&s0.model, &s0.wave.phi, &s0.lin.psi, &s0.kernel, 0.0).unwrap();
    let t1 = c02_theory(&s1.model, &s1.wave.phi, &s1.lin.psi, &s1.kernel, 1.0).unwrap();
    assert_eq!(t0.correction, 0.0);
    assert!(t1.correction > 0.0);
    assert!((t0.curvature - t1.curvature).abs() < 1e-12);
    assert!((t0.transport - t1.transport).abs() < 1e-12);
    assert!((t1.total - t0.total - t1.correction).abs() < 1e-12);
}

#[test]
fn noiseless_model_has_no_second_order_speed() {
    let s = setup(&KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0);
    let quiet = s.model.clone().without_noise();
    let t = c02_theory(&quiet, &s.wave.phi, &s.lin.psi, &s.kernel, 0.0).unwrap();
    assert_eq!(t.total, 0.0);
}

#[test]
fn speed_shift_is_quadratic_with_theory_coefficient() {
    let k = KernelSpec::homogeneous_transverse(1.0);
    let s = setup(&k, 1.0);
    let theory = c02_theory(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel, 1.0).unwrap().total;
    let sigma = 0.05;
    let sw = s.stochastic_wave(sigma).unwrap();
    let est = (sw.c - s.wave.c) / (sigma * sigma);
    assert!((est - theory).abs() <= 0.1 * theory.abs(), "{est} vs {theory}");
    assert!(sw.residual < 1e-8);
}

#[test]
fn stochastic_wave_stays_close_to_deterministic() {
    let s = setup(&KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0);
    let mut last = 0.0;
    for sigma in [0.02, 0.04, 0.08] {
        let sw = s.stochastic_wave(sigma).unwrap();
        let d = distance_to_profile(&sw.phi, &s.wave.phi);
        assert!(d > last && d < 10.0 * sigma * sigma, "{sigma}: {d}");
        last = d;
    }
}

#[test]
fn phase_is_stationary_along_the_wave() {
    let s = setup(&KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0);
    let u = Field::extend(&s.wave.phi, &s.grid).unwrap();
    // at σ = 0 the phase speed on the wave is c itself
    let a = s.sys.a_sigma(&u, 0.0, s.wave.c, 0.0).unwrap();
    assert!(a.abs() < 1e-8, "{a}");
    // 𝒥 leaves out diffusion, so on the wave it is −Φ''
    let j = s.sys.j_sigma(&u, 0.0, s.wave.c, 0.0).unwrap();
    let lap = Field::extend(&fields::deriv_x(&s.wave.phi, 2).unwrap(), &s.grid).unwrap();
    assert!(fields::l2_norm(&j.add(&lap)) < 1e-6 * fields::l2_norm(&lap));
}
