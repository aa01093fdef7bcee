use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochwave_core::fields::{self, Field, Grid};
use stochwave_core::fwd::{self, BrownianPaths, ModeBasis, StepProcess};
use stochwave_core::linear::{Linearisation, NuSeries};
use stochwave_core::models::nagumo;
use stochwave_core::noise::{KernelSpec, NoiseKernel};
use stochwave_core::wave;
use stochwave_core::Error;

struct Lab {
    lin: Linearisation,
    basis: ModeBasis,
    nu: NuSeries,
    profile: Field,
}

fn lab() -> Lab {
    let g = Grid::new(10.0, 64, 2, TAU, 8).unwrap();
    let model = nagumo(0.25);
    let w = wave::solve_wave(&model, &g.profile(), None).unwrap();
    let lin = Linearisation::build(&w, &model, &g).unwrap();
    let kernel = NoiseKernel::build(&KernelSpec::gaussian(1.0, 1.0, 1.0), &g, 1).unwrap();
    let basis = ModeBasis::build(&kernel, 16).unwrap();
    let nu = NuSeries::constant(1.0, 3.0).unwrap();
    let profile = Field::extend(&fields::deriv_x(&w.phi, 1).unwrap(), &g).unwrap();
    Lab { lin, basis, nu, profile }
}

fn paths(lab: &Lab, seed: u64, t_end: f64, ppu: usize) -> BrownianPaths {
    BrownianPaths::sample(lab.basis.len(), t_end, ppu, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn partition(t: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| t * i as f64 / steps as f64).collect()
}

#[test]
fn splitting_identity_holds() {
    let l = lab();
    let p = paths(&l, 3, 1.0, 64);
    let b = StepProcess::adapted(&l.profile, partition(1.0, 4), &p).unwrap();
    for (s, tau) in [(0.0, 0.5), (0.25, 0.75), (0.5, 0.5)] {
        let r = fwd::splitting_check(&l.lin, &l.nu, &b, &l.basis, &p, s, tau, 1.0).unwrap();
        assert!(r < 1e-10, "({s}, {tau}): {r}");
    }
    assert!(fwd::splitting_check(&l.lin, &l.nu, &b, &l.basis, &p, 0.6, 0.5, 1.0).is_err());
}

#[test]
fn ito_sum_of_constant_process_is_the_increment() {
    let l = lab();
    let p = paths(&l, 4, 1.0, 64);
    let g = l.basis.grid().clone();
    let ones = Field::from_fn(&g, 1, |_, _, _| 1.0);
    let b = StepProcess::new(partition(1.0, 4), vec![ones.clone(), ones.clone(), ones.clone(), ones]).unwrap();
    let s = fwd::ito_sum(|s, xi| b.apply(s, xi), &b, &l.basis, &p, 1.0).unwrap();
    let last = p.values[0].len() - 1;
    let w: Vec<f64> = p.values.iter().map(|v| v[last] - v[0]).collect();
    let exact = l.basis.combine(&w);
    assert!(s.sub(&exact).sup_norm() < 1e-12 * exact.sup_norm().max(1.0));
}

#[test]
fn first_interval_convolution_has_closed_form() {
    // on one path cell the Itô recursion is E(h, 0)·B₀ΔW₀
    let l = lab();
    let p = paths(&l, 5, 1.0, 64);
    let b = StepProcess::adapted(&l.profile, partition(1.0, 2), &p).unwrap();
    let h = p.h;
    let x = fwd::conv_ito(&l.lin, &l.nu, &b, &l.basis, &p, h).unwrap();
    let inc: Vec<f64> = p.values.iter().map(|v| v[1] - v[0]).collect();
    let closed = l.lin.evolution(&b.apply(0.0, &l.basis.combine(&inc)), 0.0, h, &l.nu).unwrap();
    assert!(fields::l2_norm(&x.sub(&closed)) < 1e-12 * fields::l2_norm(&closed));
}

#[test]
fn forward_integral_is_linear_in_the_integrand() {
    let l = lab();
    let p = paths(&l, 6, 1.5, 256);
    let b = StepProcess::adapted(&l.profile, partition(1.0, 4), &p).unwrap();
    let one = fwd::forward_riemann(|s, xi| b.apply(s, xi), 16, &l.basis, &p, 1.0).unwrap();
    let two = fwd::forward_riemann(
        |s, xi| {
            let mut f = b.apply(s, xi);
            f.scale(-2.5);
            f
        },
        16,
        &l.basis,
        &p,
        1.0,
    )
    .unwrap();
    let mut expect = one.clone();
    expect.scale(-2.5);
    assert!(two.sub(&expect).sup_norm() < 1e-12 * expect.sup_norm());
}

#[test]
fn forward_integral_approaches_ito_sum() {
    let l = lab();
    let p = paths(&l, 7, 1.5, 1024);
    let b = StepProcess::adapted(&l.profile, partition(1.0, 8), &p).unwrap();
    let ito = fwd::ito_sum(|s, xi| b.apply(s, xi), &b, &l.basis, &p, 1.0).unwrap();
    let err = |n| {
        let f = fwd::forward_riemann(|s, xi| b.apply(s, xi), n, &l.basis, &p, 1.0).unwrap();
        fields::l2_norm(&f.sub(&ito)) / fields::l2_norm(&ito)
    };
    let (e16, e256) = (err(16), err(256));
    assert!(e256 < e16, "{e16} {e256}");
}

#[test]
fn resolution_and_extent_are_enforced() {
    let l = lab();
    let p = paths(&l, 8, 1.0, 64);
    let b = StepProcess::zero(l.basis.grid(), 1, 1.0);
    let g = |s: f64, xi: &Field| b.apply(s, xi);
    assert!(matches!(fwd::forward_riemann(g, 32, &l.basis, &p, 0.5), Err(Error::Resolution { .. })));
    // t + 1/n must lie on the sampled path
    assert!(fwd::forward_riemann(g, 4, &l.basis, &p, 1.0).is_err());
    assert!(StepProcess::new(vec![0.0, 0.5, 0.4], vec![l.profile.clone(), l.profile.clone()]).is_err());
}

#[test]
fn maximal_inequality_constant_is_horizon_stable() {
    let l = lab();
    let constant = |t: f64| {
        let (mut sup, mut hs) = (0.0, 0.0);
        for seed in 0..40 {
            let p = paths(&l, 100 + seed, t, 32);
            let b = StepProcess::adapted(&l.profile, partition(t, 4), &p).unwrap();
            sup += fwd::sup_conv_sq(&l.lin, &l.nu, &b, &l.basis, &p, t).unwrap();
            hs += b.hs_integral(&l.basis, t);
        }
        sup / hs
    };
    let (c1, c2) = (constant(1.0), constant(2.0));
    assert!(c1 > 0.0 && c1 <= 4.0, "{c1}");
    assert!(c2 <= 2.0 * c1, "{c1} {c2}");
}
