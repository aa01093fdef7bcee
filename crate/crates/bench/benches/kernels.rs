use std::f64::consts::TAU;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use stochwave_core::fields::{self, Field, Grid, ShiftScheme};
use stochwave_core::linear::{random_smooth_field, NuSeries};
use stochwave_core::models::nagumo;
use stochwave_core::noise::KernelSpec;
use stochwave_core::rng;
use stochwave_core::sim::{Setup, SimConfig};

fn setup() -> Setup {
    let g = Grid::new(30.0, 256, 2, TAU, 8).unwrap();
    Setup::build(&nagumo(0.25), &g, &KernelSpec::gaussian(1.0, 1.0, 1.0), 0.0).unwrap()
}

fn kernels(c: &mut Criterion) {
    let s = setup();
    let mut r = rng::trajectory_rng(1, 0);
    let v = random_smooth_field(&s.grid, 1, &mut r);

    c.bench_function("shift lagrange8 256x8", |b| {
        b.iter(|| fields::shift(black_box(&v), 0.37, ShiftScheme::Lagrange8).unwrap())
    });

    c.bench_function("noise increment 256x8", |b| {
        let mut r = rng::step_rng(1, 0, 0);
        b.iter(|| s.kernel.sample_increment(&mut r, 0.01).unwrap())
    });

    let sim = s.simulator(SimConfig { sigma: 0.1, dt: 0.01, ..Default::default() }).unwrap();
    c.bench_function("imex step 256x8", |b| {
        let mut st = sim.initial_state(None).unwrap();
        let mut k = 0u64;
        b.iter(|| {
            let w = sim.white(0, k);
            k += 1;
            sim.step(&mut st, w.as_deref()).unwrap();
        })
    });

    let nu = NuSeries::constant(1.0, 2.0).unwrap();
    s.lin.evolution(&v, 0.0, 0.5, &nu).unwrap();
    c.bench_function("evolution E(t,s) 256x8", |b| {
        b.iter(|| s.lin.evolution(black_box(&v), 0.0, 0.5, &nu).unwrap())
    });

    let u = Field::extend(&s.wave.phi, &s.grid).unwrap();
    c.bench_function("phase coefficients 256x8", |b| {
        b.iter(|| s.sys.a_sigma(black_box(&u), 0.1, s.wave.c, 0.1).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels
}
criterion_main!(benches);
