use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stochwave_core::fields::{self, Field, Grid};
use stochwave_core::linear::{decay_check, random_smooth_field, Linearisation, NuSeries, Projection};
use stochwave_core::models::nagumo;
use stochwave_core::wave;

fn lin(torus: f64) -> Linearisation {
    lin_on(Grid::new(10.0, 64, 2, torus, 8).unwrap())
}

fn lin_on(g: Grid) -> Linearisation {
    let model = nagumo(0.25);
    let w = wave::solve_wave(&model, &g.profile(), None).unwrap();
    Linearisation::build(&w, &model, &g).unwrap()
}

#[test]
fn translation_mode_is_neutral() {
    // the discrete translation eigenvalue is O(dx⁶), so resolve it
    let l = lin_on(Grid::new(20.0, 256, 2, TAU, 8).unwrap());
    assert!(l.adjoint_residual() < 1e-8, "{}", l.adjoint_residual());
    let pairing = fields::inner_product_l2(&l.dphi, &l.psi).unwrap();
    assert!((pairing - 1.0).abs() < 1e-10);
    let moved = l.semigroup(&l.dphi, 2.0).unwrap();
    let drift = fields::l2_norm(&moved.sub(&l.dphi)) / fields::l2_norm(&l.dphi);
    assert!(drift < 1e-5, "{drift}");
    assert!(l.beta > 0.0);
}

#[test]
fn crank_nicolson_tracks_the_exponential() {
    let l = lin(TAU);
    let v = random_smooth_field(&l.grid().profile(), 1, &mut ChaCha8Rng::seed_from_u64(2));
    let exact = l.semigroup(&v, 0.5).unwrap();
    let cn = l.semigroup_implicit(&v, 0.5, 200).unwrap();
    assert!(fields::l2_norm(&cn.sub(&exact)) < 1e-4 * fields::l2_norm(&exact));
    assert!(l.semigroup_implicit(&v, -1.0, 10).is_err());
}

#[test]
fn complementary_part_decays() {
    let l = lin(TAU);
    let nu = NuSeries::constant(1.0, 12.0).unwrap();
    let fit = decay_check(&l, &nu, 10.0, 21, 3, 5).unwrap();
    let lambda1 = l.grid().lambda1();
    assert!(fit.mu_hat >= 0.8 * l.beta.min(lambda1), "{} vs {}", fit.mu_hat, l.beta.min(lambda1));
    let v = random_smooth_field(l.grid(), 1, &mut ChaCha8Rng::seed_from_u64(3));
    let perp = l.project(&v, Projection::Perp);
    let later = l.evolution(&perp, 0.0, 10.0, &nu).unwrap();
    assert!(fields::l2_norm(&later) < 0.1 * fields::l2_norm(&perp));
}

#[test]
fn evolution_damps_transverse_modes() {
    // E(t,s) = S(t − s) on the mean and exp(−λ₁∫ν)·S(t − s) on |ξ|² = 1
    let l = lin(TAU);
    let nu = NuSeries::constant(0.7, 3.0).unwrap();
    let g = l.grid().clone();
    let bump = |x: f64| (-x * x).exp();
    let flat = Field::from_fn(&g, 1, |_, x, _| bump(x));
    let wavy = Field::from_fn(&g, 1, |_, x, y| bump(x) * y[0].cos());
    let line = Field::from_fn(&g.profile(), 1, |_, x, _| bump(x));
    let s = l.semigroup(&line, 1.0).unwrap();
    let e0 = l.evolution(&flat, 0.5, 1.5, &nu).unwrap();
    let s0 = Field::extend(&s, &g).unwrap();
    assert!(fields::l2_norm(&e0.sub(&s0)) < 1e-10 * fields::l2_norm(&s0));
    let e1 = l.evolution(&wavy, 0.5, 1.5, &nu).unwrap();
    let damp = (-0.7 * g.lambda1()).exp();
    let mut s1 = Field::extend(&s, &g).unwrap();
    let cos = Field::from_fn(&g, 1, |_, _, y| damp * y[0].cos());
    s1.values_mut().iter_mut().zip(cos.values()).for_each(|(a, b)| *a *= b);
    assert!(fields::l2_norm(&e1.sub(&s1)) < 1e-10 * fields::l2_norm(&s1));
    let norm = l.operator_norm_estimate(0.5, 1.5, &nu, 2, 1).unwrap();
    assert!(norm > 0.0 && norm.is_finite());
    assert!(l.evolution(&flat, 1.0, 0.5, &nu).is_err());
}

#[test]
fn smaller_torus_widens_the_transverse_gap() {
    let (wide, narrow) = (lin(TAU), lin(TAU / 2.0));
    assert!((narrow.grid().lambda1() / wide.grid().lambda1() - 4.0).abs() < 1e-12);
}

#[test]
fn spectrum_file_lists_beta() {
    let l = lin(TAU);
    let mut buf = Vec::new();
    l.write_spectrum(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let beta: f64 = text
        .lines()
        .find_map(|line| line.strip_prefix("# beta = "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(beta, l.beta);
}
