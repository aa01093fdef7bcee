use std::f64::consts::TAU;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stochwave_core::fields::{self, Field, Grid, ShiftScheme};
use stochwave_core::fwd::{self, BrownianPaths, ModeBasis};
use stochwave_core::linear::{random_smooth_field, Linearisation, NuSeries, Projection};
use stochwave_core::meta::{clopper_pearson, spearman_negative};
use stochwave_core::models::nagumo;
use stochwave_core::noise::{KernelSpec, NoiseKernel};
use stochwave_core::{rng, wave};

struct Fixture {
    grid: Grid,
    lin: Linearisation,
    kernel: NoiseKernel,
    basis: ModeBasis,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = Grid::new(10.0, 64, 2, TAU, 8).unwrap();
        let model = nagumo(0.25);
        let w = wave::solve_wave(&model, &grid.profile(), None).unwrap();
        let lin = Linearisation::build(&w, &model, &grid).unwrap();
        let kernel = NoiseKernel::build(&KernelSpec::gaussian(1.0, 0.8, 1.0), &grid, 1).unwrap();
        let basis = ModeBasis::build(&kernel, 8).unwrap();
        Fixture { grid, lin, kernel, basis }
    })
}

fn field(seed: u64) -> Field {
    random_smooth_field(&fixture().grid, 1, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn fine_field(seed: u64) -> Field {
    static G: OnceLock<Grid> = OnceLock::new();
    let g = G.get_or_init(|| Grid::new(10.0, 256, 2, TAU, 8).unwrap());
    random_smooth_field(g, 1, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn rel(a: &Field, b: &Field) -> f64 {
    fields::l2_norm(&a.sub(b)) / fields::l2_norm(b).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shift_round_trip(seed in any::<u64>(), delta in -2.0f64..2.0) {
        let a = fine_field(seed);
        let back = fields::shift(&fields::shift(&a, delta, ShiftScheme::Lagrange8).unwrap(), -delta, ShiftScheme::Lagrange8).unwrap();
        // nodes within |δ| of x = ±L see extrapolated data
        let g = a.grid();
        let e = back.sub(&a);
        let worst = (0..=g.nx)
            .filter(|&i| g.x(i).abs() <= g.l - delta.abs() - 4.0 * g.dx())
            .flat_map(|i| (0..g.ny).map(move |j| (i, j)))
            .map(|(i, j)| e.at(0, i, j).abs())
            .fold(0.0, f64::max);
        prop_assert!(worst <= 1e-6 * a.sup_norm().max(1e-3), "{worst}");
    }

    #[test]
    fn whole_cell_shift_is_exact(seed in any::<u64>(), k in -8i32..8) {
        let a = fine_field(seed);
        let delta = k as f64 * a.grid().dx();
        let s = fields::shift(&a, delta, ShiftScheme::Lagrange8).unwrap();
        let i = 128usize;
        let j = (i as i32 - k) as usize;
        prop_assert!((s.at(0, i, 3) - a.at(0, j, 3)).abs() < 1e-12);
    }

    #[test]
    fn projections_are_idempotent_and_commute(seed in any::<u64>()) {
        let lin = &fixture().lin;
        let v = field(seed);
        let tw = lin.project(&v, Projection::Tw);
        prop_assert!(rel(&lin.project(&tw, Projection::Tw), &tw) < 1e-10);
        let avg = lin.project(&v, Projection::Avg);
        prop_assert!(rel(&lin.project(&avg, Projection::Avg), &avg) < 1e-12);
        let ab = lin.project(&avg, Projection::Tw);
        let ba = lin.project(&tw, Projection::Avg);
        prop_assert!(fields::l2_norm(&ab.sub(&ba)) < 1e-10 * fields::l2_norm(&v));
        let p = lin.project(&v, Projection::P);
        let perp = lin.project(&v, Projection::Perp);
        prop_assert!(fields::l2_norm(&p.add(&perp).sub(&v)) < 1e-10 * fields::l2_norm(&v));
    }

    #[test]
    fn covariance_is_nonnegative(seed in any::<u64>()) {
        let f = fixture();
        let w = field(seed);
        let q = f.kernel.apply_q(&w).unwrap();
        let pair = fields::inner_product_l2(&q, &w).unwrap();
        prop_assert!(pair >= -1e-10 * fields::l2_norm(&w).powi(2));
    }

    #[test]
    fn evolution_cocycle(seed in any::<u64>(), a in 0.1f64..0.9, b in 0.0f64..1.0) {
        let lin = &fixture().lin;
        let nu = NuSeries::new(vec![0.0, 0.5, 1.0, 2.0], vec![0.2, 1.0, 0.5, 0.5]).unwrap();
        let r = a;
        let t = a + b * (2.0 - a);
        prop_assert!(lin.cocycle_residual(&field(seed), 0.0, r, t, &nu).unwrap() < 1e-8);
    }

    #[test]
    fn semigroup_composes(seed in any::<u64>(), s in 0.0f64..1.0, t in 0.0f64..1.0) {
        let lin = &fixture().lin;
        let v = field(seed);
        let two = lin.semigroup(&lin.semigroup(&v, s).unwrap(), t).unwrap();
        let one = lin.semigroup(&v, s + t).unwrap();
        prop_assert!(rel(&two, &one) < 1e-8);
    }

    #[test]
    fn binomial_interval_contains_estimate(n in 1usize..400, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let x = ((n as f64) * frac).round() as usize;
        let (lo, hi) = clopper_pearson(x, n, level).unwrap();
        let p = x as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0, "{x}/{n}: ({lo}, {hi})");
    }

    #[test]
    fn spearman_bounds(v in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let (rho, p) = spearman_negative(&x, &y).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        prop_assert!((0.0..=1.0).contains(&p));
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        let (rho2, _) = spearman_negative(&rev, &y).unwrap();
        prop_assert!((rho + rho2).abs() < 1e-12);
    }

    #[test]
    fn forward_riemann_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = fixture();
        let paths = BrownianPaths::sample(f.basis.len(), 1.25, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let (u, w) = (field(seed), field(seed ^ 1));
        fn with(z: &Field) -> impl Fn(f64, &Field) -> Field + '_ {
            move |_, xi| {
                let mut out = z.clone();
                out.values_mut().iter_mut().zip(xi.values()).for_each(|(o, x)| *o *= x);
                out
            }
        }
        let iu = fwd::forward_riemann(with(&u), 8, &f.basis, &paths, 1.0).unwrap();
        let iw = fwd::forward_riemann(with(&w), 8, &f.basis, &paths, 1.0).unwrap();
        let mut comb = u.clone();
        comb.scale(a);
        comb.axpy(b, &w);
        let ic = fwd::forward_riemann(with(&comb), 8, &f.basis, &paths, 1.0).unwrap();
        let mut expect = iu.clone();
        expect.scale(a);
        expect.axpy(b, &iw);
        prop_assert!(ic.sub(&expect).sup_norm() <= 1e-10 * (1.0 + expect.sup_norm()));
    }

    #[test]
    fn step_streams_are_reproducible(seed in any::<u64>(), traj in 0u64..1000, step in 0u64..1_000_000) {
        let a: [f64; 4] = rng::step_rng(seed, traj, step).gen();
        let b: [f64; 4] = rng::step_rng(seed, traj, step).gen();
        let c: [f64; 4] = rng::step_rng(seed, traj, step + 1).gen();
        let d: [f64; 4] = rng::trajectory_rng(seed, traj).gen();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
        prop_assert_ne!(a, d);
    }
}
