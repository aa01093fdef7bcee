//! Deterministic travelling fronts Φ″ + cΦ′ + f(Φ) = 0 by Newton's method,
//! spatial decay rates at the rest states, and the initial phase.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::banded::Banded;
use crate::error::{Error, Result};
use crate::fields::{self, stencil, Field, Grid, ShiftScheme};
use crate::models::ModelSpec;
use crate::util::brent;

/// A front (Φ, c) on a one-dimensional grid with its decay rates.
#[derive(Clone, Debug)]
pub struct WaveProfile {
    pub phi: Field,
    pub c: f64,
    pub nu_minus: f64,
    pub nu_plus: f64,
    /// Max-norm of the discrete ODE residual at the interior nodes.
    pub residual: f64,
    pub iterations: usize,
}

impl WaveProfile {
    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    /// Writes the columnar text format: a `#`-header carrying c and ν±,
    /// then one row `x Φ_1 … Φ_n` per node.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let g = self.grid();
        writeln!(w, "# stochwave wave profile v1")?;
        writeln!(w, "# c = {:.17e}", self.c)?;
        writeln!(w, "# nu_minus = {:.17e}", self.nu_minus)?;
        writeln!(w, "# nu_plus = {:.17e}", self.nu_plus)?;
        writeln!(w, "# residual = {:.6e}", self.residual)?;
        writeln!(w, "# L = {:.17e}", g.l)?;
        writeln!(w, "# nx = {}", g.nx)?;
        writeln!(w, "# n = {}", self.phi.n())?;
        let nodes = g.nodes();
        for i in 0..nodes {
            write!(w, "{:.17e}", g.x(i))?;
            for c in 0..self.phi.n() {
                write!(w, " {:.17e}", self.phi.values()[c * nodes + i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_text(r: impl BufRead) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for line in r.lines() {
            let line = line?;
            let t = line.trim();
            if let Some(h) = t.strip_prefix('#') {
                if let Some((k, v)) = h.split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if t.is_empty() {
                continue;
            }
            let row = t
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Format(format!("bad number '{s}': {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let get = |k: &str| -> Result<String> {
            header.get(k).cloned().ok_or_else(|| Error::Format(format!("missing header field '{k}'")))
        };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::Format(format!("{k}: {e}"))) };
        let nx: usize = get("nx")?.parse().map_err(|e| Error::Format(format!("nx: {e}")))?;
        let n: usize = get("n")?.parse().map_err(|e| Error::Format(format!("n: {e}")))?;
        let grid = Grid::line(num("L")?, nx)?;
        if rows.len() != grid.nodes() || rows.iter().any(|r| r.len() != n + 1) {
            return Err(Error::Format("profile rows do not match the header".into()));
        }
        let mut data = vec![0.0; n * grid.nodes()];
        for (i, r) in rows.iter().enumerate() {
            for c in 0..n {
                data[c * grid.nodes() + i] = r[c + 1];
            }
        }
        Ok(Self {
            phi: Field::from_vec(&grid, n, data)?,
            c: num("c")?,
            nu_minus: num("nu_minus")?,
            nu_plus: num("nu_plus")?,
            residual: num("residual").unwrap_or(f64::NAN),
            iterations: 0,
        })
    }
}

/// Monotone tanh seed from u_− to u_+ centred at x = 0.
pub fn tanh_seed(model: &ModelSpec, grid: &Grid) -> Field {
    let g = grid.profile();
    Field::from_fn(&g, model.n, |c, x, _| {
        let s = 0.5 * (1.0 + (x / 2.0).tanh());
        model.u_minus[c] + (model.u_plus[c] - model.u_minus[c]) * s
    })
}

/// Interior residual D·Φ″ + cΦ′ + f(Φ) (plus an optional extra term),
/// component-major over nodes 1..N−1.
pub(crate) fn ode_residual(model: &ModelSpec, phi: &Field, c: f64) -> Vec<f64> {
    let g = phi.grid();
    let nodes = g.nodes();
    let n = model.n;
    let d1 = fields::deriv_x(phi, 1).expect("order 1");
    let d2 = fields::deriv_x(phi, 2).expect("order 2");
    let mut out = vec![0.0; n * (nodes - 2)];
    let mut s = vec![0.0; n];
    let mut fv = vec![0.0; n];
    for i in 1..nodes - 1 {
        for a in 0..n {
            s[a] = phi.values()[a * nodes + i];
        }
        model.f(&s, &mut fv);
        for a in 0..n {
            let k = a * nodes + i;
            out[(i - 1) * n + a] = model.diffusion[a] * d2.values()[k] + c * d1.values()[k] + fv[a];
        }
    }
    out
}

/// Unknown index of (node i, component a) among interior unknowns.
#[inline]
pub(crate) fn unknown(i: usize, a: usize, n: usize) -> usize {
    (i - 1) * n + a
}

/// Banded matrix of v ↦ diag(coef)·∂ₓ²v + c·∂ₓv + J(x)v on interior unknowns
/// (homogeneous Dirichlet data), J given per node as an n×n block.
pub(crate) fn assemble_operator(grid: &Grid, n: usize, coef2: &[f64], c: f64, mut block: impl FnMut(usize, &mut [f64])) -> Banded {
    let nodes = grid.nodes();
    let dim = n * (nodes - 2);
    let bw = n * stencil::radius(grid.fd_order).max(1) + n;
    let mut a = Banded::zeros(dim, bw, bw);
    let (dx, last) = (grid.dx(), grid.nx);
    let mut jb = vec![0.0; n * n];
    for i in 1..nodes - 1 {
        let (s2, w2) = stencil::row(i, last, 2, grid.fd_order);
        let (s1, w1) = stencil::row(i, last, 1, grid.fd_order);
        for comp in 0..n {
            let row = unknown(i, comp, n);
            for (k, &w) in w2.iter().enumerate() {
                let node = s2 + k;
                if node == 0 || node == last || w == 0.0 {
                    continue;
                }
                a.add(row, unknown(node, comp, n), coef2[comp] * w / (dx * dx));
            }
            for (k, &w) in w1.iter().enumerate() {
                let node = s1 + k;
                if node == 0 || node == last || w == 0.0 {
                    continue;
                }
                a.add(row, unknown(node, comp, n), c * w / dx);
            }
        }
        block(i, &mut jb);
        for r in 0..n {
            for q in 0..n {
                if jb[r * n + q] != 0.0 {
                    a.add(unknown(i, r, n), unknown(i, q, n), jb[r * n + q]);
                }
            }
        }
    }
    a
}

/// Solves [[A, b], [rᵀ, s]]·(x, y) = (f, h) by block elimination.
pub(crate) fn bordered_solve(a: &Banded, b: &[f64], r: &[f64], s: f64, f: &[f64], h: f64) -> Result<(Vec<f64>, f64)> {
    let lu = a.lu()?;
    let x1 = lu.solve(f);
    let x2 = lu.solve(b);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let den = s - dot(r, &x2);
    if den == 0.0 || !den.is_finite() {
        return Err(Error::Singular(a.dim()));
    }
    let y = (h - dot(r, &x1)) / den;
    let x = x1.iter().zip(&x2).map(|(p, q)| p - q * y).collect();
    Ok((x, y))
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub const WAVE_TOL: f64 = 1e-10;
pub const WAVE_MAX_ITER: usize = 50;

/// Newton's method for (Φ, c) with the phase condition ⟨Φ − Φ_g, Φ_g′⟩ = 0.
///
/// `guess` defaults to [`tanh_seed`] with c = 0. The profile is pinned to
/// u_∓ at x = ∓L.
pub fn solve_wave(model: &ModelSpec, grid: &Grid, guess: Option<(&Field, f64)>) -> Result<WaveProfile> {
    let g = grid.profile();
    let n = model.n;
    let nodes = g.nodes();
    let seed;
    let (phi_g, c0) = match guess {
        Some((p, c)) => {
            if p.grid() != &g || p.n() != n {
                return Err(Error::Shape("wave guess does not match the grid".into()));
            }
            (p, c)
        }
        None => {
            seed = tanh_seed(model, &g);
            (&seed, 0.0)
        }
    };
    let mut phi = phi_g.clone();
    for a in 0..n {
        phi.values_mut()[a * nodes] = model.u_minus[a];
        phi.values_mut()[a * nodes + nodes - 1] = model.u_plus[a];
    }
    let mut c = c0;
    let dphi_g = fields::deriv_x(phi_g, 1)?;
    // phase row: weights on interior unknowns
    let mut prow = vec![0.0; n * (nodes - 2)];
    for i in 1..nodes - 1 {
        for a in 0..n {
            prow[unknown(i, a, n)] = g.wx(i) * dphi_g.values()[a * nodes + i];
        }
    }
    let phase = |phi: &Field| -> f64 {
        let mut s = 0.0;
        for i in 0..nodes {
            for a in 0..n {
                let k = a * nodes + i;
                s += g.wx(i) * (phi.values()[k] - phi_g.values()[k]) * dphi_g.values()[k];
            }
        }
        s
    };

    let mut res = ode_residual(model, &phi, c);
    let mut rnorm = max_abs(&res).max(phase(&phi).abs());
    let mut it = 0;
    let mut state = vec![0.0; n];
    while rnorm > WAVE_TOL {
        if it >= WAVE_MAX_ITER {
            return Err(Error::NotConverged {
                what: "travelling-wave Newton",
                iterations: it,
                residual: rnorm,
            });
        }
        it += 1;
        let jac = assemble_operator(&g, n, &model.diffusion, c, |i, out| {
            for a in 0..n {
                state[a] = phi.values()[a * nodes + i];
            }
            model.df(&state, out);
        });
        let d1 = fields::deriv_x(&phi, 1)?;
        let mut ccol = vec![0.0; n * (nodes - 2)];
        for i in 1..nodes - 1 {
            for a in 0..n {
                ccol[unknown(i, a, n)] = d1.values()[a * nodes + i];
            }
        }
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let (dx, dc) = bordered_solve(&jac, &ccol, &prow, 0.0, &rhs, -phase(&phi))?;
        let mut lambda = 1.0;
        loop {
            let mut trial = phi.clone();
            for i in 1..nodes - 1 {
                for a in 0..n {
                    trial.values_mut()[a * nodes + i] += lambda * dx[unknown(i, a, n)];
                }
            }
            let tc = c + lambda * dc;
            let tres = ode_residual(model, &trial, tc);
            let tnorm = max_abs(&tres).max(phase(&trial).abs());
            if tnorm.is_finite() && (tnorm < rnorm || lambda < 1e-3) {
                phi = trial;
                c = tc;
                res = tres;
                rnorm = tnorm;
                break;
            }
            lambda *= 0.5;
        }
    }
    let (nu_minus, nu_plus) = decay_rates(model, c)?;
    Ok(WaveProfile {
        phi,
        c,
        nu_minus,
        nu_plus,
        residual: max_abs(&res),
        iterations: it,
    })
}

/// Spatial eigenvalues of D·λ² + cλ + Df(u_±) = 0; ν₋ is the smallest
/// positive real part at u_−, ν₊ the smallest decay rate at u_+.
pub fn decay_rates(model: &ModelSpec, c: f64) -> Result<(f64, f64)> {
    let n = model.n;
    let spatial = |u: &[f64]| -> Vec<f64> {
        let mut df = vec![0.0; n * n];
        model.df(u, &mut df);
        let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for i in 0..n {
            m[(i, n + i)] = 1.0;
            for j in 0..n {
                m[(n + i, j)] = -df[i * n + j] / model.diffusion[i];
            }
            m[(n + i, n + i)] = -c / model.diffusion[i];
        }
        m.complex_eigenvalues().iter().map(|z| z.re).collect()
    };
    let check = |re: &[f64], which: &str| -> Result<()> {
        if re.iter().any(|r| r.abs() < 1e-12) {
            return Err(Error::Hyperbolicity(format!("{which} has a spatial eigenvalue on the imaginary axis")));
        }
        Ok(())
    };
    let rm = spatial(&model.u_minus);
    let rp = spatial(&model.u_plus);
    check(&rm, "u_minus")?;
    check(&rp, "u_plus")?;
    let nu_minus = rm.iter().filter(|r| **r > 0.0).fold(f64::INFINITY, |a, &b| a.min(b));
    let nu_plus = rp.iter().filter(|r| **r < 0.0).fold(f64::INFINITY, |a, &b| a.min(-b));
    Ok((nu_minus, nu_plus))
}

/// G(γ) = ⟨T_{−γ}u0 − Φ_σ, ψ⟩_{L²(𝒟)} with Φ_σ, ψ one-dimensional profiles.
pub fn phase_functional(u0: &Field, phi: &Field, psi: &Field, gamma: f64, scheme: ShiftScheme) -> Result<f64> {
    let shifted = fields::shift(u0, -gamma, scheme)?;
    let base = fields::inner_product_l2(phi, psi)? * u0.grid().torus_measure();
    Ok(shifted.pair_profile(psi) - base)
}

/// Root γ₀ of [`phase_functional`] nearest to 0 by a bracketing scan and
/// Brent's method; |G(γ₀)| ≤ 1e−10.
pub fn init_phase(u0: &Field, phi: &Field, psi: &Field, scheme: ShiftScheme) -> Result<f64> {
    let g = u0.grid();
    let gfun = |gamma: f64| phase_functional(u0, phi, psi, gamma, scheme);
    let g0 = gfun(0.0)?;
    if g0.abs() <= 1e-12 {
        return Ok(0.0);
    }
    let step = 0.25;
    let radius = 0.5 * g.l;
    let mut r = 0.0;
    let (mut lo_prev, mut hi_prev) = (g0, g0);
    while r + step < radius {
        let r2 = r + step;
        let hi = gfun(r2)?;
        if hi * hi_prev <= 0.0 {
            return brent(gfun, r, r2, 1e-10, 200);
        }
        let lo = gfun(-r2)?;
        if lo * lo_prev <= 0.0 {
            return brent(gfun, -r2, -r, 1e-10, 200);
        }
        hi_prev = hi;
        lo_prev = lo;
        r = r2;
    }
    Err(Error::Initialisation(format!(
        "no sign change of the phase functional within |gamma| < {radius}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{allen_cahn_cutoff, nagumo};

    #[test]
    fn nagumo_decay_rates_from_quadratic() {
        let c = 0.5 / 2f64.sqrt();
        let (nm, np) = decay_rates(&nagumo(0.25), c).unwrap();
        // λ² + cλ − a = 0 at u = 0 and λ² + cλ − (1 − a) = 0 at u = 1
        let neg = (-c - (c * c + 1.0).sqrt()) / 2.0;
        let pos = (-c + (c * c + 3.0).sqrt()) / 2.0;
        assert!((np + neg).abs() < 1e-12);
        assert!((nm - pos).abs() < 1e-12);
    }

    #[test]
    fn allen_cahn_decay_rates() {
        let (nm, np) = decay_rates(&allen_cahn_cutoff(), 0.0).unwrap();
        assert!((nm - 2f64.sqrt()).abs() < 1e-12 && (np - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn nagumo_front_matches_closed_form() {
        let g = Grid::line(30.0, 512).unwrap();
        let a = 0.25;
        let w = solve_wave(&nagumo(a), &g, None).unwrap();
        let c = 2f64.sqrt() * (0.5 - a);
        assert!((w.c - c).abs() < 1e-7, "{}", w.c);
        // align by the phase condition before comparing
        let exact = Field::from_fn(&g, 1, |_, x, _| 1.0 / (1.0 + (x / 2f64.sqrt()).exp()));
        let psi = Field::from_fn(&g, 1, |_, x, _| (-x * x).exp());
        let shift = init_phase(&w.phi, &exact, &psi, ShiftScheme::Lagrange8).unwrap();
        let aligned = fields::shift(&exact, shift, ShiftScheme::Lagrange8).unwrap();
        assert!(aligned.sub(&w.phi).sup_norm() < 1e-6);
    }

    #[test]
    fn profile_text_round_trip() {
        let g = Grid::line(20.0, 64).unwrap();
        let w = solve_wave(&nagumo(0.25), &g, None).unwrap();
        let mut buf = Vec::new();
        w.write_text(&mut buf).unwrap();
        let r = WaveProfile::read_text(&buf[..]).unwrap();
        assert_eq!(r.c, w.c);
        assert_eq!(r.phi, w.phi);
        assert_eq!(r.nu_plus, w.nu_plus);
    }
}
