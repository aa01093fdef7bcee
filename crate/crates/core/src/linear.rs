//! Linearisation about the front, its adjoint kernel ψ_tw, the spectral gap,
//! projections, the semigroup S_tw and the evolution family E(t, s).

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::banded::Banded;
use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, TransverseFft};
use crate::models::ModelSpec;
use crate::util;
use crate::wave::{self, WaveProfile};

/// Copies the interior nodes of a one-dimensional, component-major line into
/// the interleaved unknown ordering used by the banded operators.
pub(crate) fn to_unknowns(nodes: usize, n: usize, line: &[f64], out: &mut [f64]) {
    for i in 1..nodes - 1 {
        for a in 0..n {
            out[(i - 1) * n + a] = line[a * nodes + i];
        }
    }
}

/// Inverse of [`to_unknowns`]; boundary nodes are set to zero.
pub(crate) fn from_unknowns(nodes: usize, n: usize, x: &[f64], line: &mut [f64]) {
    for a in 0..n {
        line[a * nodes] = 0.0;
        line[a * nodes + nodes - 1] = 0.0;
        for i in 1..nodes - 1 {
            line[a * nodes + i] = x[(i - 1) * n + a];
        }
    }
}

/// The discretised ℒ_tw, its adjoint and the associated spectral data.
pub struct Linearisation {
    grid: Grid,
    n: usize,
    /// ℒ_tw on interior unknowns with homogeneous Dirichlet data.
    pub a: Banded,
    /// Transpose of `a`; the adjoint for the trapezoid pairing since boundary
    /// values vanish.
    pub a_adj: Banded,
    pub phi: Field,
    pub c: f64,
    /// Φ′ on the profile grid.
    pub dphi: Field,
    /// ψ_tw with ⟨Φ′, ψ_tw⟩ = 1.
    pub psi: Field,
    pub beta: f64,
    pub lambda1: f64,
    /// Rightmost eigenvalues of `a` away from the translation mode.
    pub eigenvalues: Vec<Complex64>,
    expm_cache: Mutex<HashMap<i64, Arc<DMatrix<f64>>>>,
}

impl std::fmt::Debug for Linearisation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Linearisation")
            .field("n", &self.n)
            .field("c", &self.c)
            .field("beta", &self.beta)
            .field("lambda1", &self.lambda1)
            .finish()
    }
}

/// Number of Ritz values used for the gap estimate.
pub const GAP_EIGENVALUES: usize = 20;
const GAP_SHIFT: f64 = 0.1;
const KRYLOV_DIM: usize = 80;

impl Linearisation {
    /// Assembles ℒ_tw about `wave`, finds ψ_tw and estimates β. `grid` is the
    /// cylinder grid; its x-discretisation must match the wave's.
    pub fn build(wave: &WaveProfile, model: &ModelSpec, grid: &Grid) -> Result<Self> {
        let lin = Self::build_unchecked(wave, model, grid)?;
        if lin.beta <= 0.0 {
            return Err(Error::SpectralGap(lin.beta));
        }
        Ok(lin)
    }

    /// As [`Self::build`] but keeps a non-positive gap estimate.
    pub fn build_unchecked(wave: &WaveProfile, model: &ModelSpec, grid: &Grid) -> Result<Self> {
        let g1 = wave.grid().clone();
        if grid.profile() != g1 {
            return Err(Error::Shape("wave and cylinder grids differ in x".into()));
        }
        let n = model.n;
        let nodes = g1.nodes();
        let mut s = vec![0.0; n];
        let a = wave::assemble_operator(&g1, n, &model.diffusion, wave.c, |i, out| {
            for c in 0..n {
                s[c] = wave.phi.values()[c * nodes + i];
            }
            model.df(&s, out);
        });
        let a_adj = a.transpose();
        let dphi = fields::deriv_x(&wave.phi, 1)?;
        let psi = adjoint_kernel(&a_adj, &dphi)?;
        let mut lin = Self {
            grid: grid.clone(),
            n,
            a,
            a_adj,
            phi: wave.phi.clone(),
            c: wave.c,
            dphi,
            psi,
            beta: f64::NAN,
            lambda1: grid.lambda1(),
            eigenvalues: Vec::new(),
            expm_cache: Mutex::new(HashMap::new()),
        };
        lin.eigenvalues = lin.rightmost_eigenvalues(GAP_EIGENVALUES)?;
        lin.beta = -lin.eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Ok(lin)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension of the interior unknown space.
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// ‖ℒ_tw^adj ψ_tw‖_∞ on interior nodes.
    pub fn adjoint_residual(&self) -> f64 {
        let nodes = self.grid.nodes();
        let mut x = vec![0.0; self.dim()];
        to_unknowns(nodes, self.n, self.psi.values(), &mut x);
        let mut y = vec![0.0; self.dim()];
        self.a_adj.matvec(&x, &mut y);
        wave::max_abs(&y)
    }

    /// ℒ_tw applied to a one-dimensional profile (boundary values ignored,
    /// result zero there).
    pub fn apply_ltw(&self, v: &Field) -> Field {
        let nodes = self.grid.nodes();
        let mut x = vec![0.0; self.dim()];
        let mut y = vec![0.0; self.dim()];
        to_unknowns(nodes, self.n, v.values(), &mut x);
        self.a.matvec(&x, &mut y);
        let mut out = Field::zeros(v.grid(), self.n);
        from_unknowns(nodes, self.n, &y, out.values_mut());
        out
    }

    /// ℒ_ν = ℒ_tw + νΔ_y on a cylinder field.
    pub fn apply_l_nu(&self, v: &Field, nu: f64) -> Field {
        let g = v.grid();
        let nodes = g.nodes();
        let nt = g.transverse_points();
        let mut out = if g.d > 1 && nu != 0.0 {
            let mut l = fields::laplacian_y(v);
            l.scale(nu);
            l
        } else {
            Field::zeros(g, self.n)
        };
        let mut line = vec![0.0; self.n * nodes];
        let mut x = vec![0.0; self.dim()];
        let mut y = vec![0.0; self.dim()];
        for j in 0..nt {
            for c in 0..self.n {
                for i in 0..nodes {
                    line[c * nodes + i] = v.values()[(c * nodes + i) * nt + j];
                }
            }
            to_unknowns(nodes, self.n, &line, &mut x);
            self.a.matvec(&x, &mut y);
            from_unknowns(nodes, self.n, &y, &mut line);
            for c in 0..self.n {
                for i in 0..nodes {
                    out.values_mut()[(c * nodes + i) * nt + j] += line[c * nodes + i];
                }
            }
        }
        out
    }

    fn weighted_pair_unknowns(&self, x: &[f64], line: &[f64]) -> f64 {
        let nodes = self.grid.nodes();
        let dx = self.grid.dx();
        let mut s = 0.0;
        for i in 1..nodes - 1 {
            for a in 0..self.n {
                s += x[(i - 1) * self.n + a] * line[a * nodes + i];
            }
        }
        s * dx
    }

    /// Up to `count` eigenvalues of ℒ_tw closest to the shift, after
    /// projecting out the translation mode, by shift-invert Arnoldi.
    pub fn rightmost_eigenvalues(&self, count: usize) -> Result<Vec<Complex64>> {
        let dim = self.dim();
        let m = KRYLOV_DIM.min(dim - 1);
        let mut shifted = self.a.clone();
        shifted.shift_diagonal(-GAP_SHIFT);
        let lu = shifted.lu()?;
        let nodes = self.grid.nodes();
        let mut dphi_u = vec![0.0; dim];
        to_unknowns(nodes, self.n, self.dphi.values(), &mut dphi_u);
        let project = |v: &mut [f64]| {
            let p = self.weighted_pair_unknowns(v, self.psi.values());
            for (vi, d) in v.iter_mut().zip(&dphi_u) {
                *vi -= p * d;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v0: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        project(&mut v0);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n0 = norm(&v0);
        v0.iter_mut().for_each(|x| *x /= n0);
        let mut basis = vec![v0];
        let mut h = DMatrix::<f64>::zeros(m + 1, m);
        let mut steps = m;
        for j in 0..m {
            let mut w = basis[j].clone();
            project(&mut w);
            lu.solve_in_place(&mut w);
            project(&mut w);
            // modified Gram–Schmidt with one reorthogonalisation pass
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let hij: f64 = w.iter().zip(b).map(|(p, q)| p * q).sum();
                    h[(i, j)] += hij;
                    w.iter_mut().zip(b).for_each(|(p, q)| *p -= hij * q);
                }
            }
            let hn = norm(&w);
            h[(j + 1, j)] = hn;
            if hn < 1e-14 {
                steps = j + 1;
                break;
            }
            w.iter_mut().for_each(|x| *x /= hn);
            basis.push(w);
        }
        let hm = h.view((0, 0), (steps, steps)).into_owned();
        let mut theta: Vec<Complex64> = hm.complex_eigenvalues().iter().copied().collect();
        theta.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
        Ok(theta
            .into_iter()
            .take(count)
            .filter(|t| t.norm() > 0.0)
            .map(|t| Complex64::new(GAP_SHIFT, 0.0) + t.inv())
            .collect())
    }

    /// P_tw u: ⟨u(·, y), ψ_tw⟩ Φ′ at every transverse point.
    pub fn project_tw(&self, u: &Field) -> Field {
        let g = u.grid();
        let nodes = g.nodes();
        let nt = g.transverse_points();
        let mut out = Field::zeros(g, self.n);
        for j in 0..nt {
            let mut p = 0.0;
            for c in 0..self.n {
                for i in 0..nodes {
                    p += g.wx(i) * u.values()[(c * nodes + i) * nt + j] * self.psi.values()[c * nodes + i];
                }
            }
            for c in 0..self.n {
                for i in 0..nodes {
                    out.values_mut()[(c * nodes + i) * nt + j] = p * self.dphi.values()[c * nodes + i];
                }
            }
        }
        out
    }

    pub fn project(&self, u: &Field, which: Projection) -> Field {
        match which {
            Projection::Tw => self.project_tw(u),
            Projection::Avg => u.transverse_mean(),
            Projection::P => self.project_tw(&u.transverse_mean()),
            Projection::Perp => u.sub(&self.project_tw(&u.transverse_mean())),
        }
    }

    /// e^{tA} as a dense matrix on interior unknowns, cached per t.
    pub fn expm(&self, t: f64) -> Result<Arc<DMatrix<f64>>> {
        if !(t >= 0.0) {
            return Err(Error::Parameter(format!("semigroup time must be non-negative, got {t}")));
        }
        let key = (t * 1e12).round() as i64;
        if let Some(m) = self.expm_cache.lock().expect("cache lock").get(&key) {
            return Ok(m.clone());
        }
        let mut a = self.a.to_dense();
        a *= t;
        let e = Arc::new(expm(&a)?);
        self.expm_cache.lock().expect("cache lock").insert(key, e.clone());
        Ok(e)
    }

    /// S_tw(t)v0 for a one-dimensional profile.
    pub fn semigroup(&self, v0: &Field, t: f64) -> Result<Field> {
        let e = self.expm(t)?;
        let nodes = self.grid.nodes();
        let mut x = vec![0.0; self.dim()];
        to_unknowns(nodes, self.n, v0.values(), &mut x);
        let y = &*e * nalgebra::DVector::from_vec(x);
        let mut out = Field::zeros(v0.grid(), self.n);
        from_unknowns(nodes, self.n, y.as_slice(), out.values_mut());
        Ok(out)
    }

    /// S_tw(t)v0 by Crank–Nicolson with `steps` banded solves; used when the
    /// dense exponential is too large.
    pub fn semigroup_implicit(&self, v0: &Field, t: f64, steps: usize) -> Result<Field> {
        if !(t >= 0.0) || steps == 0 {
            return Err(Error::Parameter(format!("need t >= 0 and steps > 0 (t = {t}, steps = {steps})")));
        }
        let h = t / steps as f64;
        let mut lhs = self.a.clone();
        for i in 0..lhs.dim() {
            for j in i.saturating_sub(lhs.bandwidths().0)..(i + lhs.bandwidths().1 + 1).min(lhs.dim()) {
                let v = lhs.get(i, j);
                lhs.set(i, j, -0.5 * h * v);
            }
        }
        lhs.shift_diagonal(1.0);
        let lu = lhs.lu()?;
        let nodes = self.grid.nodes();
        let mut x = vec![0.0; self.dim()];
        to_unknowns(nodes, self.n, v0.values(), &mut x);
        let mut ax = vec![0.0; self.dim()];
        for _ in 0..steps {
            self.a.matvec(&x, &mut ax);
            x.iter_mut().zip(&ax).for_each(|(p, q)| *p += 0.5 * h * q);
            lu.solve_in_place(&mut x);
        }
        let mut out = Field::zeros(v0.grid(), self.n);
        from_unknowns(nodes, self.n, &x, out.values_mut());
        Ok(out)
    }

    /// Applies `op` (a dense matrix on unknowns, or its transpose) to every
    /// transverse Fourier line of `v`, with per-mode scalar factors.
    fn propagate(&self, v: &Field, e: &DMatrix<f64>, transpose: bool, factor: impl Fn(f64) -> f64) -> Field {
        let g = v.grid();
        let nodes = g.nodes();
        let n = self.n;
        let dim = self.dim();
        let mul = |x: &DMatrix<f64>| if transpose { e.tr_mul(x) } else { e * x };
        if g.d == 1 {
            let mut x = DMatrix::<f64>::zeros(dim, 1);
            to_unknowns(nodes, n, v.values(), x.as_mut_slice());
            let y = mul(&x) * factor(0.0);
            let mut out = Field::zeros(g, n);
            from_unknowns(nodes, n, y.as_slice(), out.values_mut());
            return out;
        }
        let nt = g.transverse_points();
        let fft = TransverseFft::new(g).expect("d >= 2");
        let s = fft.forward(v);
        let mut x = DMatrix::<f64>::zeros(dim, 2 * nt);
        let mut line = vec![0.0; n * nodes];
        for m in 0..nt {
            for part in 0..2 {
                for c in 0..n {
                    for i in 0..nodes {
                        let z = s.data[(c * nodes + i) * nt + m];
                        line[c * nodes + i] = if part == 0 { z.re } else { z.im };
                    }
                }
                let mut tmp = vec![0.0; dim];
                to_unknowns(nodes, n, &line, &mut tmp);
                x.column_mut(2 * m + part).copy_from_slice(&tmp);
            }
        }
        let y = mul(&x);
        let mut out = s.clone();
        let mut re = vec![0.0; n * nodes];
        let mut im = vec![0.0; n * nodes];
        for m in 0..nt {
            let f = factor(g.mode_sq(m));
            from_unknowns(nodes, n, y.column(2 * m).as_slice(), &mut re);
            from_unknowns(nodes, n, y.column(2 * m + 1).as_slice(), &mut im);
            for c in 0..n {
                for i in 0..nodes {
                    out.data[(c * nodes + i) * nt + m] = Complex64::new(re[c * nodes + i], im[c * nodes + i]) * f;
                }
            }
        }
        fft.inverse(&out)
    }

    /// E(t, s)v0: per transverse mode ξ, S_tw(t − s) times
    /// exp(−λ₁|ξ|²∫_s^t ν).
    pub fn evolution(&self, v0: &Field, s: f64, t: f64, nu: &NuSeries) -> Result<Field> {
        if s > t {
            return Err(Error::Parameter(format!("evolution needs s <= t (s = {s}, t = {t})")));
        }
        let int = nu.integral(s, t)?;
        if s == t {
            return Ok(v0.clone());
        }
        let e = self.expm(t - s)?;
        let l1 = v0.grid().lambda1();
        Ok(self.propagate(v0, &e, false, |k2| (-l1 * k2 * int).exp()))
    }

    /// E(t, s)ᵀv0 with respect to the quadrature pairing.
    pub fn evolution_transpose(&self, v0: &Field, s: f64, t: f64, nu: &NuSeries) -> Result<Field> {
        if s > t {
            return Err(Error::Parameter(format!("evolution needs s <= t (s = {s}, t = {t})")));
        }
        let int = nu.integral(s, t)?;
        let e = self.expm(t - s)?;
        let l1 = v0.grid().lambda1();
        Ok(self.propagate(v0, &e, true, |k2| (-l1 * k2 * int).exp()))
    }

    /// ‖E(t,s)v − E(t,r)E(r,s)v‖ / ‖E(t,s)v‖.
    pub fn cocycle_residual(&self, v: &Field, s: f64, r: f64, t: f64, nu: &NuSeries) -> Result<f64> {
        let direct = self.evolution(v, s, t, nu)?;
        let split = self.evolution(&self.evolution(v, s, r, nu)?, r, t, nu)?;
        Ok(fields::l2_norm(&direct.sub(&split)) / fields::l2_norm(&direct).max(1e-300))
    }

    /// Randomised power-iteration estimate of the operator norm of E(t, s).
    pub fn operator_norm_estimate(&self, s: f64, t: f64, nu: &NuSeries, vectors: usize, seed: u64) -> Result<f64> {
        let mut best: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..vectors {
            let mut v = random_smooth_field(&self.grid, self.n, &mut rng);
            let mut est = 0.0;
            for _ in 0..8 {
                let nv = fields::l2_norm(&v);
                v.scale(1.0 / nv);
                let w = self.evolution(&v, s, t, nu)?;
                est = fields::l2_norm(&w);
                v = self.evolution_transpose(&w, s, t, nu)?;
            }
            best = best.max(est);
        }
        Ok(best)
    }

    /// Writes β, the Ritz values and ψ_tw as columnar text.
    pub fn write_spectrum(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# stochwave spectrum v1")?;
        writeln!(w, "# beta = {:.17e}", self.beta)?;
        writeln!(w, "# lambda1 = {:.17e}", self.lambda1)?;
        writeln!(w, "# adjoint_residual = {:.6e}", self.adjoint_residual())?;
        writeln!(w, "# eigenvalues: re im")?;
        for z in &self.eigenvalues {
            writeln!(w, "#   {:.12e} {:.12e}", z.re, z.im)?;
        }
        writeln!(w, "# x dphi psi")?;
        let g = self.phi.grid();
        let nodes = g.nodes();
        for i in 0..nodes {
            write!(w, "{:.17e}", g.x(i))?;
            for c in 0..self.n {
                write!(w, " {:.17e} {:.17e}", self.dphi.values()[c * nodes + i], self.psi.values()[c * nodes + i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Tw,
    Avg,
    P,
    Perp,
}

/// Null vector of the adjoint by inverse iteration, normalised so that
/// ⟨Φ′, ψ⟩ = 1 under the trapezoid rule.
fn adjoint_kernel(a_adj: &Banded, dphi: &Field) -> Result<Field> {
    let g = dphi.grid();
    let n = dphi.n();
    let nodes = g.nodes();
    let dim = a_adj.dim();
    let lu = a_adj.lu()?;
    let mut x = vec![0.0; dim];
    to_unknowns(nodes, n, dphi.values(), &mut x);
    for _ in 0..6 {
        lu.solve_in_place(&mut x);
        let s = wave::max_abs(&x);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::NonFinite("adjoint inverse iteration".into()));
        }
        x.iter_mut().for_each(|v| *v /= s);
    }
    let mut psi = Field::zeros(g, n);
    from_unknowns(nodes, n, &x, psi.values_mut());
    let p = fields::inner_product_l2(dphi, &psi)?;
    psi.scale(1.0 / p);
    Ok(psi)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé
/// approximant.
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let n = a.nrows();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::NonFinite("matrix exponential input".into()));
    }
    let s = if norm1 > THETA13 { (norm1 / THETA13).log2().ceil() as i32 } else { 0 };
    let a = a / 2f64.powi(s);
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * B[13] + &a4 * B[11] + &a2 * B[9]) + &a6 * B[7] + &a4 * B[5] + &a2 * B[3] + &id * B[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * B[12] + &a4 * B[10] + &a2 * B[8]) + &a6 * B[6] + &a4 * B[4] + &a2 * B[2] + &id * B[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::Singular(n))?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

/// Path-dependent coefficient ν(t) on a time grid, linear between samples,
/// with bounds k_ν ≤ ν ≤ K_ν.
#[derive(Clone, Debug, PartialEq)]
pub struct NuSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub k_nu: f64,
    pub big_k_nu: f64,
}

impl NuSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(Error::Parameter("nu series needs at least two (t, nu) pairs".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("nu times must increase strictly".into()));
        }
        let k = values.iter().copied().fold(f64::INFINITY, f64::min);
        let big = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(k > 0.0) || !big.is_finite() {
            return Err(Error::Parameter(format!("nu must be positive and finite (min {k})")));
        }
        Ok(Self {
            times,
            values,
            k_nu: k,
            big_k_nu: big,
        })
    }

    pub fn constant(nu: f64, t_end: f64) -> Result<Self> {
        Self::new(vec![0.0, t_end], vec![nu, nu])
    }

    fn check(&self, t: f64) -> Result<()> {
        let (a, b) = (self.times[0], *self.times.last().expect("non-empty"));
        if t < a - 1e-12 || t > b + 1e-12 {
            return Err(Error::Parameter(format!("time {t} outside the nu range [{a}, {b}]")));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Ok(self.values[k - 1] * (1.0 - w) + self.values[k] * w)
    }

    /// ∫_s^t ν, exact for the piecewise-linear interpolant.
    pub fn integral(&self, s: f64, t: f64) -> Result<f64> {
        self.check(s)?;
        self.check(t)?;
        if s == t {
            return Ok(0.0);
        }
        let (lo, hi, sign) = if s < t { (s, t, 1.0) } else { (t, s, -1.0) };
        let mut total = 0.0;
        let mut a = lo;
        let mut va = self.at(lo)?;
        for (&tk, &vk) in self.times.iter().zip(&self.values) {
            if tk <= lo || tk >= hi {
                continue;
            }
            total += 0.5 * (va + vk) * (tk - a);
            a = tk;
            va = vk;
        }
        total += 0.5 * (va + self.at(hi)?) * (hi - a);
        Ok(sign * total)
    }
}

/// Smooth random field: Gaussian bumps in x times low transverse modes,
/// vanishing near x = ±L.
pub fn random_smooth_field(grid: &Grid, n: usize, rng: &mut impl Rng) -> Field {
    let l = grid.l;
    let bumps: Vec<(usize, f64, f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0..n),
                rng.gen_range(-0.4 * l..0.4 * l),
                rng.gen_range(0.5..2.0),
                rng.gen::<f64>() - 0.5,
                rng.gen_range(0.0..3.0f64).floor(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let t = grid.torus;
    Field::from_fn(grid, n, |c, x, y| {
        bumps
            .iter()
            .filter(|b| b.0 == c)
            .map(|&(_, x0, w, amp, k, ph)| {
                let ty = if grid.d > 1 { (std::f64::consts::TAU * k * (y[0] + y[1]) / t + ph).cos() } else { 1.0 };
                amp * (-(x - x0).powi(2) / (2.0 * w * w)).exp() * ty
            })
            .sum()
    })
}

/// Result of fitting log‖E(t,0)P^⊥v‖ ≈ log M − μ̂t.
#[derive(Clone, Copy, Debug)]
pub struct DecayFit {
    pub m: f64,
    pub mu_hat: f64,
    pub r2: f64,
}

/// Fits the decay of the projected evolution over t ∈ [0.2T, T] using
/// `samples` equally spaced times, averaging log-norms over `trials` random
/// fields.
pub fn decay_check(lin: &Linearisation, nu: &NuSeries, t_fit: f64, samples: usize, trials: usize, seed: u64) -> Result<DecayFit> {
    if samples < 5 {
        return Err(Error::TooFewSamples { need: 5, have: samples });
    }
    let dt = t_fit / (samples - 1) as f64;
    let mut logs = vec![0.0; samples];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let v = random_smooth_field(lin.grid(), lin.n(), &mut rng);
        let mut w = lin.project(&v, Projection::Perp);
        let n0 = fields::l2_norm(&w);
        logs[0] += 0.0;
        for (k, lg) in logs.iter_mut().enumerate().skip(1) {
            w = lin.evolution(&w, (k - 1) as f64 * dt, k as f64 * dt, nu)?;
            *lg += (fields::l2_norm(&w) / n0).ln();
        }
    }
    let ts: Vec<f64> = (0..samples).map(|k| k as f64 * dt).collect();
    let start = ts.iter().position(|&t| t >= 0.2 * t_fit - 1e-12).unwrap_or(0);
    let ys: Vec<f64> = logs.iter().map(|l| l / trials as f64).collect();
    let (a, b, r2) = util::ols(&ts[start..], &ys[start..]);
    Ok(DecayFit {
        m: a.exp(),
        mu_hat: -b,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::nagumo;
    use crate::wave::solve_wave;

    fn setup(l: f64, nx: usize) -> (WaveProfile, Linearisation) {
        let g = Grid::line(l, nx).unwrap();
        let m = nagumo(0.25);
        let w = solve_wave(&m, &g, None).unwrap();
        let lin = Linearisation::build(&w, &m, &g).unwrap();
        (w, lin)
    }

    #[test]
    fn expm_matches_nalgebra() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { -3.0 } else { 0.0 });
        let mine = expm(&(&a * 2.5)).unwrap();
        let theirs = (&a * 2.5).exp();
        assert!((mine - &theirs).abs().max() < 1e-10 * theirs.abs().max());
    }

    #[test]
    fn adjoint_normalised_and_gap_positive() {
        let (_, lin) = setup(30.0, 256);
        let p = fields::inner_product_l2(&lin.dphi, &lin.psi).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        assert!(lin.adjoint_residual() < 1e-8, "{}", lin.adjoint_residual());
        assert!(lin.beta > 0.2 && lin.beta < 0.3, "{}", lin.beta);
    }

    #[test]
    fn rightmost_eigenvalues_agree_with_dense() {
        let (_, lin) = setup(20.0, 64);
        let dense = lin.a.to_dense().complex_eigenvalues();
        let mut re: Vec<f64> = dense.iter().map(|z| z.re).filter(|r| r.abs() > 1e-4).collect();
        re.sort_by(|a, b| b.total_cmp(a));
        assert!((lin.beta + re[0]).abs() < 1e-8, "{} vs {}", lin.beta, -re[0]);
    }

    #[test]
    fn nu_integral_piecewise_linear() {
        let nu = NuSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 3.0, 1.0]).unwrap();
        assert!((nu.integral(0.0, 2.0).unwrap() - 4.0).abs() < 1e-14);
        assert!((nu.integral(0.5, 1.5).unwrap() - 2.5).abs() < 1e-14);
        assert!(nu.integral(0.0, 3.0).is_err());
    }

    #[test]
    fn implicit_semigroup_close_to_expm() {
        let (_, lin) = setup(20.0, 64);
        let g = lin.phi.grid().clone();
        let v = Field::from_fn(&g, 1, |_, x, _| (-x * x / 4.0).exp());
        let a = lin.semigroup(&v, 1.0).unwrap();
        let b = lin.semigroup_implicit(&v, 1.0, 400).unwrap();
        assert!(a.sub(&b).sup_norm() < 1e-4);
    }
}
