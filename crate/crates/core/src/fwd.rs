//! Forward integrals at desk scale: Riemann forward sums, Itô sums and the
//! pathwise representation of ∫E(t,s)B(s)dW_s for step integrands.
//!
//! W is truncated to the K leading modes of Q, W(t) = Σ √λ_k e_k β_k(t),
//! with β_k sampled on a uniform grid of spacing h. Integrands are step
//! processes of multiplication operators, B(s)ξ = b_i ⊙ ξ on [t_i, t_{i+1}).
//! Every E(t,s)-weighted quadrature is accumulated with the cocycle
//! E(t,s_j) = E(t,s_{j+1})E(s_{j+1},s_j), so only a few distinct
//! exponentials are ever formed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid};
use crate::linear::{Linearisation, NuSeries};
use crate::noise::NoiseKernel;

pub const DEFAULT_MODES: usize = 64;

/// Leading real eigenpairs of the sampled covariance, sorted by weight.
#[derive(Clone, Debug)]
pub struct ModeBasis {
    grid: Grid,
    /// √λ_k, descending.
    pub weights: Vec<f64>,
    /// e_k on the grid (one component).
    pub modes: Vec<Field>,
    /// Σ_{k > K}λ_k / Σλ_k.
    pub tail_fraction: f64,
}

/// Real Fourier modes of a circulant with eigenvalues `lambda` (unnormalised
/// DFT of the first row), as (weight, frequency index, is_sine).
fn real_modes(lambda: &[f64]) -> Vec<(f64, usize, bool)> {
    let m = lambda.len();
    let mut out = vec![(lambda[0] / m as f64, 0, false)];
    for j in 1..m.div_ceil(2) {
        let w = 2.0 * lambda[j] / m as f64;
        out.push((w, j, false));
        out.push((w, j, true));
    }
    if m.is_multiple_of(2) && m > 1 {
        out.push((lambda[m / 2] / m as f64, m / 2, false));
    }
    out
}

fn trig(j: usize, sine: bool, i: usize, m: usize) -> f64 {
    let th = std::f64::consts::TAU * (j * i) as f64 / m as f64;
    if sine {
        th.sin()
    } else {
        th.cos()
    }
}

impl ModeBasis {
    /// Products of x- and y-modes of the kernel's circulants; Σλ_k e_k(z)e_k(z')
    /// over all modes reproduces the nodal covariance q(z − z').
    pub fn build(kernel: &NoiseKernel, k_modes: usize) -> Result<Self> {
        let grid = kernel.grid().clone();
        if grid.d > 2 {
            return Err(Error::Unsupported("mode bases are implemented for d <= 2".into()));
        }
        if kernel.m != 1 {
            return Err(Error::Unsupported("mode bases need a scalar noise (m = 1)".into()));
        }
        if k_modes == 0 {
            return Err(Error::Parameter("need at least one mode".into()));
        }
        let xm = real_modes(&kernel.lambda_x);
        let ym = if grid.d == 1 { vec![(1.0, 0, false)] } else { real_modes(&kernel.lambda_y) };
        let scale = kernel.component_scale[0];
        let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(xm.len() * ym.len());
        for (a, x) in xm.iter().enumerate() {
            for (b, y) in ym.iter().enumerate() {
                all.push((x.0 * y.0 * scale, a, b));
            }
        }
        all.sort_by(|p, q| q.0.total_cmp(&p.0));
        let total: f64 = all.iter().map(|p| p.0.max(0.0)).sum();
        let kept = k_modes.min(all.len());
        let tail: f64 = all[kept..].iter().map(|p| p.0.max(0.0)).sum();
        let mm = kernel.embed_len();
        let nt = grid.transverse_points();
        let mut weights = Vec::with_capacity(kept);
        let mut modes = Vec::with_capacity(kept);
        for &(w, a, b) in &all[..kept] {
            let (_, jx, sx) = xm[a];
            let (_, jy, sy) = ym[b];
            let mut e = Field::zeros(&grid, 1);
            for i in 0..grid.nodes() {
                let fx = trig(jx, sx, i, mm);
                for j in 0..nt {
                    let fy = if grid.d == 1 { 1.0 } else { trig(jy, sy, j, nt) };
                    e.set(0, i, j, fx * fy);
                }
            }
            weights.push(w.max(0.0).sqrt());
            modes.push(e);
        }
        Ok(Self {
            grid,
            weights,
            modes,
            tail_fraction: if total > 0.0 { tail / total } else { 0.0 },
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Σ_k √λ_k c_k e_k.
    pub fn combine(&self, coeffs: &[f64]) -> Field {
        let mut out = Field::zeros(&self.grid, 1);
        for ((w, e), c) in self.weights.iter().zip(&self.modes).zip(coeffs) {
            if *c != 0.0 {
                out.axpy(w * c, e);
            }
        }
        out
    }
}

/// Brownian motions β_k sampled at s_j = j·h, j = 0..=R.
#[derive(Clone, Debug)]
pub struct BrownianPaths {
    pub h: f64,
    /// values[k][j] = β_k(s_j).
    pub values: Vec<Vec<f64>>,
}

impl BrownianPaths {
    /// `points_per_unit` samples per unit time on [0, t_end].
    pub fn sample(modes: usize, t_end: f64, points_per_unit: usize, rng: &mut impl Rng) -> Result<Self> {
        if !(t_end > 0.0) || points_per_unit == 0 {
            return Err(Error::Parameter("paths need t_end > 0 and a positive resolution".into()));
        }
        let r = (t_end * points_per_unit as f64).round() as usize;
        let h = 1.0 / points_per_unit as f64;
        let sq = h.sqrt();
        let values = (0..modes)
            .map(|_| {
                let mut v = Vec::with_capacity(r + 1);
                let mut b = 0.0;
                v.push(b);
                for _ in 0..r {
                    let z: f64 = rng.sample(StandardNormal);
                    b += sq * z;
                    v.push(b);
                }
                v
            })
            .collect();
        Ok(Self { h, values })
    }

    pub fn points_per_unit(&self) -> usize {
        (1.0 / self.h).round() as usize
    }

    pub fn t_end(&self) -> f64 {
        self.h * (self.values[0].len() - 1) as f64
    }

    fn index(&self, t: f64) -> Result<usize> {
        let j = (t / self.h).round();
        if (j * self.h - t).abs() > 1e-9 * self.h.max(t) || j < 0.0 || j as usize >= self.values[0].len() {
            return Err(Error::Unsupported(format!("time {t} is not a node of the path grid")));
        }
        Ok(j as usize)
    }

    /// Coefficients β_k(s_b) − β_k(s_a) by node index.
    fn increment(&self, a: usize, b: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[b] - v[a]).collect()
    }
}

/// B(s)ξ = b_i ⊙ ξ for s ∈ [t_i, t_{i+1}).
#[derive(Clone, Debug)]
pub struct StepProcess {
    pub times: Vec<f64>,
    pub values: Vec<Field>,
}

impl StepProcess {
    pub fn new(times: Vec<f64>, values: Vec<Field>) -> Result<Self> {
        if times.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Unsupported("a step process needs J values on a partition of J + 1 times".into()));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Unsupported("step partition must start at 0 and increase".into()));
        }
        Ok(Self { times, values })
    }

    /// The zero process on [0, t_end].
    pub fn zero(grid: &Grid, n: usize, t_end: f64) -> Self {
        Self {
            times: vec![0.0, t_end],
            values: vec![Field::zeros(grid, n)],
        }
    }

    /// b_i = profile·(1 + ½tanh β_0(t_i)): adapted to the first mode.
    pub fn adapted(profile: &Field, partition: Vec<f64>, paths: &BrownianPaths) -> Result<Self> {
        let mut values = Vec::with_capacity(partition.len() - 1);
        for &t in &partition[..partition.len() - 1] {
            let b0 = paths.values[0][paths.index(t)?];
            let mut f = profile.clone();
            f.scale(1.0 + 0.5 * b0.tanh());
            values.push(f);
        }
        Self::new(partition, values)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Index of the step containing s (the last step for s = t_end).
    pub fn step_at(&self, s: f64) -> usize {
        let k = self.times.partition_point(|&t| t <= s);
        k.saturating_sub(1).min(self.values.len() - 1)
    }

    fn check_nodes(&self, paths: &BrownianPaths) -> Result<()> {
        for &t in &self.times {
            paths.index(t)?;
        }
        Ok(())
    }

    /// b(s) ⊙ ξ for a one-component ξ.
    pub fn apply(&self, s: f64, xi: &Field) -> Field {
        let b = &self.values[self.step_at(s)];
        let per = xi.values().len();
        let mut out = b.clone();
        for c in 0..b.n() {
            out.values_mut()[c * per..(c + 1) * per]
                .iter_mut()
                .zip(xi.values())
                .for_each(|(o, x)| *o *= x);
        }
        out
    }

    /// ∫₀ᵗ‖B(s)‖²_{HS} over the truncated basis for the realised b_i.
    pub fn hs_integral(&self, basis: &ModeBasis, t: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.values.len() {
            let (a, e) = (self.times[i], self.times[i + 1].min(t));
            if e <= a {
                continue;
            }
            let mut hs = 0.0;
            for (w, m) in basis.weights.iter().zip(&basis.modes) {
                let f = self.apply(a, m);
                hs += w * w * fields::l2_norm(&f).powi(2);
            }
            total += hs * (e - a);
        }
        total
    }
}

/// n·∫₀ᵗ G(s)[√Q e_k](β_k(s + 1/n) − β_k(s))ds summed over k, trapezoidal
/// in s on the path grid. `g(s, ξ)` applies G(s) to a noise field ξ; it is
/// linear in ξ, so the modes are combined before G is applied.
pub fn forward_riemann(g: impl Fn(f64, &Field) -> Field, n: usize, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<Field> {
    let (r, lag) = forward_setup(n, paths, t)?;
    let mut out: Option<Field> = None;
    for j in 0..=r {
        let w = if j == 0 || j == r { 0.5 * paths.h } else { paths.h };
        let xi = basis.combine(&paths.increment(j, j + lag));
        let mut v = g(j as f64 * paths.h, &xi);
        v.scale(w * n as f64);
        match &mut out {
            None => out = Some(v),
            Some(o) => o.axpy(1.0, &v),
        }
    }
    Ok(out.expect("at least one node"))
}

fn forward_setup(n: usize, paths: &BrownianPaths, t: f64) -> Result<(usize, usize)> {
    let ppu = paths.points_per_unit();
    if n == 0 || ppu < 4 * n {
        return Err(Error::Resolution { have: ppu, need: 4 * n });
    }
    if !ppu.is_multiple_of(n) {
        return Err(Error::Unsupported(format!("path resolution {ppu} is not a multiple of n = {n}")));
    }
    let lag = ppu / n;
    let r = paths.index(t)?;
    if r + lag >= paths.values[0].len() {
        return Err(Error::Parameter(format!("paths must extend to t + 1/n = {}", t + 1.0 / n as f64)));
    }
    Ok((r, lag))
}

/// Σ_i G_i[W(t_{i+1}∧t) − W(t_i)] for an operator-valued step process
/// given by `g(s, ξ)` on the partition of `b`.
pub fn ito_sum(g: impl Fn(f64, &Field) -> Field, b: &StepProcess, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<Field> {
    b.check_nodes(paths)?;
    let end = paths.index(t)?;
    let mut out: Option<Field> = None;
    for i in 0..b.values.len() {
        let a = paths.index(b.times[i])?;
        let e = paths.index(b.times[i + 1])?.min(end);
        if e <= a {
            continue;
        }
        let v = g(b.times[i], &basis.combine(&paths.increment(a, e)));
        match &mut out {
            None => out = Some(v),
            Some(o) => o.axpy(1.0, &v),
        }
    }
    out.ok_or_else(|| Error::Parameter("integration interval is empty".into()))
}

/// Σ_j w_j E(t, s_j)F_j over path nodes s_0..s_r, accumulated forward with
/// one-step propagators; `f(j)` returns w_j F_j.
fn accumulate(lin: &Linearisation, nu: &NuSeries, h: f64, r: usize, mut f: impl FnMut(usize) -> Result<Option<Field>>, start: Option<Field>) -> Result<Option<Field>> {
    let mut acc = start;
    for j in 0..=r {
        if j > 0 {
            if let Some(a) = acc.take() {
                acc = Some(lin.evolution(&a, (j - 1) as f64 * h, j as f64 * h, nu)?);
            }
        }
        if let Some(v) = f(j)? {
            match &mut acc {
                None => acc = Some(v),
                Some(a) => a.axpy(1.0, &v),
            }
        }
    }
    Ok(acc)
}

/// ∫₀ᵗE(t,s)B(s)dW_s as the Itô sum on the path grid,
/// X_{j+1} = E(s_{j+1}, s_j)(X_j + B(s_j)ΔW_j).
pub fn conv_ito(lin: &Linearisation, nu: &NuSeries, b: &StepProcess, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<Field> {
    b.check_nodes(paths)?;
    let r = paths.index(t)?;
    let h = paths.h;
    let acc = accumulate(
        lin,
        nu,
        h,
        r,
        |j| {
            if j == r {
                return Ok(None);
            }
            Ok(Some(b.apply(j as f64 * h, &basis.combine(&paths.increment(j, j + 1)))))
        },
        None,
    )?;
    Ok(acc.unwrap_or_else(|| Field::zeros(basis.grid(), lin.n())))
}

/// I⁻(E(t,·)B, n) = n∫₀ᵗE(t,s)B(s)(W(s + 1/n) − W(s))ds, trapezoidal on the
/// path grid.
pub fn conv_forward_riemann(lin: &Linearisation, nu: &NuSeries, b: &StepProcess, n: usize, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<Field> {
    let (r, lag) = forward_setup(n, paths, t)?;
    let h = paths.h;
    let acc = accumulate(
        lin,
        nu,
        h,
        r,
        |j| {
            let w = if j == 0 || j == r { 0.5 * h } else { h };
            let mut v = b.apply(j as f64 * h, &basis.combine(&paths.increment(j, j + lag)));
            v.scale(w * n as f64);
            Ok(Some(v))
        },
        None,
    )?;
    Ok(acc.expect("at least one node"))
}

/// E(t,0)∫₀ᵗB dW + ∫₀ᵗ∂_sE(t,s)∫_sᵗB(r)dW_r ds, with ∂_sE by a centred
/// difference of step min(1e−4·t, h/2) in s and trapezoidal s-quadrature on the path
/// grid. Inner integrals are Itô sums of the step process.
pub fn conv_pathwise(lin: &Linearisation, nu: &NuSeries, b: &StepProcess, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<Field> {
    b.check_nodes(paths)?;
    let r = paths.index(t)?;
    let h = paths.h;
    // the difference must stay inside one path cell
    let delta = (1e-4 * t).min(0.5 * h);
    let grid = basis.grid().clone();
    let n = lin.n();
    // Y(s_j) = ∫_{s_j}^t B dW, built from the total minus a running prefix.
    let dw = |j: usize| b.apply(j as f64 * h, &basis.combine(&paths.increment(j, j + 1)));
    let mut total = Field::zeros(&grid, n);
    for j in 0..r {
        total.axpy(1.0, &dw(j));
    }
    let first = lin.evolution(&total, 0.0, t, nu)?;
    let mut y = total;
    // Σ_j w_j E(t, s_{j+1}) D_j with D_j = ∂_s[E(s_{j+1}, s)]_{s=s_j} Y(s_j)
    let mut acc: Option<Field> = None;
    for j in 0..r {
        let s = j as f64 * h;
        let s1 = (j + 1) as f64 * h;
        if let Some(a) = acc.take() {
            acc = Some(lin.evolution(&a, s, s1, nu)?);
        }
        let w = if j == 0 { 0.5 * h } else { h };
        let d = if j == 0 {
            let p = lin.evolution(&y, s + delta, s1, nu)?;
            let m = lin.evolution(&y, s, s1, nu)?;
            let mut d = p.sub(&m);
            d.scale(w / delta);
            d
        } else {
            let p = lin.evolution(&y, s + delta, s1, nu)?;
            let m = lin.evolution(&y, s - delta, s1, nu)?;
            let mut d = p.sub(&m);
            d.scale(w / (2.0 * delta));
            d
        };
        match &mut acc {
            None => acc = Some(d),
            Some(a) => a.axpy(1.0, &d),
        }
        y = y.sub(&dw(j));
    }
    // the s = t node carries Y(t) = 0
    let mut out = first;
    if let Some(a) = acc {
        out.axpy(1.0, &a);
    }
    Ok(out)
}

/// Residual of E(t,τ)X(τ) − E(t,σ)X(σ) = E(t,τ)∫_σ^τ E(τ,s)B(s)dW_s with
/// X(r) = ∫₀ʳE(r,s)B(s)dW_s, relative to the largest term.
pub fn splitting_check(lin: &Linearisation, nu: &NuSeries, b: &StepProcess, basis: &ModeBasis, paths: &BrownianPaths, sigma: f64, tau: f64, t: f64) -> Result<f64> {
    if !(0.0 <= sigma && sigma <= tau && tau <= t) {
        return Err(Error::Parameter(format!("need 0 <= sigma <= tau <= t, got {sigma}, {tau}, {t}")));
    }
    let (js, jt) = (paths.index(sigma)?, paths.index(tau)?);
    let h = paths.h;
    let grid = basis.grid().clone();
    let zero = Field::zeros(&grid, lin.n());
    let x_sigma = if js == 0 { zero.clone() } else { conv_ito(lin, nu, b, basis, paths, sigma)? };
    let x_tau = if jt == 0 { zero.clone() } else { conv_ito(lin, nu, b, basis, paths, tau)? };
    // ∫_σ^τ E(τ,s)B dW by the same recursion started at σ
    let mut mid = zero.clone();
    for j in js..jt {
        let inc = b.apply(j as f64 * h, &basis.combine(&paths.increment(j, j + 1)));
        mid = lin.evolution(&mid.add(&inc), j as f64 * h, (j + 1) as f64 * h, nu)?;
    }
    let lhs = lin.evolution(&x_tau, tau, t, nu)?.sub(&lin.evolution(&x_sigma, sigma, t, nu)?);
    let rhs = lin.evolution(&mid, tau, t, nu)?;
    let scale = fields::l2_norm(&lhs).max(fields::l2_norm(&rhs)).max(1e-300);
    Ok(fields::l2_norm(&lhs.sub(&rhs)) / scale)
}

/// sup over path nodes of ‖∫₀^{s}E(s,r)B(r)dW_r‖² for one path, from the
/// Itô recursion.
pub fn sup_conv_sq(lin: &Linearisation, nu: &NuSeries, b: &StepProcess, basis: &ModeBasis, paths: &BrownianPaths, t: f64) -> Result<f64> {
    b.check_nodes(paths)?;
    let r = paths.index(t)?;
    let h = paths.h;
    let mut x = Field::zeros(basis.grid(), lin.n());
    let mut sup: f64 = 0.0;
    for j in 0..r {
        let inc = b.apply(j as f64 * h, &basis.combine(&paths.increment(j, j + 1)));
        x = lin.evolution(&x.add(&inc), j as f64 * h, (j + 1) as f64 * h, nu)?;
        sup = sup.max(fields::l2_norm(&x).powi(2));
    }
    Ok(sup)
}
