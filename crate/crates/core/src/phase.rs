//! The phase-tracking function stack (cut-offs, b, κ_σ, 𝒦_C, a_σ, 𝒥_σ,
//! ℛ_σ, 𝒮, 𝒩_σ, ℳ_σ) and the instantaneous stochastic wave.
//!
//! Profiles (Φ_ref = Φ₀, ψ_tw and its derivatives) are one-dimensional and
//! act on cylinder fields as y-independent functions.

use crate::banded::Banded;
use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, ShiftScheme};
use crate::linear::Linearisation;
use crate::models::{smoothstep, ModelSpec};
use crate::noise::NoiseKernel;
use crate::wave::{self, WaveProfile};

/// χ_low: ¼T below ¼T, the identity above ½T, quintic blend between
/// (T = |𝕋|^{d−1}).
pub fn chi_low(theta: f64, measure: f64) -> f64 {
    let q = 0.25 * measure;
    if theta <= q {
        return q;
    }
    if theta >= 2.0 * q {
        return theta;
    }
    let s = smoothstep((theta - q) / q);
    (1.0 - s) * q + s * theta
}

/// χ_high: 1 below 2 + gap, 0 above 3 + gap.
pub fn chi_high(theta: f64, gap: f64) -> f64 {
    1.0 - smoothstep(theta - 2.0 - gap)
}

/// Everything the stack needs that does not change along a trajectory.
#[derive(Clone, Debug)]
pub struct PhaseSystem {
    pub model: ModelSpec,
    pub kernel: NoiseKernel,
    grid: Grid,
    pub phi_ref: Field,
    pub c0: f64,
    pub psi: Field,
    pub dpsi: Field,
    pub d2psi: Field,
    pub scheme: ShiftScheme,
    /// ‖Φ₀ − Φ_ref‖ entering χ_high; zero since Φ_ref = Φ₀.
    pub ref_gap: f64,
    /// |𝕋|^{d−1} used by χ_low.
    measure: f64,
    /// Factor on the χ_high argument; √|𝕋|^{d−1} for a reduced system.
    chi_h_scale: f64,
    /// Df(Φ₀) per node, n×n blocks.
    df_phi0: Vec<f64>,
}

/// Translated profiles T_γ(·).
#[derive(Clone, Debug)]
pub struct Profiles {
    pub psi: Field,
    pub dpsi: Field,
    pub d2psi: Field,
    pub phi_ref: Field,
}

/// Cut-offs and noise coefficients at one state.
#[derive(Clone, Debug)]
pub struct PhaseCoefficients {
    pub chi_h: f64,
    pub chi_l: f64,
    pub b_norm_sq: f64,
    pub kappa: f64,
    pub nu1: f64,
    pub nu_m1: f64,
    pub nu_mhalf: f64,
    /// g(u)ᵀT_γψ_tw (m components).
    pub w: Field,
    /// 𝒦̃_C (m components).
    pub ktilde: Field,
    /// 𝒦_C (n components).
    pub kc: Field,
    /// g(u), n·m components.
    pub g: Field,
}

impl PhaseSystem {
    /// `lin` supplies Φ₀, c₀ and ψ_tw; `kernel` must live on `grid`.
    pub fn new(model: &ModelSpec, lin: &Linearisation, kernel: &NoiseKernel) -> Result<Self> {
        let grid = kernel.grid().clone();
        if grid.profile() != *lin.phi.grid() {
            return Err(Error::Shape("kernel grid and linearisation differ in x".into()));
        }
        let psi = lin.psi.clone();
        let dpsi = fields::deriv_x(&psi, 1)?;
        let d2psi = fields::deriv_x(&psi, 2)?;
        let n = model.n;
        let nodes = grid.nodes();
        let mut df_phi0 = vec![0.0; nodes * n * n];
        let mut s = vec![0.0; n];
        for i in 0..nodes {
            for a in 0..n {
                s[a] = lin.phi.values()[a * nodes + i];
            }
            model.df(&s, &mut df_phi0[i * n * n..(i + 1) * n * n]);
        }
        Ok(Self {
            model: model.clone(),
            kernel: kernel.clone(),
            measure: grid.torus_measure(),
            grid,
            phi_ref: lin.phi.clone(),
            c0: lin.c,
            psi,
            dpsi,
            d2psi,
            scheme: ShiftScheme::default(),
            ref_gap: 0.0,
            chi_h_scale: 1.0,
            df_phi0,
        })
    }

    /// The one-dimensional system seen by y-independent states: kernel
    /// q_avg·q_wv and pairings over ℝ.
    pub fn reduced(&self) -> Result<Self> {
        let mut r = self.clone();
        r.kernel = self.kernel.reduced()?;
        r.grid = self.grid.profile();
        r.measure = 1.0;
        r.chi_h_scale = self.measure.sqrt();
        Ok(r)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn profiles(&self, gamma: f64) -> Result<Profiles> {
        if gamma == 0.0 {
            return Ok(Profiles {
                psi: self.psi.clone(),
                dpsi: self.dpsi.clone(),
                d2psi: self.d2psi.clone(),
                phi_ref: self.phi_ref.clone(),
            });
        }
        let sh = |f: &Field| fields::shift(f, gamma, self.scheme);
        Ok(Profiles {
            psi: sh(&self.psi)?,
            dpsi: sh(&self.dpsi)?,
            d2psi: sh(&self.d2psi)?,
            phi_ref: sh(&self.phi_ref)?,
        })
    }

    fn check(&self, u: &Field) -> Result<()> {
        if u.grid() != &self.grid || u.n() != self.model.n {
            return Err(Error::Shape("state does not match the phase system grid".into()));
        }
        if !u.is_finite() {
            return Err(Error::NonFinite("phase state".into()));
        }
        Ok(())
    }

    /// (χ_h, χ_l) at (u, γ).
    pub fn cutoffs(&self, u: &Field, gamma: f64) -> Result<(f64, f64)> {
        self.check(u)?;
        let p = self.profiles(gamma)?;
        Ok(self.cutoffs_with(u, &p))
    }

    fn cutoffs_with(&self, u: &Field, p: &Profiles) -> (f64, f64) {
        let dist = distance_to_profile(u, &p.phi_ref) * self.chi_h_scale;
        let chi_h = chi_high(dist, self.ref_gap);
        let theta = -u.pair_profile(&p.dpsi);
        (chi_h, 1.0 / chi_low(theta, self.measure))
    }

    /// Cut-offs, b, κ_σ, ν_σ^{(θ)}, 𝒦̃_C and 𝒦_C at (u, γ).
    pub fn coefficients(&self, u: &Field, gamma: f64, sigma: f64) -> Result<PhaseCoefficients> {
        self.check(u)?;
        let p = self.profiles(gamma)?;
        self.coefficients_with(u, &p, sigma)
    }

    pub fn coefficients_with(&self, u: &Field, p: &Profiles, sigma: f64) -> Result<PhaseCoefficients> {
        let (chi_h, chi_l) = self.cutoffs_with(u, p);
        let g = self.model.eval_g(u)?;
        let w = g_transpose_profile(&self.model, &g, &p.psi);
        let qw = self.kernel.apply_q(&w)?;
        let qq = fields::inner_product_l2(&qw, &w)?;
        if qq < -1e-8 {
            return Err(Error::Indefinite(format!("<Qw, w> = {qq:e}")));
        }
        let b_norm_sq = chi_h.powi(4) * chi_l * chi_l * qq.max(0.0);
        let kappa = 1.0 + 0.5 * sigma * sigma * b_norm_sq;
        let mut ktilde = qw;
        ktilde.scale(chi_l * chi_h);
        let mut kc = g_times(&self.model, &g, &ktilde);
        kc.scale(-chi_h);
        Ok(PhaseCoefficients {
            chi_h,
            chi_l,
            b_norm_sq,
            kappa,
            nu1: kappa - 1.0,
            nu_m1: 1.0 / kappa - 1.0,
            nu_mhalf: kappa.powf(-0.5) - 1.0,
            w,
            ktilde,
            kc,
            g,
        })
    }

    /// a_σ(u, γ; c) with every derivative on ψ_tw.
    pub fn a_sigma(&self, u: &Field, gamma: f64, c: f64, sigma: f64) -> Result<f64> {
        self.check(u)?;
        let p = self.profiles(gamma)?;
        let k = self.coefficients_with(u, &p, sigma)?;
        self.a_sigma_with(u, &p, &k, c, sigma)
    }

    pub fn a_sigma_with(&self, u: &Field, p: &Profiles, k: &PhaseCoefficients, c: f64, sigma: f64) -> Result<f64> {
        let s2 = sigma * sigma;
        let mut fh = self.model.eval_f(u)?;
        if s2 != 0.0 {
            fh.axpy(s2, &self.model.eval_h(u)?);
        }
        let mut cu = u.clone();
        cu.scale(c);
        cu.axpy(s2, &k.kc);
        let mut dd = p.d2psi.clone();
        let nodes = self.grid.nodes();
        for a in 0..self.model.n {
            let coef = self.model.diffusion[a] + k.kappa - 1.0;
            dd.values_mut()[a * nodes..(a + 1) * nodes].iter_mut().for_each(|v| *v *= coef);
        }
        let bracket = fh.pair_profile(&p.psi) - cu.pair_profile(&p.dpsi) + u.pair_profile(&dd);
        Ok(-k.chi_l * bracket)
    }

    /// 𝒥_σ(u, γ; c) = κ⁻¹(f(u) + c∂ₓu + σ²h(u) + σ²∂ₓ𝒦_C).
    pub fn j_sigma(&self, u: &Field, gamma: f64, c: f64, sigma: f64) -> Result<Field> {
        self.check(u)?;
        let k = self.coefficients(u, gamma, sigma)?;
        self.j_sigma_with(u, &k, c, sigma)
    }

    pub fn j_sigma_with(&self, u: &Field, k: &PhaseCoefficients, c: f64, sigma: f64) -> Result<Field> {
        let mut out = self.kappa_j(u, k, c, sigma)?;
        out.scale(1.0 / k.kappa);
        Ok(out)
    }

    /// κ_σ·𝒥_σ, the combination that appears in the frozen drift.
    fn kappa_j(&self, u: &Field, k: &PhaseCoefficients, c: f64, sigma: f64) -> Result<Field> {
        let s2 = sigma * sigma;
        let mut out = self.model.eval_f(u)?;
        out.axpy(c, &fields::deriv_x(u, 1)?);
        if s2 != 0.0 {
            out.axpy(s2, &self.model.eval_h(u)?);
            out.axpy(s2, &fields::deriv_x(&k.kc, 1)?);
        }
        Ok(out)
    }

    /// Φ extended over the cylinder.
    pub fn extend(&self, phi: &Field) -> Result<Field> {
        Field::extend(phi, &self.grid)
    }

    /// ℛ_σ(v; c, Φ): D Δ_y v + (D + κ − 1)∂ₓ²(Φ + v) + κ𝒥_σ + a_σ∂ₓ(Φ + v).
    pub fn drift_r(&self, v: &Field, c: f64, phi: &Field, sigma: f64) -> Result<(Field, FrozenState)> {
        let u = self.extend(phi)?.add(v);
        self.check(&u)?;
        let p = self.profiles(0.0)?;
        let k = self.coefficients_with(&u, &p, sigma)?;
        let a = self.a_sigma_with(&u, &p, &k, c, sigma)?;
        let ux = fields::deriv_x(&u, 1)?;
        let uxx = fields::deriv_x(&u, 2)?;
        let mut out = self.kappa_j(&u, &k, c, sigma)?;
        out.axpy(a, &ux);
        let ly = fields::laplacian_y(v);
        let per = self.grid.nodes() * self.grid.transverse_points();
        for comp in 0..self.model.n {
            let dcoef = self.model.diffusion[comp];
            let coef = dcoef + k.kappa - 1.0;
            let range = comp * per..(comp + 1) * per;
            for ((o, x), y) in out.values_mut()[range.clone()]
                .iter_mut()
                .zip(&uxx.values()[range.clone()])
                .zip(&ly.values()[range])
            {
                *o += coef * x + dcoef * y;
            }
        }
        Ok((out, FrozenState { u, ux, coeffs: k, a }))
    }

    /// b[ΔW] = −χ_h²χ_l⟨g(u)ΔW, T_γψ_tw⟩.
    pub fn b_apply(&self, k: &PhaseCoefficients, psi: &Field, dw: &Field) -> f64 {
        let gdw = g_apply(&self.model, &k.g, dw);
        -k.chi_h * k.chi_h * k.chi_l * gdw.pair_profile(psi)
    }

    /// 𝒮(v; Φ)[ΔW] = g(Φ+v)ΔW + ∂ₓ(Φ+v)·b[ΔW], from a state prepared by
    /// [`Self::drift_r`].
    pub fn diffusion_s(&self, st: &FrozenState, dw: &Field) -> Field {
        let mut out = g_apply(&self.model, &st.coeffs.g, dw);
        let b = self.b_apply(&st.coeffs, &self.psi, dw);
        out.axpy(b, &st.ux);
        out
    }

    /// 𝒩_σ(v) about the stochastic wave `sw`.
    pub fn n_sigma(&self, v: &Field, sw: &StochasticWave) -> Result<Field> {
        let u = self.extend(&sw.phi)?.add(v);
        self.check(&u)?;
        let p = self.profiles(0.0)?;
        let k = self.coefficients_with(&u, &p, sw.sigma)?;
        let a = self.a_sigma_with(&u, &p, &k, sw.c, sw.sigma)?;
        let mut out = self.kappa_j(&u, &k, sw.c, sw.sigma)?;
        out.scale(1.0 / k.kappa);
        let uxx = fields::deriv_x(&u, 2)?;
        let vxx = fields::deriv_x(v, 2)?;
        let vx = fields::deriv_x(v, 1)?;
        let g = &self.grid;
        let nodes = g.nodes();
        let nt = g.transverse_points();
        let n = self.model.n;
        for comp in 0..n {
            let dcoef = self.model.diffusion[comp];
            let coef = (dcoef + k.kappa - 1.0) / k.kappa;
            for i in 0..nodes {
                for j in 0..nt {
                    let idx = (comp * nodes + i) * nt + j;
                    let mut dfv = 0.0;
                    for b in 0..n {
                        dfv += self.df_phi0[i * n * n + comp * n + b] * v.values()[(b * nodes + i) * nt + j];
                    }
                    out.values_mut()[idx] += coef * uxx.values()[idx] - dcoef * vxx.values()[idx] - self.c0 * vx.values()[idx] - dfv;
                }
            }
        }
        out.axpy(a / k.kappa, &fields::deriv_x(&u, 1)?);
        Ok(out)
    }

    /// ℳ_σ(v)[ΔW] = κ^{−1/2}𝒮(v; Φ_σ)[ΔW].
    pub fn m_sigma(&self, v: &Field, sw: &StochasticWave, dw: &Field) -> Result<Field> {
        let (_, st) = self.drift_r(v, sw.c, &sw.phi, sw.sigma)?;
        let mut s = self.diffusion_s(&st, dw);
        s.scale(st.coeffs.kappa.powf(-0.5));
        Ok(s)
    }
}

/// State shared by ℛ_σ and 𝒮 at one v.
#[derive(Clone, Debug)]
pub struct FrozenState {
    pub u: Field,
    pub ux: Field,
    pub coeffs: PhaseCoefficients,
    pub a: f64,
}

/// ‖u − p‖_{L²(𝒟)} for a profile p extended in y.
pub fn distance_to_profile(u: &Field, p: &Field) -> f64 {
    let g = u.grid();
    let nodes = g.nodes();
    let nt = g.transverse_points();
    let mut s = 0.0;
    for c in 0..u.n() {
        for i in 0..nodes {
            let pv = p.values()[c * nodes + i];
            let row = &u.values()[(c * nodes + i) * nt..(c * nodes + i + 1) * nt];
            s += g.wx(i) * row.iter().map(|x| (x - pv) * (x - pv)).sum::<f64>();
        }
    }
    (s * g.cell_y()).sqrt()
}

/// g(u)ᵀψ pointwise for a profile ψ (m components on u's grid).
fn g_transpose_profile(model: &ModelSpec, g: &Field, psi: &Field) -> Field {
    let grid = g.grid();
    let nodes = grid.nodes();
    let nt = grid.transverse_points();
    let (n, m) = (model.n, model.m);
    let mut w = Field::zeros(grid, m);
    for j in 0..m {
        for a in 0..n {
            for i in 0..nodes {
                let pv = psi.values()[a * nodes + i];
                if pv == 0.0 {
                    continue;
                }
                let src = &g.values()[((a * m + j) * nodes + i) * nt..((a * m + j) * nodes + i + 1) * nt];
                let dst = &mut w.values_mut()[(j * nodes + i) * nt..(j * nodes + i + 1) * nt];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s * pv;
                }
            }
        }
    }
    w
}

/// g(u)ξ pointwise (n components) for an m-component ξ.
pub(crate) fn g_apply(model: &ModelSpec, g: &Field, xi: &Field) -> Field {
    g_times(model, g, xi)
}

fn g_times(model: &ModelSpec, g: &Field, xi: &Field) -> Field {
    let grid = g.grid();
    let per = grid.nodes() * grid.transverse_points();
    let (n, m) = (model.n, model.m);
    let mut out = Field::zeros(grid, n);
    for a in 0..n {
        for j in 0..m {
            let src = &g.values()[(a * m + j) * per..(a * m + j + 1) * per];
            let x = &xi.values()[j * per..(j + 1) * per];
            let dst = &mut out.values_mut()[a * per..(a + 1) * per];
            for ((d, s), v) in dst.iter_mut().zip(src).zip(x) {
                *d += s * v;
            }
        }
    }
    out
}

/// Instantaneous stochastic wave (Φ_σ, c_σ).
#[derive(Clone, Debug)]
pub struct StochasticWave {
    pub phi: Field,
    pub c: f64,
    pub sigma: f64,
    pub residual: f64,
    pub iterations: usize,
}

impl StochasticWave {
    /// The deterministic wave viewed as the σ = 0 member.
    pub fn deterministic(w: &WaveProfile) -> Self {
        Self {
            phi: w.phi.clone(),
            c: w.c,
            sigma: 0.0,
            residual: w.residual,
            iterations: 0,
        }
    }

    pub fn to_profile(&self, nu_minus: f64, nu_plus: f64) -> WaveProfile {
        WaveProfile {
            phi: self.phi.clone(),
            c: self.c,
            nu_minus,
            nu_plus,
            residual: self.residual,
            iterations: self.iterations,
        }
    }
}

const SWAVE_MAX_ITER: usize = 200;

/// Residual (D + κ − 1)Φ″ + κ𝒥_σ(Φ, 0; c) on interior nodes, with κ.
fn swave_residual(sys: &PhaseSystem, phi: &Field, c: f64, sigma: f64) -> Result<(Vec<f64>, f64)> {
    let p = sys.profiles(0.0)?;
    let k = sys.coefficients_with(phi, &p, sigma)?;
    let kj = sys.kappa_j(phi, &k, c, sigma)?;
    let d2 = fields::deriv_x(phi, 2)?;
    let nodes = phi.grid().nodes();
    let n = sys.model.n;
    let mut r = vec![0.0; n * (nodes - 2)];
    for i in 1..nodes - 1 {
        for a in 0..n {
            let idx = a * nodes + i;
            r[(i - 1) * n + a] = (sys.model.diffusion[a] + k.kappa - 1.0) * d2.values()[idx] + kj.values()[idx];
        }
    }
    Ok((r, k.kappa))
}

/// Solves Φ″ + 𝒥_σ(Φ, 0; c) = 0 (multiplied through by κ_σ) with the phase
/// condition ⟨Φ − Φ₀, Φ₀′⟩ = 0 by a chord iteration: the banded Jacobian
/// holds the local terms, κ_σ and 𝒦_C are lagged.
///
/// `sys` must be one-dimensional (see [`PhaseSystem::reduced`]).
pub fn solve_stochastic_wave(sys: &PhaseSystem, wave0: &WaveProfile, sigma: f64) -> Result<StochasticWave> {
    let g = sys.grid().clone();
    if g.d != 1 {
        return Err(Error::Shape("the stochastic wave is solved on the reduced one-dimensional system".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Parameter(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(StochasticWave::deterministic(wave0));
    }
    let n = sys.model.n;
    let nodes = g.nodes();
    let phi0 = &wave0.phi;
    let dphi0 = fields::deriv_x(phi0, 1)?;
    let mut prow = vec![0.0; n * (nodes - 2)];
    for i in 1..nodes - 1 {
        for a in 0..n {
            prow[(i - 1) * n + a] = g.wx(i) * dphi0.values()[a * nodes + i];
        }
    }
    let phase = |phi: &Field| -> f64 {
        let mut s = 0.0;
        for i in 0..nodes {
            for a in 0..n {
                let k = a * nodes + i;
                s += g.wx(i) * (phi.values()[k] - phi0.values()[k]) * dphi0.values()[k];
            }
        }
        s
    };
    let mut phi = phi0.clone();
    let mut c = wave0.c;
    let s2 = sigma * sigma;
    let (mut res, mut kappa) = swave_residual(sys, &phi, c, sigma)?;
    let first = wave::max_abs(&res);
    let mut rnorm = first.max(phase(&phi).abs());
    let mut it = 0;
    let mut state = vec![0.0; n];
    let mut dh = vec![0.0; n * n];
    while rnorm > wave::WAVE_TOL {
        if it >= SWAVE_MAX_ITER || !rnorm.is_finite() || rnorm > 1e3 * first.max(1e-6) {
            return Err(Error::NotConverged {
                what: "stochastic wave (sigma too large?)",
                iterations: it,
                residual: rnorm,
            });
        }
        it += 1;
        let coef2: Vec<f64> = sys.model.diffusion.iter().map(|d| d + kappa - 1.0).collect();
        let jac: Banded = wave::assemble_operator(&g, n, &coef2, c, |i, out| {
            for a in 0..n {
                state[a] = phi.values()[a * nodes + i];
            }
            sys.model.df(&state, out);
            if s2 != 0.0 {
                numeric_jacobian(|u, o| sys.model.h(u, o), &state, &mut dh);
                out.iter_mut().zip(&dh).for_each(|(o, d)| *o += s2 * d);
            }
        });
        let d1 = fields::deriv_x(&phi, 1)?;
        let mut ccol = vec![0.0; n * (nodes - 2)];
        for i in 1..nodes - 1 {
            for a in 0..n {
                ccol[(i - 1) * n + a] = d1.values()[a * nodes + i];
            }
        }
        let rhs: Vec<f64> = res.iter().map(|v| -v).collect();
        let (dx, dc) = wave::bordered_solve(&jac, &ccol, &prow, 0.0, &rhs, -phase(&phi))?;
        for i in 1..nodes - 1 {
            for a in 0..n {
                phi.values_mut()[a * nodes + i] += dx[(i - 1) * n + a];
            }
        }
        c += dc;
        let (r, k) = swave_residual(sys, &phi, c, sigma)?;
        res = r;
        kappa = k;
        rnorm = wave::max_abs(&res).max(phase(&phi).abs());
    }
    Ok(StochasticWave {
        phi,
        c,
        sigma,
        residual: wave::max_abs(&res),
        iterations: it,
    })
}

fn numeric_jacobian(f: impl Fn(&[f64], &mut [f64]), u: &[f64], out: &mut [f64]) {
    let n = u.len();
    let mut up = u.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for k in 0..n {
        let h = 1e-6 * (1.0 + u[k].abs());
        up[k] = u[k] + h;
        f(&up, &mut fp);
        up[k] = u[k] - h;
        f(&up, &mut fm);
        up[k] = u[k];
        for r in 0..n {
            out[r * n + k] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_low_shape() {
        assert_eq!(chi_low(0.1, 1.0), 0.25);
        assert_eq!(chi_low(0.7, 1.0), 0.7);
        let mut prev = 0.0;
        for k in 0..=100 {
            let t = 0.2 + 0.4 * k as f64 / 100.0;
            let v = chi_low(t, 1.0);
            assert!(v >= prev && v >= 0.25);
            prev = v;
        }
    }

    #[test]
    fn chi_high_shape() {
        assert_eq!(chi_high(1.0, 0.0), 1.0);
        assert_eq!(chi_high(10.0, 0.0), 0.0);
        assert!((chi_high(2.5, 0.0) - 0.5).abs() < 1e-12);
    }
}
