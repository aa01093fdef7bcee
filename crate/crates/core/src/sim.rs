//! Euler–Maruyama integration of the coupled SPDE–SDE system, the frozen
//! perturbation v and the stability functional N_{ε;k}.
//!
//! u is integrated in a frame moving at c_σ, so the front stays near x = 0:
//! U(ξ, t) = u(ξ + c_σt, t) solves dU = [DΔU + c_σ∂ₓU + f + σ²h]dt + σg(U)dW̃
//! and the phase splits as γ = c_σt + offset + γ̃ with
//! dγ̃ = a_σ(U, γ̃; c_σ)dt + σb(U, γ̃)[dW̃]. Translation invariance of the
//! noise makes W̃ another Q-Wiener process, and a_σ, b are covariant, so
//! this is the lab-frame system written in other coordinates.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::banded::{Banded, BandedLu};
use crate::error::{Error, Result};
use crate::fields::{self, stencil, Field, Grid, ShiftScheme, TransverseFft};
use crate::phase::{self, PhaseSystem, StochasticWave};
use crate::rng;
use crate::wave;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Implicit DΔ, explicit reaction, advection and noise.
    #[default]
    ImexEm,
    ExplicitEm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sigma: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Sobolev index k of N_{ε;k}; 0 or 1 (the integral term uses k + 1).
    pub k: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub record_stride: usize,
    pub blowup_guard: f64,
    /// Store v at every recorded time.
    pub keep_snapshots: bool,
    /// Each step sums 2^level base increments of length dt/2^level, so runs
    /// at dt and dt/2 can share one Brownian path.
    pub noise_level: u32,
    /// Stop at the first time N_{ε;k} > η.
    pub stop_at_exit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sigma: 0.05,
            dt: 1e-3,
            t_end: 1.0,
            k: 1,
            epsilon: 0.1,
            eta: f64::INFINITY,
            seed: 0,
            scheme: Scheme::ImexEm,
            record_stride: 10,
            blowup_guard: 1e3,
            keep_snapshots: false,
            noise_level: 0,
            stop_at_exit: true,
        }
    }
}

impl SimConfig {
    /// All violated ranges, each prefixed with its field name.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            v.push(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            v.push(format!("t_end must be > 0, got {}", self.t_end));
        }
        if self.k > 1 {
            v.push(format!("k must be 0 or 1, got {}", self.k));
        }
        if !(self.epsilon > 0.0) {
            v.push(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.eta > 0.0) {
            v.push(format!("eta must be > 0, got {}", self.eta));
        }
        if self.record_stride == 0 {
            v.push("record_stride must be >= 1".into());
        }
        if !(self.blowup_guard > 0.0) {
            v.push(format!("blowup_guard must be > 0, got {}", self.blowup_guard));
        }
        if self.noise_level > 16 {
            v.push(format!("noise_level must be <= 16, got {}", self.noise_level));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Parameter(v.join("; ")))
        }
    }

    /// ε < 2μ against a decay-rate estimate μ.
    pub fn check_epsilon(&self, mu: f64) -> Result<()> {
        if self.epsilon < 2.0 * mu {
            Ok(())
        } else {
            Err(Error::Parameter(format!("epsilon = {} must be below 2 mu = {}", self.epsilon, 2.0 * mu)))
        }
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Coupled state of one trajectory.
#[derive(Clone, Debug)]
pub struct SimState {
    /// u in the co-moving frame.
    pub u: Field,
    /// γ̃, the phase relative to the frame and the last recentering.
    pub gamma_rel: f64,
    pub offset: f64,
    pub t: f64,
    pub step: u64,
    /// ∫₀ᵗ e^{−ε(t−s)}‖v(s)‖²_{H^{k+1}}ds.
    pub integral: f64,
    pub recenterings: usize,
}

impl SimState {
    /// Lab-frame phase γ(t).
    pub fn gamma(&self, c: f64) -> f64 {
        c * self.t + self.offset + self.gamma_rel
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TerminalFlags {
    pub completed: bool,
    pub exited: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory: u64,
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub n_series: Vec<f64>,
    /// ‖v‖_{H^k}.
    pub v_norm: Vec<f64>,
    /// |⟨v, ψ_tw⟩| / max(‖v‖, 1e−8).
    pub orth: Vec<f64>,
    /// First time N_{ε;k} > η; +∞ if none.
    pub exit_time: f64,
    /// Largest orthogonality ratio over every step before exit.
    pub max_orth: f64,
    pub recenterings: usize,
    pub snapshots: Vec<Vec<f64>>,
    pub flags: TerminalFlags,
}

impl TrajectoryRecord {
    pub fn exited_before(&self, t: f64) -> bool {
        self.exit_time < t
    }

    /// Recorded γ at the first recorded time ≥ t (last value if none).
    pub fn gamma_at(&self, t: f64) -> Option<f64> {
        let i = self.times.iter().position(|&s| s >= t - 1e-12)?;
        Some(self.gamma[i])
    }
}

/// v = T_{−γ}u − Φ_σ.
pub fn freeze(u: &Field, gamma: f64, phi_sigma: &Field, scheme: ShiftScheme) -> Result<Field> {
    let half = 0.5 * u.grid().l;
    if gamma.abs() >= half {
        return Err(Error::Recenter { gamma: gamma.abs(), half });
    }
    let s = fields::shift(u, -gamma, scheme)?;
    Ok(s.sub(&Field::extend(phi_sigma, u.grid())?))
}

/// u = T_γ(Φ_σ + v).
pub fn unfreeze(v: &Field, gamma: f64, phi_sigma: &Field, scheme: ShiftScheme) -> Result<Field> {
    let w = Field::extend(phi_sigma, v.grid())?.add(v);
    fields::shift(&w, gamma, scheme)
}

/// (I − dt·D_c(∂ₓ² − λ₁|ξ|²))⁻¹ per component and transverse mode, with
/// identity rows at x = ±L.
struct ImplicitDiffusion {
    lus: Vec<BandedLu>,
    nodes: usize,
    nt: usize,
}

impl ImplicitDiffusion {
    fn new(grid: &Grid, diffusion: &[f64], dt: f64) -> Result<Self> {
        let nodes = grid.nodes();
        let nt = grid.transverse_points();
        let last = grid.nx;
        let r = stencil::radius(grid.fd_order);
        let inv = 1.0 / (grid.dx() * grid.dx());
        let l1 = grid.lambda1();
        let mut lus: Vec<BandedLu> = Vec::with_capacity(diffusion.len() * nt);
        let mut cache: Vec<(f64, f64, usize)> = Vec::new();
        for &d in diffusion {
            for m in 0..nt {
                let k2 = grid.mode_sq(m);
                if let Some(&(_, _, idx)) = cache.iter().find(|(dd, kk, _)| *dd == d && *kk == k2) {
                    let lu = lus[idx].clone();
                    lus.push(lu);
                    continue;
                }
                let mut a = Banded::zeros(nodes, r, r);
                a.set(0, 0, 1.0);
                a.set(last, last, 1.0);
                for i in 1..last {
                    let (start, w) = stencil::row(i, last, 2, grid.fd_order);
                    for (k, wk) in w.iter().enumerate() {
                        a.add(i, start + k, -dt * d * wk * inv);
                    }
                    a.add(i, i, 1.0 + dt * d * l1 * k2);
                }
                cache.push((d, k2, lus.len()));
                lus.push(a.lu()?);
            }
        }
        Ok(Self { lus, nodes, nt })
    }

    /// Solves in place; boundary rows of `rhs` must already hold the
    /// boundary values.
    fn solve(&self, rhs: &mut Field, fft: Option<&TransverseFft>) {
        let (nodes, nt) = (self.nodes, self.nt);
        let n = rhs.n();
        match fft {
            None => {
                for c in 0..n {
                    self.lus[c].solve_in_place(&mut rhs.values_mut()[c * nodes..(c + 1) * nodes]);
                }
            }
            Some(fft) => {
                let mut spec = vec![num_complex::Complex64::new(0.0, 0.0); nodes * nt];
                let mut re = vec![0.0; nodes];
                let mut im = vec![0.0; nodes];
                for c in 0..n {
                    let comp = rhs.component_mut(c);
                    for i in 0..nodes {
                        fft.forward_row(&comp[i * nt..(i + 1) * nt], &mut spec[i * nt..(i + 1) * nt]);
                    }
                    for m in 0..nt {
                        for i in 0..nodes {
                            re[i] = spec[i * nt + m].re;
                            im[i] = spec[i * nt + m].im;
                        }
                        let lu = &self.lus[c * nt + m];
                        lu.solve_in_place(&mut re);
                        lu.solve_in_place(&mut im);
                        for i in 0..nodes {
                            spec[i * nt + m] = num_complex::Complex64::new(re[i], im[i]);
                        }
                    }
                    for i in 0..nodes {
                        fft.inverse_row(&mut spec[i * nt..(i + 1) * nt], &mut comp[i * nt..(i + 1) * nt]);
                    }
                }
            }
        }
    }
}

/// Result of [`Simulator::cross_validate`].
#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub times: Vec<f64>,
    /// ‖v_direct(t) − freeze(u(t), γ(t))‖_{L²}.
    pub discrepancy: Vec<f64>,
    pub max: f64,
}

/// Integrator for one (model, wave, kernel, configuration).
pub struct Simulator {
    pub sys: PhaseSystem,
    pub wave: StochasticWave,
    pub cfg: SimConfig,
    phi_ext: Field,
    implicit: ImplicitDiffusion,
    fft: Option<TransverseFft>,
}

impl Simulator {
    /// `wave` must be the stochastic wave for `cfg.sigma` on the profile grid
    /// of `sys`.
    pub fn new(sys: PhaseSystem, wave: StochasticWave, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        if (wave.sigma - cfg.sigma).abs() > 1e-14 {
            return Err(Error::Parameter(format!(
                "stochastic wave was computed for sigma = {}, config has {}",
                wave.sigma, cfg.sigma
            )));
        }
        let grid = sys.grid().clone();
        let phi_ext = Field::extend(&wave.phi, &grid)?;
        let implicit = ImplicitDiffusion::new(&grid, &sys.model.diffusion, cfg.dt)?;
        let fft = if grid.d > 1 { Some(TransverseFft::new(&grid)?) } else { None };
        Ok(Self { sys, wave, cfg, phi_ext, implicit, fft })
    }

    pub fn grid(&self) -> &Grid {
        self.sys.grid()
    }

    /// State at t = 0: Φ_σ with γ = 0, or `u0` with γ₀ from the phase
    /// condition ⟨T_{−γ₀}u₀ − Φ_σ, ψ_tw⟩ = 0.
    pub fn initial_state(&self, u0: Option<&Field>) -> Result<SimState> {
        let (u, gamma) = match u0 {
            None => (self.phi_ext.clone(), 0.0),
            Some(u0) => {
                u0.same_shape(&self.phi_ext)?;
                let g0 = wave::init_phase(u0, &self.wave.phi, &self.sys.psi, self.sys.scheme)?;
                (u0.clone(), g0)
            }
        };
        Ok(SimState {
            u,
            gamma_rel: gamma,
            offset: 0.0,
            t: 0.0,
            step: 0,
            integral: 0.0,
            recenterings: 0,
        })
    }

    /// White field of step `step`: the normalised sum of the 2^level base
    /// draws it covers. `None` when σ = 0.
    pub fn white(&self, traj: u64, step: u64) -> Option<Vec<f64>> {
        if self.cfg.sigma == 0.0 {
            return None;
        }
        let sub = 1u64 << self.cfg.noise_level;
        let len = self.sys.kernel.white_len();
        let mut out = vec![0.0; len];
        for s in 0..sub {
            let mut r = rng::step_rng(self.cfg.seed, traj, step * sub + s);
            for o in out.iter_mut() {
                let z: f64 = r.sample(StandardNormal);
                *o += z;
            }
        }
        if sub > 1 {
            let s = 1.0 / (sub as f64).sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
        Some(out)
    }

    /// D(∂ₓ² + Δ_y)a per component.
    fn diffusion_term(&self, a: &Field) -> Result<Field> {
        let mut out = fields::deriv_x(a, 2)?;
        if let Some(fft) = &self.fft {
            let g = a.grid();
            let mut s = fft.forward(a);
            let nt = g.transverse_points();
            let l1 = g.lambda1();
            for (k, v) in s.data.iter_mut().enumerate() {
                *v *= -l1 * g.mode_sq(k % nt);
            }
            out = out.add(&fft.inverse(&s));
        }
        let per = a.grid().nodes() * a.grid().transverse_points();
        for (c, d) in self.sys.model.diffusion.iter().enumerate() {
            out.values_mut()[c * per..(c + 1) * per].iter_mut().for_each(|v| *v *= d);
        }
        Ok(out)
    }

    fn set_boundary(&self, a: &mut Field, left: &[f64], right: &[f64]) {
        let g = a.grid().clone();
        let nt = g.transverse_points();
        for c in 0..a.n() {
            for j in 0..nt {
                a.set(c, 0, j, left[c]);
                a.set(c, g.nx, j, right[c]);
            }
        }
    }

    /// One Euler–Maruyama step of (U, γ̃) with white field `white`.
    pub fn step(&self, st: &mut SimState, white: Option<&[f64]>) -> Result<()> {
        let cfg = &self.cfg;
        let (dt, sigma, c) = (cfg.dt, cfg.sigma, self.wave.c);
        let sys = &self.sys;
        let p = sys.profiles(st.gamma_rel)?;
        let k = sys.coefficients_with(&st.u, &p, sigma)?;
        let a = sys.a_sigma_with(&st.u, &p, &k, c, sigma)?;
        let mut drift = sys.model.eval_f(&st.u)?;
        drift.axpy(c, &fields::deriv_x(&st.u, 1)?);
        if sigma != 0.0 {
            drift.axpy(sigma * sigma, &sys.model.eval_h(&st.u)?);
        }
        let mut next = st.u.clone();
        if cfg.scheme == Scheme::ExplicitEm {
            drift = drift.add(&self.diffusion_term(&st.u)?);
        }
        next.axpy(dt, &drift);
        let mut b = 0.0;
        if let Some(w) = white {
            let dw = sys.kernel.colour(w, dt, 0.0)?;
            next.axpy(sigma, &phase::g_apply(&sys.model, &k.g, &dw));
            b = sys.b_apply(&k, &p.psi, &dw);
        }
        self.set_boundary(&mut next, &sys.model.u_minus, &sys.model.u_plus);
        if cfg.scheme == Scheme::ImexEm {
            self.implicit.solve(&mut next, self.fft.as_ref());
        }
        st.u = next;
        st.gamma_rel += a * dt + sigma * b;
        st.t += dt;
        st.step += 1;
        let sup = st.u.sup_norm();
        if !(sup <= cfg.blowup_guard) {
            return Err(Error::Blowup { t: st.t, sup });
        }
        if !st.gamma_rel.is_finite() {
            return Err(Error::NonFinite(format!("phase at t = {}", st.t)));
        }
        if st.gamma_rel.abs() > 0.25 * self.grid().l {
            st.u = fields::shift(&st.u, -st.gamma_rel, sys.scheme)?;
            st.offset += st.gamma_rel;
            st.gamma_rel = 0.0;
            st.recenterings += 1;
        }
        Ok(())
    }

    /// v(t) for the current state.
    pub fn freeze(&self, st: &SimState) -> Result<Field> {
        freeze(&st.u, st.gamma_rel, &self.wave.phi, self.sys.scheme)
    }

    fn sobolev_sq(&self, v: &Field, k: usize) -> f64 {
        fields::sobolev_norm_sq(v, k, self.fft.as_ref())
    }

    /// Integrates trajectory `traj` to t_end or to exit.
    pub fn run_trajectory(&self, traj: u64, u0: Option<&Field>) -> Result<TrajectoryRecord> {
        let cfg = &self.cfg;
        let mut st = self.initial_state(u0)?;
        let mut rec = TrajectoryRecord {
            trajectory: traj,
            exit_time: f64::INFINITY,
            ..Default::default()
        };
        let decay = (-cfg.epsilon * cfg.dt).exp();
        let mut v = self.freeze(&st)?;
        let first = self.sobolev_sq(&v, cfg.k);
        self.record(&mut rec, &st, &v, first);
        rec.max_orth = self.orth(&v);
        let steps = cfg.steps();
        for s in 0..steps {
            let hk1 = self.sobolev_sq(&v, cfg.k + 1);
            st.integral = decay * st.integral + cfg.dt * hk1;
            let white = self.white(traj, st.step);
            self.step(&mut st, white.as_deref())?;
            v = self.freeze(&st)?;
            let hk = self.sobolev_sq(&v, cfg.k);
            let nval = hk + st.integral;
            let exiting = nval > cfg.eta && rec.exit_time.is_infinite();
            if rec.exit_time.is_infinite() {
                rec.max_orth = rec.max_orth.max(self.orth(&v));
            }
            if exiting {
                rec.exit_time = st.t;
                rec.flags.exited = true;
            }
            if (s + 1) % cfg.record_stride == 0 || s + 1 == steps || (exiting && cfg.stop_at_exit) {
                self.record(&mut rec, &st, &v, hk);
            }
            if exiting && cfg.stop_at_exit {
                break;
            }
        }
        rec.flags.completed = !(rec.flags.exited && cfg.stop_at_exit);
        rec.recenterings = st.recenterings;
        Ok(rec)
    }

    fn orth(&self, v: &Field) -> f64 {
        v.pair_profile(&self.sys.psi).abs() / fields::l2_norm(v).max(1e-8)
    }

    fn record(&self, rec: &mut TrajectoryRecord, st: &SimState, v: &Field, hk: f64) {
        rec.times.push(st.t);
        rec.gamma.push(st.gamma(self.wave.c));
        rec.n_series.push(hk + st.integral);
        rec.v_norm.push(hk.sqrt());
        rec.orth.push(self.orth(v));
        if self.cfg.keep_snapshots {
            rec.snapshots.push(v.values().to_vec());
        }
    }

    /// Trajectories `ids` in parallel on the current rayon pool; results are
    /// returned in id order and do not depend on the pool size.
    pub fn ensemble(&self, ids: std::ops::Range<u64>) -> Result<Vec<TrajectoryRecord>> {
        ids.into_par_iter().map(|id| self.run_trajectory(id, None)).collect()
    }

    /// State after integrating trajectory `traj` from Φ_σ to time `t`.
    pub fn run_to(&self, traj: u64, t: f64) -> Result<SimState> {
        let mut st = self.initial_state(None)?;
        let steps = (t / self.cfg.dt).round() as usize;
        for _ in 0..steps {
            let w = self.white(traj, st.step);
            self.step(&mut st, w.as_deref())?;
        }
        Ok(st)
    }

    /// One step of dv = ℛ_σ(v; c_σ, Φ_σ)dt + σ𝒮(v; Φ_σ)[dW] with the
    /// same IMEX splitting as the u-equation.
    pub fn v_step(&self, v: &Field, dw: Option<&Field>) -> Result<Field> {
        let (dt, sigma) = (self.cfg.dt, self.cfg.sigma);
        let (r, st) = self.sys.drift_r(v, self.wave.c, &self.wave.phi, sigma)?;
        let mut next = v.clone();
        let explicit = if self.cfg.scheme == Scheme::ImexEm {
            r.sub(&self.diffusion_term(v)?)
        } else {
            r
        };
        next.axpy(dt, &explicit);
        if let Some(dw) = dw {
            next.axpy(sigma, &self.sys.diffusion_s(&st, dw));
        }
        let zero = vec![0.0; v.n()];
        self.set_boundary(&mut next, &zero, &zero);
        if self.cfg.scheme == Scheme::ImexEm {
            self.implicit.solve(&mut next, self.fft.as_ref());
        }
        Ok(next)
    }

    /// Runs the u-system and the v-equation side by side on one noise path
    /// up to `t_max`; the v-run receives T_{−γ}ΔW.
    pub fn cross_validate(&self, traj: u64, t_max: f64) -> Result<CrossValidation> {
        let mut st = self.initial_state(None)?;
        let mut v = Field::zeros(self.grid(), self.sys.model.n);
        let steps = (t_max / self.cfg.dt).round() as usize;
        let mut out = CrossValidation { times: vec![0.0], discrepancy: vec![0.0], max: 0.0 };
        for _ in 0..steps {
            let white = self.white(traj, st.step);
            let dw_v = match &white {
                Some(w) => Some(self.sys.kernel.colour(w, self.cfg.dt, st.offset + st.gamma_rel)?),
                None => None,
            };
            v = self.v_step(&v, dw_v.as_ref())?;
            self.step(&mut st, white.as_deref())?;
            let d = fields::l2_norm(&v.sub(&self.freeze(&st)?));
            out.times.push(st.t);
            out.discrepancy.push(d);
            out.max = out.max.max(d);
        }
        Ok(out)
    }
}

/// Strong differences ‖U_dt − U_{dt/2}‖_{L²} + |γ_dt − γ_{dt/2}| at time `t`
/// for coupled runs of `coarse` (dt, noise level ℓ + 1) and `fine`
/// (dt/2, level ℓ).
pub fn coupled_difference(coarse: &Simulator, fine: &Simulator, traj: u64, t: f64) -> Result<(f64, f64)> {
    if coarse.cfg.noise_level != fine.cfg.noise_level + 1 || (coarse.cfg.dt - 2.0 * fine.cfg.dt).abs() > 1e-15 {
        return Err(Error::Parameter("coupled runs need dt and dt/2 with noise levels l + 1 and l".into()));
    }
    let a = coarse.run_to(traj, t)?;
    let b = fine.run_to(traj, t)?;
    let ua = fields::shift(&a.u, -a.gamma_rel - a.offset, coarse.sys.scheme)?;
    let ub = fields::shift(&b.u, -b.gamma_rel - b.offset, fine.sys.scheme)?;
    let du = fields::l2_norm(&ua.sub(&ub));
    let dg = (a.gamma(coarse.wave.c) - b.gamma(fine.wave.c)).abs();
    Ok((du, dg))
}

const MAGIC: &[u8; 6] = b"SWTRJ\0";
const VERSION: u16 = 1;

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl TrajectoryRecord {
    /// Binary layout: magic, version (u16), header length (u64) and UTF-8
    /// header, scalars, then frames of (t, γ, N, ‖v‖, orth) followed by the
    /// snapshot length and values. Little endian throughout.
    pub fn write_binary(&self, mut w: impl Write, header: &str) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(header.as_bytes())?;
        w.write_all(&self.trajectory.to_le_bytes())?;
        put_f64(&mut w, self.exit_time)?;
        put_f64(&mut w, self.max_orth)?;
        w.write_all(&(self.recenterings as u64).to_le_bytes())?;
        w.write_all(&[self.flags.completed as u8, self.flags.exited as u8])?;
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        for i in 0..self.times.len() {
            for v in [self.times[i], self.gamma[i], self.n_series[i], self.v_norm[i], self.orth[i]] {
                put_f64(&mut w, v)?;
            }
            let snap = self.snapshots.get(i).map(|s| s.as_slice()).unwrap_or(&[]);
            w.write_all(&(snap.len() as u64).to_le_bytes())?;
            for &v in snap {
                put_f64(&mut w, v)?;
            }
        }
        Ok(())
    }

    /// Inverse of [`Self::write_binary`]; returns the record and header.
    pub fn read_binary(mut r: impl Read) -> Result<(Self, String)> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a trajectory record (bad magic)".into()));
        }
        let mut vb = [0u8; 2];
        r.read_exact(&mut vb)?;
        let version = u16::from_le_bytes(vb);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported record version {version}")));
        }
        let hl = get_u64(&mut r)? as usize;
        let mut hb = vec![0u8; hl];
        r.read_exact(&mut hb)?;
        let header = String::from_utf8(hb).map_err(|e| Error::Format(e.to_string()))?;
        let mut rec = TrajectoryRecord {
            trajectory: get_u64(&mut r)?,
            exit_time: get_f64(&mut r)?,
            max_orth: get_f64(&mut r)?,
            recenterings: get_u64(&mut r)? as usize,
            ..Default::default()
        };
        let mut fl = [0u8; 2];
        r.read_exact(&mut fl)?;
        rec.flags = TerminalFlags { completed: fl[0] != 0, exited: fl[1] != 0 };
        let frames = get_u64(&mut r)? as usize;
        let mut any_snap = false;
        let mut snaps = Vec::with_capacity(frames);
        for _ in 0..frames {
            rec.times.push(get_f64(&mut r)?);
            rec.gamma.push(get_f64(&mut r)?);
            rec.n_series.push(get_f64(&mut r)?);
            rec.v_norm.push(get_f64(&mut r)?);
            rec.orth.push(get_f64(&mut r)?);
            let len = get_u64(&mut r)? as usize;
            any_snap |= len > 0;
            let mut s = Vec::with_capacity(len);
            for _ in 0..len {
                s.push(get_f64(&mut r)?);
            }
            snaps.push(s);
        }
        if any_snap {
            rec.snapshots = snaps;
        }
        Ok((rec, header))
    }

    /// Columns t, γ, N, ‖v‖_{H^k}, orthogonality ratio.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# trajectory = {}", self.trajectory)?;
        writeln!(w, "# exit_time = {}", self.exit_time)?;
        writeln!(w, "# max_orth = {:.6e}", self.max_orth)?;
        writeln!(w, "# recenterings = {}", self.recenterings)?;
        writeln!(w, "# t gamma N v_norm orth")?;
        for i in 0..self.times.len() {
            writeln!(
                w,
                "{:.10e} {:.15e} {:.10e} {:.10e} {:.6e}",
                self.times[i], self.gamma[i], self.n_series[i], self.v_norm[i], self.orth[i]
            )?;
        }
        Ok(())
    }
}

/// Wave, linearisation, kernel and phase system for one model and grid.
pub struct Setup {
    pub model: crate::models::ModelSpec,
    pub grid: Grid,
    pub wave: wave::WaveProfile,
    pub lin: crate::linear::Linearisation,
    pub kernel: crate::noise::NoiseKernel,
    pub sys: PhaseSystem,
}

impl Setup {
    /// Solves the wave on the profile grid, builds ℒ_tw (requires a positive
    /// gap) and the kernel on the cylinder. h is set to the Itô–Stratonovich
    /// correction for `mu` when n = m = 1; otherwise the model's h is kept.
    pub fn build(model: &crate::models::ModelSpec, grid: &Grid, kernel: &crate::noise::KernelSpec, mu: f64) -> Result<Self> {
        let kernel = crate::noise::NoiseKernel::build(kernel, grid, model.m)?;
        let model = if model.n == 1 && model.m == 1 {
            crate::models::stratonovich_correction(model.clone(), kernel.q0, mu)?
        } else {
            model.clone()
        };
        let wave = wave::solve_wave(&model, grid, None)?;
        let lin = crate::linear::Linearisation::build(&wave, &model, grid)?;
        let sys = PhaseSystem::new(&model, &lin, &kernel)?;
        Ok(Self { model, grid: grid.clone(), wave, lin, kernel, sys })
    }

    pub fn stochastic_wave(&self, sigma: f64) -> Result<StochasticWave> {
        phase::solve_stochastic_wave(&self.sys.reduced()?, &self.wave, sigma)
    }

    pub fn simulator(&self, cfg: SimConfig) -> Result<Simulator> {
        let sw = self.stochastic_wave(cfg.sigma)?;
        Simulator::new(self.sys.clone(), sw, cfg)
    }
}
