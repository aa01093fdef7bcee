//! Translation-invariant Q-Wiener noise with a separable kernel
//! q(x, y) = q_wv(x)·q_⊥(y): spectra, the convolution Q, increment sampling.
//!
//! The x-direction uses a circulant embedding of length 2N_x on [−2L, 2L);
//! the transverse direction is periodic already.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, Field, Grid, TransverseFft};
use crate::models::ModelSpec;

/// Transverse factor q_⊥.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transverse {
    /// Periodised Gaussian exp(−|y|²/2ℓ_y²).
    Gaussian { ell_y: f64 },
    /// Wendland function (1−r)⁶(35r²+18r+3)/3, r = |y|/radius.
    CompactBump { radius: f64 },
    /// q_⊥ ≡ 1.
    Homogeneous,
}

/// q(x, y) = amplitude·exp(−x²/2ℓ_x²)·q_⊥(y).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub ell_x: f64,
    #[serde(default = "homogeneous")]
    pub transverse: Transverse,
}

fn one() -> f64 {
    1.0
}

fn homogeneous() -> Transverse {
    Transverse::Homogeneous
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::homogeneous_transverse(1.0)
    }
}

impl KernelSpec {
    pub fn gaussian(ell_x: f64, ell_y: f64, amplitude: f64) -> Self {
        Self {
            amplitude,
            ell_x,
            transverse: Transverse::Gaussian { ell_y },
        }
    }

    /// Compact q_⊥ with a unit Gaussian along the wave.
    pub fn compact_bump(radius: f64) -> Self {
        Self {
            amplitude: 1.0,
            ell_x: 1.0,
            transverse: Transverse::CompactBump { radius },
        }
    }

    pub fn homogeneous_transverse(ell_x: f64) -> Self {
        Self {
            amplitude: 1.0,
            ell_x,
            transverse: Transverse::Homogeneous,
        }
    }

    pub fn q_wv(&self, x: f64) -> f64 {
        self.amplitude * (-x * x / (2.0 * self.ell_x * self.ell_x)).exp()
    }

    /// q_⊥ at a transverse offset, periodised over a torus of side `torus`.
    pub fn q_perp(&self, y: [f64; 2], d: usize, torus: f64) -> f64 {
        let wrap = |v: f64| v - torus * (v / torus).round();
        let dims = d - 1;
        match self.transverse {
            Transverse::Homogeneous => 1.0,
            Transverse::Gaussian { ell_y } => (0..dims)
                .map(|k| {
                    (-3..=3)
                        .map(|p| {
                            let v = wrap(y[k]) + p as f64 * torus;
                            (-v * v / (2.0 * ell_y * ell_y)).exp()
                        })
                        .sum::<f64>()
                })
                .product(),
            Transverse::CompactBump { radius } => {
                let r2: f64 = (0..dims).map(|k| wrap(y[k]).powi(2)).sum();
                let r = r2.sqrt() / radius;
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - r).powi(6) * (35.0 * r * r + 18.0 * r + 3.0) / 3.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::Parameter(format!("kernel {what} must be positive, got {v}"));
        if !(self.amplitude > 0.0) {
            return Err(bad("amplitude", self.amplitude));
        }
        if !(self.ell_x > 0.0) {
            return Err(bad("ell_x", self.ell_x));
        }
        match self.transverse {
            Transverse::Gaussian { ell_y } if !(ell_y > 0.0) => Err(bad("ell_y", ell_y)),
            Transverse::CompactBump { radius } if !(radius > 0.0) => Err(bad("radius", radius)),
            _ => Ok(()),
        }
    }
}

/// Sampled kernel with spectra and FFT plans for one grid.
#[derive(Clone)]
pub struct NoiseKernel {
    pub spec: KernelSpec,
    grid: Grid,
    pub m: usize,
    /// Per noise component scale of the diagonal kernel diag(s₁q, …, s_mq).
    pub component_scale: Vec<f64>,
    /// Circulant first row of q_wv (length 2N_x).
    pub qx: Vec<f64>,
    /// Eigenvalues of the circulant, clipped at zero.
    pub lambda_x: Vec<f64>,
    /// q_⊥ at the transverse nodes (offset from 0).
    pub qy: Vec<f64>,
    /// Unnormalised DFT of `qy`, clipped at zero.
    pub lambda_y: Vec<f64>,
    pub q0: f64,
    pub q_avg: f64,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fft_y: Option<TransverseFft>,
}

impl std::fmt::Debug for NoiseKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseKernel")
            .field("spec", &self.spec)
            .field("m", &self.m)
            .field("q0", &self.q0)
            .field("q_avg", &self.q_avg)
            .finish()
    }
}

/// Relative negativity of a sampled spectrum beyond which the kernel is
/// rejected instead of clipped.
const NEGATIVE_TOL: f64 = 1e-6;

fn clip_spectrum(v: &mut [f64], what: &str) -> Result<()> {
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -NEGATIVE_TOL * max.max(1e-300) {
        return Err(Error::Indefinite(format!("{what} spectrum has a mode at {min:e}")));
    }
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(())
}

impl NoiseKernel {
    pub fn build(spec: &KernelSpec, grid: &Grid, m: usize) -> Result<Self> {
        spec.validate()?;
        if m == 0 {
            return Err(Error::Parameter("noise needs m >= 1".into()));
        }
        let mm = 2 * grid.nx;
        let dx = grid.dx();
        let qx: Vec<f64> = (0..mm)
            .map(|k| {
                let lag = if k <= mm / 2 { k as f64 } else { k as f64 - mm as f64 };
                spec.q_wv(lag * dx)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd_x = planner.plan_fft_forward(mm);
        let inv_x = planner.plan_fft_inverse(mm);
        let mut buf: Vec<Complex64> = qx.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fwd_x.process(&mut buf);
        let mut lambda_x: Vec<f64> = buf.iter().map(|z| z.re).collect();
        clip_spectrum(&mut lambda_x, "x-kernel")?;

        let nt = grid.transverse_points();
        let qy: Vec<f64> = (0..nt).map(|j| spec.q_perp(grid.y(j), grid.d, grid.torus)).collect();
        let (lambda_y, fft_y) = if grid.d == 1 {
            (vec![1.0], None)
        } else {
            let fft = TransverseFft::new(grid)?;
            let mut out = vec![Complex64::new(0.0, 0.0); nt];
            fft.forward_row(&qy, &mut out);
            let mut l: Vec<f64> = out.iter().map(|z| z.re * nt as f64).collect();
            clip_spectrum(&mut l, "transverse kernel")?;
            (l, Some(fft))
        };
        let q_avg = if grid.d == 1 {
            1.0
        } else {
            qy.iter().sum::<f64>() * grid.cell_y() / grid.torus_measure()
        };
        Ok(Self {
            spec: spec.clone(),
            grid: grid.clone(),
            m,
            component_scale: vec![1.0; m],
            q0: qx[0] * qy[0],
            qx,
            lambda_x,
            qy,
            lambda_y,
            q_avg,
            fwd_x,
            inv_x,
            fft_y,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Length of the x-embedding.
    pub fn embed_len(&self) -> usize {
        self.qx.len()
    }

    /// Number of standard normals consumed per increment.
    pub fn white_len(&self) -> usize {
        self.m * self.embed_len() * self.grid.transverse_points()
    }

    /// q̂_wv(ω_k) = dx·Λ_k at ω_k = k/(2N_x·dx).
    pub fn q_hat_x(&self) -> Vec<(f64, f64)> {
        let mm = self.embed_len();
        let dx = self.grid.dx();
        self.lambda_x
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let kk = if k <= mm / 2 { k as f64 } else { k as f64 - mm as f64 };
                (kk / (mm as f64 * dx), dx * l)
            })
            .collect()
    }

    /// Linear convolution along x of one line of N_x+1 values (trapezoid
    /// weights applied to the input).
    fn convolve_x(&self, line: &mut [f64], spectrum: &[f64], weighted: bool) {
        let g = &self.grid;
        let mm = self.embed_len();
        let mut buf = vec![Complex64::new(0.0, 0.0); mm];
        for (i, v) in line.iter().enumerate() {
            let w = if weighted { g.wx(i) } else { 1.0 };
            buf[i] = Complex64::new(v * w, 0.0);
        }
        self.fwd_x.process(&mut buf);
        for (z, &l) in buf.iter_mut().zip(spectrum) {
            *z *= l / mm as f64;
        }
        self.inv_x.process(&mut buf);
        for (v, z) in line.iter_mut().zip(&buf) {
            *v = z.re;
        }
    }

    /// Q_wv on a one-dimensional m-component line set (component-major).
    pub fn apply_q_wv(&self, w: &Field) -> Result<Field> {
        if w.grid().d != 1 || w.grid().nodes() != self.grid.nodes() {
            return Err(Error::Shape("Q_wv needs a profile on the kernel's x-grid".into()));
        }
        let nodes = self.grid.nodes();
        let mut out = w.clone();
        for c in 0..w.n() {
            let s = self.component_scale[c % self.m];
            let line = &mut out.values_mut()[c * nodes..(c + 1) * nodes];
            self.convolve_x(line, &self.lambda_x, true);
            line.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }

    /// Qw: linear convolution in x, circular in y, per noise component.
    pub fn apply_q(&self, w: &Field) -> Result<Field> {
        if w.grid() != &self.grid || w.n() != self.m {
            return Err(Error::Shape(format!(
                "apply_Q needs an m = {} component field on the kernel grid",
                self.m
            )));
        }
        let g = &self.grid;
        let nodes = g.nodes();
        let nt = g.transverse_points();
        let mut out = w.clone();
        let mut line = vec![0.0; nodes];
        for c in 0..self.m {
            let comp = out.component_mut(c);
            for j in 0..nt {
                for i in 0..nodes {
                    line[i] = comp[i * nt + j];
                }
                self.convolve_x(&mut line, &self.lambda_x, true);
                for i in 0..nodes {
                    comp[i * nt + j] = line[i] * self.component_scale[c];
                }
            }
            if let Some(fft) = &self.fft_y {
                let mut coef = vec![Complex64::new(0.0, 0.0); nt];
                let vol = g.cell_y();
                for row in comp.chunks_mut(nt) {
                    fft.forward_row(row, &mut coef);
                    for (z, &l) in coef.iter_mut().zip(&self.lambda_y) {
                        *z *= l * vol;
                    }
                    fft.inverse_row(&mut coef, row);
                }
            }
        }
        Ok(out)
    }

    /// Draws the white field consumed by one increment.
    pub fn white(&self, rng: &mut impl Rng) -> Vec<f64> {
        (0..self.white_len()).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Coloured increment √dt·C^{1/2}Z restricted to the grid, evaluated at
    /// x + γ (so the result is T_{−γ}ΔW for the same white field).
    pub fn colour(&self, white: &[f64], dt: f64, gamma: f64) -> Result<Field> {
        if !(dt > 0.0) {
            return Err(Error::Parameter(format!("increment needs dt > 0, got {dt}")));
        }
        if white.len() != self.white_len() {
            return Err(Error::Shape(format!("white field has {} values, need {}", white.len(), self.white_len())));
        }
        let g = &self.grid;
        let nodes = g.nodes();
        let nt = g.transverse_points();
        let mm = self.embed_len();
        let dx = g.dx();
        let sq_x: Vec<Complex64> = self
            .lambda_x
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let kk = if k <= mm / 2 { k as f64 } else { k as f64 - mm as f64 };
                let omega = TAU * kk / (mm as f64 * dx);
                Complex64::from_polar(l.sqrt() * dt.sqrt() / mm as f64, omega * gamma)
            })
            .collect();
        let mut out = Field::zeros(g, self.m);
        let mut buf = vec![Complex64::new(0.0, 0.0); mm];
        // rows of the embedding after the x-pass, only the kept nodes
        let mut rows = vec![0.0; nodes * nt];
        for c in 0..self.m {
            let base = c * mm * nt;
            for j in 0..nt {
                for (k, z) in buf.iter_mut().enumerate() {
                    *z = Complex64::new(white[base + k * nt + j], 0.0);
                }
                self.fwd_x.process(&mut buf);
                for (z, s) in buf.iter_mut().zip(&sq_x) {
                    *z *= s;
                }
                self.inv_x.process(&mut buf);
                for i in 0..nodes {
                    rows[i * nt + j] = buf[i].re;
                }
            }
            let scale = self.component_scale[c].sqrt();
            let comp = out.component_mut(c);
            if let Some(fft) = &self.fft_y {
                let mut coef = vec![Complex64::new(0.0, 0.0); nt];
                for (src, dst) in rows.chunks(nt).zip(comp.chunks_mut(nt)) {
                    fft.forward_row(src, &mut coef);
                    for (z, &l) in coef.iter_mut().zip(&self.lambda_y) {
                        *z *= l.sqrt() * scale;
                    }
                    fft.inverse_row(&mut coef, dst);
                }
            } else {
                for (d, s) in comp.iter_mut().zip(&rows) {
                    *d = s * scale;
                }
            }
        }
        Ok(out)
    }

    /// ΔW for one time step from `rng`.
    pub fn sample_increment(&self, rng: &mut impl Rng, dt: f64) -> Result<Field> {
        let w = self.white(rng);
        self.colour(&w, dt, 0.0)
    }

    /// The one-dimensional kernel q_avg·q_wv felt by a y-independent state.
    pub fn reduced(&self) -> Result<NoiseKernel> {
        let mut k = NoiseKernel::build(&self.spec, &self.grid.profile(), self.m)?;
        k.component_scale = self.component_scale.iter().map(|s| s * self.q_avg).collect();
        k.q0 = self.q0;
        k.q_avg = 1.0;
        Ok(k)
    }

    /// Columnar dump of q̂ along x and across the torus.
    pub fn write_spectrum(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# stochwave kernel spectrum v1")?;
        writeln!(w, "# q0 = {:.17e}", self.q0)?;
        writeln!(w, "# q_avg = {:.17e}", self.q_avg)?;
        writeln!(w, "# section x: omega q_hat")?;
        for (om, q) in self.q_hat_x() {
            writeln!(w, "{om:.12e} {q:.12e}")?;
        }
        if self.grid.d > 1 {
            writeln!(w, "# section transverse: mode q_hat")?;
            let vol = self.grid.cell_y();
            for (j, l) in self.lambda_y.iter().enumerate() {
                let md = self.grid.mode(j);
                writeln!(w, "{} {} {:.12e}", md[0], md[1], l * vol)?;
            }
        }
        Ok(())
    }
}

/// q_avg·⟨g(Φ₀)Q_wv[g(Φ₀)ᵀψ_tw], ψ_tw⟩, the predicted Var[γ₁(t)]/t.
pub fn phase_diffusion_slope(model: &ModelSpec, phi: &Field, psi: &Field, kernel: &NoiseKernel) -> Result<f64> {
    let w = g_transpose_psi(model, phi, psi)?;
    let qw = kernel.apply_q_wv(&w)?;
    Ok(kernel.q_avg * fields::inner_product_l2(&qw, &w)?)
}

/// Pointwise g(Φ)ᵀψ on a profile grid (m components).
pub fn g_transpose_psi(model: &ModelSpec, phi: &Field, psi: &Field) -> Result<Field> {
    let g = phi.grid();
    let nodes = g.nodes();
    let gv = model.eval_g(phi)?;
    let mut w = Field::zeros(g, model.m);
    for i in 0..nodes {
        for j in 0..model.m {
            let mut s = 0.0;
            for a in 0..model.n {
                s += gv.values()[(a * model.m + j) * nodes + i] * psi.values()[a * nodes + i];
            }
            w.values_mut()[j * nodes + i] = s;
        }
    }
    Ok(w)
}

/// Narrowest grid Gaussian with unit mass, a stand-in for the Dirac kernel.
pub fn dirac_surrogate(grid: &Grid) -> KernelSpec {
    let ell = grid.dx();
    KernelSpec {
        amplitude: 1.0 / ((2.0 * PI).sqrt() * ell),
        ell_x: ell,
        transverse: Transverse::Homogeneous,
    }
}
