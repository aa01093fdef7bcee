//! The truncated cylinder [−L, L] × 𝕋^{d−1}, fields on it, and the discrete
//! calculus used everywhere else: finite differences in x, Fourier in y.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of the discretised cylinder.
///
/// The x-grid has `nx + 1` nodes `x_i = −L + i·dx` including both endpoints,
/// so `dx = 2L/nx`. Each transverse direction carries `ny` periodic nodes
/// `y_j = j·dy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub l: f64,
    pub nx: usize,
    pub d: usize,
    pub torus: f64,
    pub ny: usize,
    /// Accuracy order of the central x-stencils (2, 4 or 6).
    pub fd_order: usize,
}

impl Grid {
    pub fn new(l: f64, nx: usize, d: usize, torus: f64, ny: usize) -> Result<Self> {
        let g = Grid {
            l,
            nx,
            d,
            torus,
            ny: if d == 1 { 1 } else { ny },
            fd_order: 6,
        };
        g.validate()?;
        Ok(g)
    }

    /// One-dimensional grid on [−L, L].
    pub fn line(l: f64, nx: usize) -> Result<Self> {
        Self::new(l, nx, 1, 1.0, 1)
    }

    pub fn with_fd_order(mut self, order: usize) -> Result<Self> {
        self.fd_order = order;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.l.is_finite()) {
            return Err(Error::Grid(format!("L must be positive, got {}", self.l)));
        }
        if self.nx < 8 || !self.nx.is_power_of_two() {
            return Err(Error::Grid(format!("N_x must be a power of two >= 8, got {}", self.nx)));
        }
        if !(1..=3).contains(&self.d) {
            return Err(Error::Grid(format!("d must lie in 1..=3, got {}", self.d)));
        }
        if self.d >= 2 {
            if self.ny < 8 || !self.ny.is_power_of_two() {
                return Err(Error::Grid(format!("N_y must be a power of two >= 8, got {}", self.ny)));
            }
            if !(self.torus > 0.0 && self.torus.is_finite()) {
                return Err(Error::Grid(format!("torus size must be positive, got {}", self.torus)));
            }
        }
        if ![2, 4, 6].contains(&self.fd_order) {
            return Err(Error::Grid(format!("fd_order must be 2, 4 or 6, got {}", self.fd_order)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.torus / self.ny as f64
    }

    /// Number of x-nodes, `nx + 1`.
    pub fn nodes(&self) -> usize {
        self.nx + 1
    }

    /// Number of transverse nodes, `ny^{d−1}`.
    pub fn transverse_points(&self) -> usize {
        self.ny.pow(self.d as u32 - 1)
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nodes()).map(|i| self.x(i)).collect()
    }

    /// Transverse coordinates of flattened index `j` (row-major over dims).
    pub fn y(&self, j: usize) -> [f64; 2] {
        let dy = self.dy();
        match self.d {
            1 => [0.0, 0.0],
            2 => [j as f64 * dy, 0.0],
            _ => [(j / self.ny) as f64 * dy, (j % self.ny) as f64 * dy],
        }
    }

    /// |𝕋|^{d−1}
    pub fn torus_measure(&self) -> f64 {
        if self.d == 1 {
            1.0
        } else {
            self.torus.powi(self.d as i32 - 1)
        }
    }

    /// dy^{d−1}, the transverse cell volume.
    pub fn cell_y(&self) -> f64 {
        if self.d == 1 {
            1.0
        } else {
            self.dy().powi(self.d as i32 - 1)
        }
    }

    /// λ₁ = 4π²/|𝕋|².
    pub fn lambda1(&self) -> f64 {
        4.0 * PI * PI / (self.torus * self.torus)
    }

    /// Trapezoid weight of x-node `i`.
    pub fn wx(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx {
            0.5 * self.dx()
        } else {
            self.dx()
        }
    }

    /// The same x-discretisation without transverse directions.
    pub fn profile(&self) -> Grid {
        Grid {
            d: 1,
            ny: 1,
            torus: 1.0,
            ..self.clone()
        }
    }

    /// Integer wave vector of flattened transverse mode `j`, in
    /// {−N_y/2, …, N_y/2−1}^{d−1}.
    pub fn mode(&self, j: usize) -> [i64; 2] {
        let ny = self.ny as i64;
        let wrap = |k: i64| if k >= ny / 2 { k - ny } else { k };
        match self.d {
            1 => [0, 0],
            2 => [wrap(j as i64), 0],
            _ => [wrap((j / self.ny) as i64), wrap((j % self.ny) as i64)],
        }
    }

    /// |ξ|² of flattened mode `j`.
    pub fn mode_sq(&self, j: usize) -> f64 {
        let m = self.mode(j);
        (m[0] * m[0] + m[1] * m[1]) as f64
    }
}

/// Central and one-sided x-stencils used by every x-derivative in the crate.
pub mod stencil {
    const D1: [&[f64]; 3] = [
        &[-0.5, 0.0, 0.5],
        &[1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0],
        &[-1.0 / 60.0, 3.0 / 20.0, -0.75, 0.0, 0.75, -3.0 / 20.0, 1.0 / 60.0],
    ];
    const D2: [&[f64]; 3] = [
        &[1.0, -2.0, 1.0],
        &[-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0],
        &[1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0],
    ];
    const D1_LEFT: &[f64] = &[-1.5, 2.0, -0.5];
    const D1_RIGHT: &[f64] = &[0.5, -2.0, 1.5];
    const D2_LEFT: &[f64] = &[2.0, -5.0, 4.0, -1.0];
    const D2_RIGHT: &[f64] = &[-1.0, 4.0, -5.0, 2.0];

    /// Unscaled weights of the derivative of order `deriv` at node `i` of
    /// `last + 1` nodes; returns the first node index and the weights.
    /// Multiply by dx^{−deriv}.
    pub fn row(i: usize, last: usize, deriv: usize, fd_order: usize) -> (usize, &'static [f64]) {
        let r = i.min(last - i).min(fd_order / 2);
        match (deriv, r) {
            (1, 0) if i == 0 => (0, D1_LEFT),
            (1, 0) => (last - 2, D1_RIGHT),
            (2, 0) if i == 0 => (0, D2_LEFT),
            (2, 0) => (last - 3, D2_RIGHT),
            (1, r) => (i - r, D1[r - 1]),
            (2, r) => (i - r, D2[r - 1]),
            _ => panic!("derivative order {deriv} not supported"),
        }
    }

    /// Interior stencil radius for the given accuracy order.
    pub fn radius(fd_order: usize) -> usize {
        fd_order / 2
    }
}

/// n-component real field on a [`Grid`]; layout is component-major, then x,
/// then transverse index.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid: Grid,
    n: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid, n: usize) -> Self {
        let len = n * grid.nodes() * grid.transverse_points();
        Self {
            grid: grid.clone(),
            n,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(grid: &Grid, n: usize, data: Vec<f64>) -> Result<Self> {
        let len = n * grid.nodes() * grid.transverse_points();
        if data.len() != len {
            return Err(Error::Shape(format!("expected {len} values, got {}", data.len())));
        }
        Ok(Self {
            grid: grid.clone(),
            n,
            data,
        })
    }

    /// Builds a field from `f(component, x, y)`.
    pub fn from_fn(grid: &Grid, n: usize, f: impl Fn(usize, f64, [f64; 2]) -> f64) -> Self {
        let mut out = Self::zeros(grid, n);
        let nt = grid.transverse_points();
        for c in 0..n {
            for i in 0..grid.nodes() {
                let x = grid.x(i);
                for j in 0..nt {
                    out.data[(c * grid.nodes() + i) * nt + j] = f(c, x, grid.y(j));
                }
            }
        }
        out
    }

    /// Extends a one-dimensional profile constantly in y onto `grid`.
    pub fn extend(profile: &Field, grid: &Grid) -> Result<Self> {
        if profile.grid.d != 1 || profile.grid.nodes() != grid.nodes() || profile.grid.l != grid.l {
            return Err(Error::Shape("profile does not match the target x-grid".into()));
        }
        let nt = grid.transverse_points();
        let mut data = Vec::with_capacity(profile.data.len() * nt);
        for &v in &profile.data {
            data.extend(std::iter::repeat_n(v, nt));
        }
        Ok(Self {
            grid: grid.clone(),
            n: profile.n,
            data,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.grid.nodes() + i) * self.grid.transverse_points() + j
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        let k = self.index(c, i, j);
        self.data[k] = v;
    }

    /// Values of component `c` (x-major, transverse fastest).
    pub fn component(&self, c: usize) -> &[f64] {
        let len = self.grid.nodes() * self.grid.transverse_points();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.nodes() * self.grid.transverse_points();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.n != other.n || self.grid != other.grid {
            return Err(Error::Shape(format!(
                "fields differ (n = {} vs {}, grids equal: {})",
                self.n,
                other.n,
                self.grid == other.grid
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// self ← self + s·other
    pub fn axpy(&mut self, s: f64, other: &Field) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    /// Transverse integral ∫u(x,y)dy for every (component, x-node), stored
    /// as component-major rows.
    pub fn integrate_y(&self) -> Vec<f64> {
        let nt = self.grid.transverse_points();
        let vol = self.grid.cell_y();
        self.data.chunks(nt).map(|row| row.iter().sum::<f64>() * vol).collect()
    }

    /// P_avg: transverse mean, returned as a field on the same grid.
    pub fn transverse_mean(&self) -> Field {
        let nt = self.grid.transverse_points();
        let mut out = self.clone();
        for row in out.data.chunks_mut(nt) {
            let m = row.iter().sum::<f64>() / nt as f64;
            row.iter_mut().for_each(|v| *v = m);
        }
        out
    }

    /// ⟨self, p⟩_{L²(𝒟)} for a one-dimensional profile p (extended in y).
    pub fn pair_profile(&self, p: &Field) -> f64 {
        debug_assert_eq!(p.n, self.n);
        let nodes = self.grid.nodes();
        let sums = self.integrate_y();
        let mut s = 0.0;
        for c in 0..self.n {
            for i in 0..nodes {
                s += self.grid.wx(i) * sums[c * nodes + i] * p.data[c * nodes + i];
            }
        }
        s
    }

    /// Restriction of transverse index `j` as a one-dimensional profile.
    pub fn slice_y(&self, j: usize) -> Field {
        let pg = self.grid.profile();
        let nodes = self.grid.nodes();
        let mut out = Field::zeros(&pg, self.n);
        for c in 0..self.n {
            for i in 0..nodes {
                out.data[c * nodes + i] = self.at(c, i, j);
            }
        }
        out
    }
}

/// Trapezoid-in-x, rectangle-in-y quadrature of Σ_c a·b.
pub fn inner_product_l2(a: &Field, b: &Field) -> Result<f64> {
    a.same_shape(b)?;
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &Field, b: &Field) -> f64 {
    let g = &a.grid;
    let nt = g.transverse_points();
    let nodes = g.nodes();
    let vol = g.cell_y();
    let mut s = 0.0;
    for c in 0..a.n {
        for i in 0..nodes {
            let base = (c * nodes + i) * nt;
            let row: f64 = a.data[base..base + nt]
                .iter()
                .zip(&b.data[base..base + nt])
                .map(|(x, y)| x * y)
                .sum();
            s += g.wx(i) * row;
        }
    }
    s * vol
}

pub fn l2_norm(a: &Field) -> f64 {
    dot_unchecked(a, a).max(0.0).sqrt()
}

/// x-derivative of order 1 or 2 with the grid's stencils.
pub fn deriv_x(a: &Field, order: usize) -> Result<Field> {
    if order != 1 && order != 2 {
        return Err(Error::Parameter(format!("deriv_x order must be 1 or 2, got {order}")));
    }
    let mut out = Field::zeros(&a.grid, a.n);
    deriv_x_into(a, order, &mut out);
    Ok(out)
}

pub(crate) fn deriv_x_into(a: &Field, order: usize, out: &mut Field) {
    let g = &a.grid;
    let nt = g.transverse_points();
    let nodes = g.nodes();
    let scale = g.dx().powi(-(order as i32));
    for c in 0..a.n {
        let src = a.component(c);
        let dst = out.component_mut(c);
        for i in 0..nodes {
            let (start, w) = stencil::row(i, g.nx, order, g.fd_order);
            let row = &mut dst[i * nt..(i + 1) * nt];
            row.iter_mut().for_each(|v| *v = 0.0);
            for (k, &wk) in w.iter().enumerate() {
                if wk == 0.0 {
                    continue;
                }
                let s = &src[(start + k) * nt..(start + k + 1) * nt];
                for (r, v) in row.iter_mut().zip(s) {
                    *r += wk * scale * v;
                }
            }
        }
    }
}

/// x-derivative of a complex line of `nodes` values.
fn deriv_line_complex(g: &Grid, line: &[Complex64], order: usize, out: &mut [Complex64]) {
    let scale = g.dx().powi(-(order as i32));
    for i in 0..g.nodes() {
        let (start, w) = stencil::row(i, g.nx, order, g.fd_order);
        let mut s = Complex64::new(0.0, 0.0);
        for (k, &wk) in w.iter().enumerate() {
            s += line[start + k] * wk;
        }
        out[i] = s * scale;
    }
}

/// Reusable FFT plans for the transverse directions of one grid.
#[derive(Clone)]
pub struct TransverseFft {
    ny: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl TransverseFft {
    pub fn new(grid: &Grid) -> Result<Self> {
        if grid.d == 1 {
            return Err(Error::NoTransverse);
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            ny: grid.ny,
            d: grid.d,
            fwd: planner.plan_fft_forward(grid.ny),
            inv: planner.plan_fft_inverse(grid.ny),
        })
    }

    fn run(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inv } else { &self.fwd };
        let ny = self.ny;
        if self.d == 2 {
            plan.process(buf);
            return;
        }
        plan.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); ny];
        for c in 0..ny {
            for r in 0..ny {
                col[r] = buf[r * ny + c];
            }
            plan.process(&mut col);
            for r in 0..ny {
                buf[r * ny + c] = col[r];
            }
        }
    }

    /// Forward transform of one transverse row, normalised by 1/N_y^{d−1}.
    pub fn forward_row(&self, row: &[f64], out: &mut [Complex64]) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = Complex64::new(v, 0.0);
        }
        self.run(out, false);
        let s = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|v| *v *= s);
    }

    /// Inverse of [`Self::forward_row`]; keeps the real part.
    pub fn inverse_row(&self, coef: &mut [Complex64], out: &mut [f64]) {
        self.run(coef, true);
        for (o, v) in out.iter_mut().zip(coef.iter()) {
            *o = v.re;
        }
    }

    pub fn forward(&self, a: &Field) -> SpectralField {
        let nt = a.grid.transverse_points();
        let mut data = vec![Complex64::new(0.0, 0.0); a.data.len()];
        for (row, out) in a.data.chunks(nt).zip(data.chunks_mut(nt)) {
            self.forward_row(row, out);
        }
        SpectralField {
            grid: a.grid.clone(),
            n: a.n,
            data,
        }
    }

    pub fn inverse(&self, s: &SpectralField) -> Field {
        let nt = s.grid.transverse_points();
        let mut out = Field::zeros(&s.grid, s.n);
        let mut buf = vec![Complex64::new(0.0, 0.0); nt];
        for (coef, dst) in s.data.chunks(nt).zip(out.data.chunks_mut(nt)) {
            buf.copy_from_slice(coef);
            self.inverse_row(&mut buf, dst);
        }
        out
    }
}

/// Transverse Fourier coefficients v̂(x, ξ) with the normalisation
/// |𝕋|^{−(d−1)}∫e^{−2πi⟨y,ξ⟩/|𝕋|}v dy. Mode order follows the FFT
/// (see [`Grid::mode`]).
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: Grid,
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl SpectralField {
    pub fn at(&self, c: usize, i: usize, mode: usize) -> Complex64 {
        let nt = self.grid.transverse_points();
        self.data[(c * self.grid.nodes() + i) * nt + mode]
    }
}

pub fn transverse_fft(a: &Field) -> Result<SpectralField> {
    Ok(TransverseFft::new(&a.grid)?.forward(a))
}

pub fn transverse_ifft(s: &SpectralField) -> Result<Field> {
    Ok(TransverseFft::new(&s.grid)?.inverse(s))
}

/// Δ_y by spectral multiplication with −λ₁|ξ|²; zero when d = 1.
pub fn laplacian_y(a: &Field) -> Field {
    if a.grid.d == 1 {
        return Field::zeros(&a.grid, a.n);
    }
    let fft = TransverseFft::new(&a.grid).expect("d >= 2");
    let mut s = fft.forward(a);
    let nt = a.grid.transverse_points();
    let l1 = a.grid.lambda1();
    for (k, v) in s.data.iter_mut().enumerate() {
        *v *= -l1 * a.grid.mode_sq(k % nt);
    }
    fft.inverse(&s)
}

/// Discrete H^k norm, k ∈ {0, 1, 2}: Σ_{|α|≤k}‖∂^α a‖² with x-derivatives
/// from the stencils (one-sided at x = ±L) and y-derivatives spectral.
pub fn sobolev_norm(a: &Field, k: usize) -> Result<f64> {
    if k > 2 {
        return Err(Error::Parameter(format!("Sobolev index must be 0, 1 or 2, got {k}")));
    }
    Ok(sobolev_norm_sq(a, k, None).sqrt())
}

/// Squared H^k norm; `fft` may be supplied to reuse plans.
pub fn sobolev_norm_sq(a: &Field, k: usize, fft: Option<&TransverseFft>) -> f64 {
    let g = &a.grid;
    let nodes = g.nodes();
    if k == 0 {
        return dot_unchecked(a, a);
    }
    if g.d == 1 {
        let mut total = dot_unchecked(a, a);
        let mut d = Field::zeros(g, a.n);
        for order in 1..=k {
            deriv_x_into(a, order, &mut d);
            total += dot_unchecked(&d, &d);
        }
        return total;
    }
    let owned;
    let fft = match fft {
        Some(f) => f,
        None => {
            owned = TransverseFft::new(g).expect("d >= 2");
            &owned
        }
    };
    let s = fft.forward(a);
    let nt = g.transverse_points();
    let w0 = 2.0 * PI / g.torus;
    let mut line = vec![Complex64::new(0.0, 0.0); nodes];
    let mut d1 = vec![Complex64::new(0.0, 0.0); nodes];
    let mut d2 = vec![Complex64::new(0.0, 0.0); nodes];
    let mut total = 0.0;
    for c in 0..a.n {
        for m in 0..nt {
            for i in 0..nodes {
                line[i] = s.data[(c * nodes + i) * nt + m];
            }
            let xi = g.mode(m);
            let (o1, o2) = ((xi[0] as f64 * w0).powi(2), (xi[1] as f64 * w0).powi(2));
            // Σ_{|β|=b} ω^{2β} over transverse multi-indices
            let wb = [1.0, o1 + o2, o1 * o1 + o1 * o2 + o2 * o2];
            let norm_line = |v: &[Complex64]| -> f64 {
                v.iter().enumerate().map(|(i, z)| g.wx(i) * z.norm_sqr()).sum()
            };
            let n0 = norm_line(&line);
            deriv_line_complex(g, &line, 1, &mut d1);
            let n1 = norm_line(&d1);
            let n2 = if k >= 2 {
                deriv_line_complex(g, &line, 2, &mut d2);
                norm_line(&d2)
            } else {
                0.0
            };
            // multi-indices (a, β) with a x-derivatives and |β| = b ≤ k − a
            let mut acc: f64 = wb[..=k].iter().map(|w| w * n0).sum();
            acc += wb[..k].iter().map(|w| w * n1).sum::<f64>();
            total += acc + n2;
        }
    }
    total * g.torus_measure()
}

/// Interpolation scheme behind [`shift`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftScheme {
    /// Four-point Lagrange interpolation.
    Cubic,
    /// Eight-point Lagrange interpolation.
    #[default]
    Lagrange8,
    /// Fourier phase shift of the odd extension after removing the linear
    /// trend between the endpoint values.
    Spectral,
}

/// T_δ a (x, y) = a(x − δ, y); samples from outside [−L, L] take the nearest
/// boundary value.
pub fn shift(a: &Field, delta: f64, scheme: ShiftScheme) -> Result<Field> {
    let g = &a.grid;
    if !(delta.abs() < g.l) {
        return Err(Error::ShiftRange { delta, l: g.l });
    }
    if delta == 0.0 {
        return Ok(a.clone());
    }
    match scheme {
        ShiftScheme::Cubic => Ok(shift_lagrange(a, delta, 4)),
        ShiftScheme::Lagrange8 => Ok(shift_lagrange(a, delta, 8)),
        ShiftScheme::Spectral => Ok(shift_spectral(a, delta)),
    }
}

/// Interpolation weights for sampling at x_i − δ on every node i.
pub(crate) struct ShiftPlan {
    /// For each node: first source index and weights (len = points); a single
    /// weight 1 when the sample falls outside the domain.
    rows: Vec<(usize, Vec<f64>)>,
}

impl ShiftPlan {
    pub(crate) fn new(g: &Grid, delta: f64, points: usize) -> Self {
        let dx = g.dx();
        let last = g.nx;
        let rows = (0..g.nodes())
            .map(|i| {
                let s = i as f64 - delta / dx;
                if s <= 0.0 {
                    return (0, vec![1.0]);
                }
                if s >= last as f64 {
                    return (last, vec![1.0]);
                }
                let fl = s.floor();
                let frac = s - fl;
                if frac == 0.0 {
                    return (fl as usize, vec![1.0]);
                }
                let half = points / 2;
                let base = (fl as i64 - (half as i64 - 1)).clamp(0, (last + 1 - points) as i64) as usize;
                let t = s - base as f64;
                let mut w = vec![1.0; points];
                for (k, wk) in w.iter_mut().enumerate() {
                    for m in 0..points {
                        if m != k {
                            *wk *= (t - m as f64) / (k as f64 - m as f64);
                        }
                    }
                }
                (base, w)
            })
            .collect();
        Self { rows }
    }

    pub(crate) fn apply(&self, a: &Field) -> Field {
        let g = &a.grid;
        let nt = g.transverse_points();
        let mut out = Field::zeros(g, a.n);
        for c in 0..a.n {
            let src = a.component(c);
            let dst = out.component_mut(c);
            for (i, (start, w)) in self.rows.iter().enumerate() {
                let row = &mut dst[i * nt..(i + 1) * nt];
                for (k, &wk) in w.iter().enumerate() {
                    let s = &src[(start + k) * nt..(start + k + 1) * nt];
                    for (r, v) in row.iter_mut().zip(s) {
                        *r += wk * v;
                    }
                }
            }
        }
        out
    }
}

fn shift_lagrange(a: &Field, delta: f64, points: usize) -> Field {
    ShiftPlan::new(&a.grid, delta, points).apply(a)
}

fn shift_spectral(a: &Field, delta: f64) -> Field {
    let g = &a.grid;
    let nodes = g.nodes();
    let nt = g.transverse_points();
    let n = g.nx;
    let m = 2 * n;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let period = 2.0 * g.l * 2.0;
    let mut out = Field::zeros(g, a.n);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut line = vec![0.0; nodes];
    for c in 0..a.n {
        for j in 0..nt {
            for i in 0..nodes {
                line[i] = a.at(c, i, j);
            }
            let (a0, an) = (line[0], line[n]);
            let ramp = |x: f64| a0 + (an - a0) * (x + g.l) / (2.0 * g.l);
            for i in 0..nodes {
                buf[i] = Complex64::new(line[i] - ramp(g.x(i)), 0.0);
            }
            for i in 1..n {
                buf[n + i] = -buf[n - i];
            }
            fwd.process(&mut buf);
            for (k, z) in buf.iter_mut().enumerate() {
                let kk = if k > m / 2 { k as f64 - m as f64 } else { k as f64 };
                let w = 2.0 * PI * kk / period;
                *z *= Complex64::from_polar(1.0 / m as f64, -w * delta);
            }
            inv.process(&mut buf);
            for i in 0..nodes {
                let xs = g.x(i) - delta;
                let v = if xs <= -g.l {
                    a0
                } else if xs >= g.l {
                    an
                } else {
                    buf[i].re + ramp(xs)
                };
                out.set(c, i, j, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(l: f64, t: f64) -> Grid {
        Grid::new(l, 64, 2, t, 16).unwrap()
    }

    #[test]
    fn constant_inner_product_is_domain_measure() {
        let g = Grid::new(1.0, 16, 2, 1.0, 8).unwrap();
        let one = Field::from_fn(&g, 1, |_, _, _| 1.0);
        assert!((inner_product_l2(&one, &one).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn second_derivative_of_quadratic() {
        let g = Grid::line(3.0, 32).unwrap();
        let a = Field::from_fn(&g, 1, |_, x, _| x * x);
        let d = deriv_x(&a, 2).unwrap();
        for i in 0..g.nodes() {
            assert!((d.at(0, i, 0) - 2.0).abs() < 1e-8, "node {i}: {}", d.at(0, i, 0));
        }
    }

    #[test]
    fn transverse_modes_of_cosine() {
        let g = grid2(2.0, 3.0);
        let a = Field::from_fn(&g, 1, |_, _, y| (2.0 * PI * y[0] / 3.0).cos());
        let s = transverse_fft(&a).unwrap();
        for m in 0..16 {
            let v = s.at(0, 5, m);
            let want = if g.mode(m)[0].abs() == 1 { 0.5 } else { 0.0 };
            assert!((v - Complex64::new(want, 0.0)).norm() < 1e-12);
        }
        let back = transverse_ifft(&s).unwrap();
        assert!(back.sub(&a).sup_norm() < 1e-12);
    }

    #[test]
    fn fft_rejects_one_dimension() {
        let g = Grid::line(1.0, 16).unwrap();
        assert!(matches!(transverse_fft(&Field::zeros(&g, 1)), Err(Error::NoTransverse)));
    }

    #[test]
    fn laplacian_y_eigenfunction() {
        let g = grid2(1.0, 1.7);
        let a = Field::from_fn(&g, 1, |_, x, y| (1.0 + x) * (2.0 * PI * y[0] / 1.7).sin());
        let mut want = a.clone();
        want.scale(-g.lambda1());
        assert!(laplacian_y(&a).sub(&want).sup_norm() < 1e-10);
    }

    #[test]
    fn h1_norm_of_transverse_sine() {
        let g = Grid::new(1.0, 64, 2, 1.0, 16).unwrap();
        let a = Field::from_fn(&g, 1, |_, _, y| (2.0 * PI * y[0]).sin());
        let h1 = sobolev_norm(&a, 1).unwrap();
        assert!((h1 - (1.0 + 4.0 * PI * PI).sqrt()).abs() < 1e-9, "{h1}");
    }

    #[test]
    fn h1_norm_of_gaussian_cosine() {
        let t = 2.5;
        let g = Grid::new(8.0, 512, 2, t, 16).unwrap();
        let a = Field::from_fn(&g, 1, |_, x, y| (-x * x).exp() * (2.0 * PI * y[0] / t).cos());
        let i0 = (PI / 2.0).sqrt();
        let i2 = 4.0 * (PI / 2.0).sqrt() / 4.0;
        let want = t / 2.0 * (i0 + i2 + g.lambda1() * i0);
        let got = sobolev_norm(&a, 1).unwrap().powi(2);
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    #[test]
    fn h2_counts_mixed_derivatives() {
        // a = cos(y1)cos(y2) on 𝕋² with |𝕋| = 2π; ω = (±1, ±1)
        let g = Grid::new(2.0, 64, 3, 2.0 * PI, 8).unwrap();
        let a = Field::from_fn(&g, 1, |_, _, y| y[0].cos() * y[1].cos());
        let l2 = sobolev_norm(&a, 0).unwrap().powi(2);
        let h2 = sobolev_norm(&a, 2).unwrap().powi(2);
        // 1 + (ω1²+ω2²) + (ω1⁴+ω1²ω2²+ω2⁴) = 1 + 2 + 3
        assert!((h2 / l2 - 6.0).abs() < 1e-10, "{}", h2 / l2);
    }

    #[test]
    fn shift_is_exact_at_grid_multiples() {
        let g = Grid::line(4.0, 64).unwrap();
        let a = Field::from_fn(&g, 1, |_, x, _| x.sin());
        let s = shift(&a, 3.0 * g.dx(), ShiftScheme::Lagrange8).unwrap();
        for i in 3..g.nodes() {
            assert!((s.at(0, i, 0) - a.at(0, i - 3, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_round_trip_all_schemes() {
        let g = Grid::line(16.0, 512).unwrap();
        let a = Field::from_fn(&g, 1, |_, x, _| (-x * x / 8.0).exp() * (x / 2.0).tanh());
        let d = 0.37 * g.dx();
        for (scheme, tol) in [(ShiftScheme::Cubic, 1e-5), (ShiftScheme::Lagrange8, 1e-7), (ShiftScheme::Spectral, 1e-8)] {
            let back = shift(&shift(&a, d, scheme).unwrap(), -d, scheme).unwrap();
            let err = back.sub(&a).sup_norm();
            assert!(err < tol, "{scheme:?}: {err}");
        }
    }

    #[test]
    fn shift_out_of_range() {
        let g = Grid::line(1.0, 16).unwrap();
        assert!(shift(&Field::zeros(&g, 1), 1.0, ShiftScheme::Cubic).is_err());
    }
}
