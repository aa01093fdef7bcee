//! Reaction terms f, noise amplitudes g, the correction h, and the preset
//! catalogue.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::Field;

/// Pointwise map from a state in ℝⁿ into a flat output buffer.
pub type PointMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A reaction–diffusion system du = [DΔu + f(u) + σ²h(u)]dt + σg(u)dW.
///
/// Buffers are row-major: Df is n×n, g is n×m, Dg stores ∂g_ij/∂u_k at
/// `(i·m + j)·n + k`.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub u_minus: Vec<f64>,
    pub u_plus: Vec<f64>,
    /// Diagonal of the diffusion matrix D.
    pub diffusion: Vec<f64>,
    /// 0 for Itô, 1 for Stratonovich.
    pub mu: f64,
    /// Advertised global Lipschitz constant of f, when a cut-off provides one.
    pub lipschitz_f: Option<f64>,
    /// Whether a spectral gap has been confirmed for this model.
    pub gap_verified: bool,
    f: PointMap,
    df: PointMap,
    g: PointMap,
    dg: PointMap,
    h: PointMap,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("u_minus", &self.u_minus)
            .field("u_plus", &self.u_plus)
            .field("mu", &self.mu)
            .finish()
    }
}

fn zero_map() -> PointMap {
    Arc::new(|_, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}

/// Quintic smoothstep on [0, 1], clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
}

pub fn smoothstep_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        u_minus: Vec<f64>,
        u_plus: Vec<f64>,
        f: PointMap,
        df: PointMap,
        g: PointMap,
        dg: PointMap,
    ) -> Result<Self> {
        if u_minus.len() != n || u_plus.len() != n {
            return Err(Error::Model("rest states must have n components".into()));
        }
        Ok(Self {
            name: name.into(),
            n,
            m,
            u_minus,
            u_plus,
            diffusion: vec![1.0; n],
            mu: 0.0,
            lipschitz_f: None,
            gap_verified: true,
            f,
            df,
            g,
            dg,
            h: zero_map(),
        })
    }

    #[inline]
    pub fn f(&self, u: &[f64], out: &mut [f64]) {
        (self.f)(u, out)
    }

    #[inline]
    pub fn df(&self, u: &[f64], out: &mut [f64]) {
        (self.df)(u, out)
    }

    #[inline]
    pub fn g(&self, u: &[f64], out: &mut [f64]) {
        (self.g)(u, out)
    }

    #[inline]
    pub fn dg(&self, u: &[f64], out: &mut [f64]) {
        (self.dg)(u, out)
    }

    #[inline]
    pub fn h(&self, u: &[f64], out: &mut [f64]) {
        (self.h)(u, out)
    }

    /// Whether D = I.
    pub fn unit_diffusion(&self) -> bool {
        self.diffusion.iter().all(|&d| d == 1.0)
    }

    /// Replaces g and Dg by λg and λDg; h is rebuilt if it was a
    /// Stratonovich correction.
    pub fn with_noise_scale(mut self, lambda: f64) -> Self {
        let (g, dg) = (self.g.clone(), self.dg.clone());
        self.g = Arc::new(move |u, out| {
            g(u, out);
            out.iter_mut().for_each(|v| *v *= lambda);
        });
        self.dg = Arc::new(move |u, out| {
            dg(u, out);
            out.iter_mut().for_each(|v| *v *= lambda);
        });
        self
    }

    pub fn without_noise(mut self) -> Self {
        self.g = zero_map();
        self.dg = zero_map();
        self.h = zero_map();
        self
    }

    /// Supplies h directly (needed for Stratonovich systems beyond n = m = 1).
    pub fn with_h(mut self, h: PointMap, mu: f64) -> Self {
        self.h = h;
        self.mu = mu;
        self
    }

    pub fn with_diffusion(mut self, d: Vec<f64>) -> Result<Self> {
        if d.len() != self.n || d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Model("diffusion coefficients must be n positive numbers".into()));
        }
        self.diffusion = d;
        Ok(self)
    }

    /// Pointwise application over a field with n components.
    fn apply(&self, map: &PointMap, u: &Field, out_dim: usize, what: &str) -> Result<Field> {
        if u.n() != self.n {
            return Err(Error::Shape(format!("field has {} components, model {}", u.n(), self.n)));
        }
        let g = u.grid();
        let per = g.nodes() * g.transverse_points();
        let mut out = Field::zeros(g, out_dim);
        let mut s = vec![0.0; self.n];
        let mut r = vec![0.0; out_dim];
        for p in 0..per {
            for c in 0..self.n {
                s[c] = u.values()[c * per + p];
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{what} input")));
            }
            map(&s, &mut r);
            for c in 0..out_dim {
                out.values_mut()[c * per + p] = r[c];
            }
        }
        Ok(out)
    }

    pub fn eval_f(&self, u: &Field) -> Result<Field> {
        self.apply(&self.f, u, self.n, "f")
    }

    /// g(u) as a field with n·m components, entry (i, j) at component i·m + j.
    pub fn eval_g(&self, u: &Field) -> Result<Field> {
        self.apply(&self.g, u, self.n * self.m, "g")
    }

    pub fn eval_h(&self, u: &Field) -> Result<Field> {
        self.apply(&self.h, u, self.n, "h")
    }
}

/// Sets h(u) = ½·μ·q0·g′(u)g(u). Only the scalar case is covered; larger
/// systems must supply h through [`ModelSpec::with_h`].
pub fn stratonovich_correction(model: ModelSpec, q0: f64, mu: f64) -> Result<ModelSpec> {
    let mut model = model;
    model.mu = mu;
    if mu == 0.0 {
        model.h = zero_map();
        return Ok(model);
    }
    if model.n != 1 || model.m != 1 {
        return Err(Error::Model(format!(
            "Stratonovich correction needs n = m = 1 (got n = {}, m = {}); supply h explicitly",
            model.n, model.m
        )));
    }
    let (g, dg) = (model.g.clone(), model.dg.clone());
    model.h = Arc::new(move |u, out| {
        let (mut gv, mut dv) = ([0.0], [0.0]);
        g(u, &mut gv);
        dg(u, &mut dv);
        out[0] = 0.5 * mu * q0 * dv[0] * gv[0];
    });
    Ok(model)
}

/// Nagumo: f(u) = u(1−u)(u−a), g(u) = u(1−u); front from 1 (x → −∞) to 0.
pub fn nagumo(a: f64) -> ModelSpec {
    let f: PointMap = Arc::new(move |u, o| o[0] = u[0] * (1.0 - u[0]) * (u[0] - a));
    let df: PointMap = Arc::new(move |u, o| {
        let x = u[0];
        o[0] = -3.0 * x * x + 2.0 * (1.0 + a) * x - a
    });
    let g: PointMap = Arc::new(|u, o| o[0] = u[0] * (1.0 - u[0]));
    let dg: PointMap = Arc::new(|u, o| o[0] = 1.0 - 2.0 * u[0]);
    ModelSpec::new(format!("nagumo(a={a})"), 1, 1, vec![1.0], vec![0.0], f, df, g, dg).expect("valid preset")
}

/// Radius beyond which the Allen–Cahn cut-off starts.
pub const ALLEN_CAHN_R: f64 = 2.0;

fn allen_cahn_parts(u: f64) -> (f64, f64) {
    let r = ALLEN_CAHN_R;
    let x = u.abs();
    let sgn = u.signum();
    let nat = |x: f64| (x - x * x * x, 1.0 - 3.0 * x * x);
    let (nr, dnr) = nat(r);
    let (nv, dnv) = nat(x);
    let (lv, dlv) = (nr + dnr * (x - r), dnr);
    let t = x - r;
    let (s, ds) = (smoothstep(t), smoothstep_deriv(t));
    let fv = (1.0 - s) * nv + s * lv;
    let dfv = (1.0 - s) * dnv + s * dlv + ds * (lv - nv);
    (sgn * fv, dfv)
}

/// Allen–Cahn f(u) = u − u³, blended into its tangent line on |u| ∈ [2, 3];
/// g(u) = 1 − u² switched off on the same interval. Front from 1 to −1.
pub fn allen_cahn_cutoff() -> ModelSpec {
    let r = ALLEN_CAHN_R;
    let f: PointMap = Arc::new(|u, o| o[0] = allen_cahn_parts(u[0]).0);
    let df: PointMap = Arc::new(|u, o| o[0] = allen_cahn_parts(u[0]).1);
    let g: PointMap = Arc::new(move |u, o| {
        let x = u[0];
        o[0] = (1.0 - x * x) * (1.0 - smoothstep(x.abs() - r));
    });
    let dg: PointMap = Arc::new(move |u, o| {
        let x = u[0];
        let t = x.abs() - r;
        o[0] = -2.0 * x * (1.0 - smoothstep(t)) - (1.0 - x * x) * smoothstep_deriv(t) * x.signum();
    });
    let mut m = ModelSpec::new("allen_cahn_cutoff", 1, 1, vec![1.0], vec![-1.0], f, df, g, dg).expect("valid preset");
    // |f′| ≤ 3·3² − 1 + 11 + max s′·max|l − n| = 26 + 11 + (15/8)·7 on [2, 3]
    m.lipschitz_f = Some(51.0);
    m
}

/// Parameters of the photosensitive Oregonator preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OregonatorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eps: f64,
}

impl Default for OregonatorParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            gamma: 0.02,
            delta: 0.01,
            eps: 0.1,
        }
    }
}

/// Photosensitive Oregonator with light-intensity noise on β.
///
/// The reaction is cut off below u = −γ/2 (where the rational term is
/// singular) and beyond u = 3; the noise is switched off within 0.05 of the
/// homogeneous equilibrium so that it does not move the background state.
/// The homogeneous equilibrium is unique for the defaults, so both rest
/// states coincide and `gap_verified` stays false.
pub fn oregonator(p: OregonatorParams) -> Result<ModelSpec> {
    let OregonatorParams {
        alpha,
        beta,
        gamma,
        delta,
        eps,
    } = p;
    if [alpha, beta, gamma, delta, eps].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Model("Oregonator parameters must be positive".into()));
    }
    let lower = move |u: f64| smoothstep((u + gamma / 2.0) / (gamma / 2.0));
    let dlower = move |u: f64| smoothstep_deriv((u + gamma / 2.0) / (gamma / 2.0)) / (gamma / 2.0);
    let upper = move |u: f64| 1.0 - smoothstep(u - 3.0);
    let dupper = move |u: f64| -smoothstep_deriv(u - 3.0);
    let chi = move |u: f64| lower(u) * upper(u);
    let dchi = move |u: f64| dlower(u) * upper(u) + lower(u) * dupper(u);
    let frac = move |u: f64| (u - gamma) / (u + gamma);
    let dfrac = move |u: f64| 2.0 * gamma / ((u + gamma) * (u + gamma));
    let raw = move |u: f64, v: f64| (u - u * u - (alpha * v + beta) * frac(u)) / eps;

    // homogeneous equilibrium u = v of the uncut system
    let mut ustar = 0.1;
    for _ in 0..100 {
        let r = raw(ustar, ustar);
        let dr = (1.0 - 2.0 * ustar - alpha * frac(ustar) - (alpha * ustar + beta) * dfrac(ustar)) / eps;
        let step = r / dr;
        ustar -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    let width = 0.05;
    let pi = move |u: f64| smoothstep(((u - ustar).abs() / width - 1.0).max(0.0));
    let dpi = move |u: f64| {
        let t = (u - ustar).abs() / width - 1.0;
        if t <= 0.0 {
            0.0
        } else {
            smoothstep_deriv(t) * (u - ustar).signum() / width
        }
    };

    let f: PointMap = Arc::new(move |s, o| {
        let (u, v) = (s[0], s[1]);
        let c = chi(u);
        o[0] = if c == 0.0 { 0.0 } else { raw(u, v) * c };
        o[1] = u - v;
    });
    let df: PointMap = Arc::new(move |s, o| {
        let (u, v) = (s[0], s[1]);
        let c = chi(u);
        if c == 0.0 {
            o[0] = 0.0;
            o[1] = 0.0;
        } else {
            let du = (1.0 - 2.0 * u - (alpha * v + beta) * dfrac(u)) / eps;
            o[0] = du * c + raw(u, v) * dchi(u);
            o[1] = -alpha * frac(u) / eps * c;
        }
        o[2] = 1.0;
        o[3] = -1.0;
    });
    let g: PointMap = Arc::new(move |s, o| {
        let u = s[0];
        let l = lower(u);
        o[0] = if l == 0.0 { 0.0 } else { frac(u) * pi(u) * l };
        o[1] = 0.0;
    });
    let dg: PointMap = Arc::new(move |s, o| {
        let u = s[0];
        let l = lower(u);
        o[0] = if l == 0.0 {
            0.0
        } else {
            dfrac(u) * pi(u) * l + frac(u) * dpi(u) * l + frac(u) * pi(u) * dlower(u)
        };
        o[1] = 0.0;
        o[2] = 0.0;
        o[3] = 0.0;
    });
    let name = format!("oregonator(alpha={alpha},beta={beta},gamma={gamma},delta={delta},eps={eps})");
    let mut m = ModelSpec::new(name, 2, 1, vec![ustar, ustar], vec![ustar, ustar], f, df, g, dg)?;
    m.diffusion = vec![1.0, delta];
    m.gap_verified = false;
    Ok(m)
}

/// Looks up a preset by name; parameters not listed take their defaults.
pub fn preset(name: &str, params: &[(&str, f64)]) -> Result<ModelSpec> {
    let get = |k: &str, def: f64| params.iter().find(|(n, _)| *n == k).map(|p| p.1).unwrap_or(def);
    match name {
        "nagumo" => Ok(nagumo(get("a", 0.25))),
        "allen_cahn_cutoff" => Ok(allen_cahn_cutoff()),
        "oregonator" => {
            let d = OregonatorParams::default();
            oregonator(OregonatorParams {
                alpha: get("alpha", d.alpha),
                beta: get("beta", d.beta),
                gamma: get("gamma", d.gamma),
                delta: get("delta", d.delta),
                eps: get("eps", d.eps),
            })
        }
        other => Err(Error::Model(format!(
            "unknown preset '{other}' (known: nagumo, allen_cahn_cutoff, oregonator)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(m: &ModelSpec, which: char, u: f64) -> f64 {
        let mut o = [0.0; 4];
        match which {
            'f' => m.f(&[u], &mut o),
            'd' => m.df(&[u], &mut o),
            'g' => m.g(&[u], &mut o),
            'D' => m.dg(&[u], &mut o),
            _ => m.h(&[u], &mut o),
        }
        o[0]
    }

    #[test]
    fn preset_values() {
        let n = nagumo(0.25);
        assert_eq!(scalar(&n, 'f', 0.5), 0.0625);
        assert_eq!(scalar(&n, 'g', 0.5), 0.25);
        let ac = allen_cahn_cutoff();
        assert_eq!(scalar(&ac, 'f', 0.5), 0.375);
        assert_eq!(scalar(&ac, 'f', 1.0), 0.0);
        assert_eq!(scalar(&ac, 'f', -1.0), 0.0);
    }

    #[test]
    fn stratonovich_values() {
        let m = stratonovich_correction(nagumo(0.25), 1.0, 1.0).unwrap();
        assert_eq!(scalar(&m, 'h', 0.5), 0.0);
        assert!((scalar(&m, 'h', 0.25) - 0.046875).abs() < 1e-15);
        let ito = stratonovich_correction(nagumo(0.25), 1.0, 0.0).unwrap();
        assert_eq!(scalar(&ito, 'h', 0.25), 0.0);
        assert!(stratonovich_correction(oregonator(OregonatorParams::default()).unwrap(), 1.0, 1.0).is_err());
    }

    #[test]
    fn allen_cahn_regions() {
        let ac = allen_cahn_cutoff();
        for &u in &[1.5, 2.0, -1.9] {
            assert_eq!(scalar(&ac, 'f', u), u - u * u * u);
        }
        let (a, b) = (scalar(&ac, 'f', 4.0), scalar(&ac, 'f', 5.0));
        let (c, d) = (scalar(&ac, 'f', 6.0), scalar(&ac, 'f', 7.0));
        assert!(((b - a) - (d - c)).abs() < 1e-12, "linear beyond 3");
    }

    #[test]
    fn oregonator_shape() {
        let m = oregonator(OregonatorParams::default()).unwrap();
        assert_eq!((m.n, m.m), (2, 1));
        assert!(!m.gap_verified);
        let mut o = [0.0; 2];
        m.g(&[0.5, 0.3], &mut o);
        assert!(o[0] != 0.0 && o[1] == 0.0);
        m.f(&m.u_minus.clone(), &mut o);
        assert!(o[0].abs() < 1e-12 && o[1].abs() < 1e-14);
    }

    #[test]
    fn unknown_preset() {
        assert!(matches!(preset("fitzhugh", &[]), Err(Error::Model(_))));
    }
}
