//! Monte Carlo statistics over trajectory records and the quadratures they
//! are compared against.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fields::{self, Field};
use crate::models::{stratonovich_correction, ModelSpec};
use crate::noise::{self, NoiseKernel};
use crate::rng;
use crate::sim::TrajectoryRecord;
use crate::util;

/// c₀;₂ split into its three terms.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct C02Terms {
    /// −½q_avg⟨Φ₀″, ψ⟩⟨g Q_wv gᵀψ, ψ⟩.
    pub curvature: f64,
    /// −q_avg⟨g Q_wv gᵀψ, ψ′⟩.
    pub transport: f64,
    /// −⟨h(Φ₀), ψ⟩ = −(μ/2)q(0)⟨g′(Φ₀)g(Φ₀), ψ⟩.
    pub correction: f64,
    pub total: f64,
}

/// Second-order speed correction c₀;₂ by quadrature on the profile grid.
/// For n = m = 1 the correction term is built from g for the given μ;
/// otherwise the model's own h is used.
pub fn c02_theory(model: &ModelSpec, phi0: &Field, psi: &Field, kernel: &NoiseKernel, mu: f64) -> Result<C02Terms> {
    let g1 = phi0.grid();
    let red = if kernel.grid().d == 1 { kernel.clone() } else { kernel.reduced()? };
    let w = noise::g_transpose_psi(model, phi0, psi)?;
    let qw = red.apply_q_wv(&w)?;
    let v = fields::inner_product_l2(&qw, &w)?;
    // g Q_wv gᵀψ as an n-component profile
    let gv = model.eval_g(phi0)?;
    let nodes = g1.nodes();
    let mut gq = Field::zeros(g1, model.n);
    for a in 0..model.n {
        for j in 0..model.m {
            for i in 0..nodes {
                gq.values_mut()[a * nodes + i] += gv.values()[(a * model.m + j) * nodes + i] * qw.values()[j * nodes + i];
            }
        }
    }
    let d2 = fields::deriv_x(phi0, 2)?;
    let dpsi = fields::deriv_x(psi, 1)?;
    // `red` already carries q_avg in its component scale
    let curvature = -0.5 * fields::inner_product_l2(&d2, psi)? * v;
    let transport = -fields::inner_product_l2(&gq, &dpsi)?;
    let with_h = if model.n == 1 && model.m == 1 {
        stratonovich_correction(model.clone(), kernel.q0, mu)?
    } else {
        model.clone()
    };
    let correction = -fields::inner_product_l2(&with_h.eval_h(phi0)?, psi)?;
    Ok(C02Terms {
        curvature,
        transport,
        correction,
        total: curvature + transport + correction,
    })
}

/// Summary of phase statistics over an ensemble.
#[derive(Clone, Debug, Serialize)]
pub struct PhaseStats {
    pub n_used: usize,
    pub n_total: usize,
    /// Fraction of paths exiting before half the horizon.
    pub early_exit_fraction: f64,
    /// Set when more than 20% exit before half the horizon.
    pub censored: bool,
    /// OLS slope of Var[γ(t) − c_ref t] on the second half of the horizon.
    pub var_slope: f64,
    pub var_slope_ci: (f64, f64),
    /// Slope and R² of a fit through the origin on t ≥ 0.2T.
    pub var_slope_origin: f64,
    pub r2_origin: f64,
    /// Mean of (γ(T) − γ(0))/T.
    pub drift: f64,
    pub drift_ci: (f64, f64),
    pub times: Vec<f64>,
    pub variance: Vec<f64>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

struct Series {
    times: Vec<f64>,
    /// rows: paths; columns: γ(t) − c_ref t at `times`.
    dev: Vec<Vec<f64>>,
    drift: Vec<f64>,
}

fn variance_curve(s: &Series, idx: &[usize]) -> Vec<f64> {
    (0..s.times.len())
        .map(|k| {
            let col: Vec<f64> = idx.iter().map(|&p| s.dev[p][k]).collect();
            util::variance(&col)
        })
        .collect()
}

fn window(times: &[f64], from: f64) -> Vec<usize> {
    (0..times.len()).filter(|&k| times[k] >= from - 1e-12 && times[k] > 0.0).collect()
}

fn slope_second_half(times: &[f64], var: &[f64]) -> Result<f64> {
    let t_end = *times.last().expect("non-empty");
    let ks = window(times, 0.5 * t_end);
    let x: Vec<f64> = ks.iter().map(|&k| times[k]).collect();
    let y: Vec<f64> = ks.iter().map(|&k| var[k]).collect();
    Ok(util::ols(&x, &y).1)
}

fn percentile_ci(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let at = |q: f64| v[((q * (n - 1) as f64).round() as usize).min(n - 1)];
    (at(0.025), at(0.975))
}

/// Variance growth and drift of γ over the paths that reach the horizon.
/// Needs at least 50 records; bootstrap CIs use 1000 resamples drawn from
/// `seed`.
pub fn phase_statistics(records: &[TrajectoryRecord], c_ref: f64, seed: u64) -> Result<PhaseStats> {
    if records.len() < 50 {
        return Err(Error::TooFewSamples { need: 50, have: records.len() });
    }
    let times = records.iter().map(|r| &r.times).max_by_key(|t| t.len()).expect("non-empty").clone();
    let t_end = *times.last().ok_or_else(|| Error::Parameter("empty record".into()))?;
    let early = records.iter().filter(|r| r.exit_time < 0.5 * t_end).count();
    let survivors: Vec<&TrajectoryRecord> = records
        .iter()
        .filter(|r| r.times.len() == times.len() && (r.times.last() == Some(&t_end)))
        .collect();
    if survivors.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, have: survivors.len() });
    }
    let series = Series {
        dev: survivors
            .iter()
            .map(|r| r.times.iter().zip(&r.gamma).map(|(t, g)| g - c_ref * t).collect())
            .collect(),
        drift: survivors.iter().map(|r| (r.gamma[r.gamma.len() - 1] - r.gamma[0]) / t_end).collect(),
        times: times.clone(),
    };
    let all: Vec<usize> = (0..survivors.len()).collect();
    let variance = variance_curve(&series, &all);
    let var_slope = slope_second_half(&times, &variance)?;
    let ks = window(&times, 0.2 * t_end);
    let (x, y): (Vec<f64>, Vec<f64>) = ks.iter().map(|&k| (times[k], variance[k])).unzip();
    let (var_slope_origin, r2_origin) = util::ols_origin(&x, &y);
    let drift = util::mean(&series.drift);
    let mut r = rng::trajectory_rng(seed, u64::MAX);
    let n = survivors.len();
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut drifts = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
        slopes.push(slope_second_half(&times, &variance_curve(&series, &idx))?);
        drifts.push(idx.iter().map(|&i| series.drift[i]).sum::<f64>() / n as f64);
    }
    let early_exit_fraction = early as f64 / records.len() as f64;
    Ok(PhaseStats {
        n_used: n,
        n_total: records.len(),
        early_exit_fraction,
        censored: early_exit_fraction > 0.2,
        var_slope,
        var_slope_ci: percentile_ci(slopes),
        var_slope_origin,
        r2_origin,
        drift,
        drift_ci: percentile_ci(drifts),
        times,
        variance,
    })
}

/// Exact binomial interval. For x = 0 (x = n) the upper (lower) end is the
/// one-sided bound, which gives the rule of three, 1 − (α/2)^{1/n}·… ≈ 3/n.
pub fn clopper_pearson(x: usize, n: usize, level: f64) -> Result<(f64, f64)> {
    if n == 0 || x > n {
        return Err(Error::Parameter(format!("binomial interval needs 0 <= x <= n, n > 0 (x = {x}, n = {n})")));
    }
    let alpha = 1.0 - level;
    let (xf, nf) = (x as f64, n as f64);
    if x == 0 {
        return Ok((0.0, 1.0 - alpha.powf(1.0 / nf)));
    }
    if x == n {
        return Ok((alpha.powf(1.0 / nf), 1.0));
    }
    let lo = Beta::new(xf, nf - xf + 1.0).map_err(|e| Error::Parameter(e.to_string()))?.inverse_cdf(alpha / 2.0);
    let hi = Beta::new(xf + 1.0, nf - xf).map_err(|e| Error::Parameter(e.to_string()))?.inverse_cdf(1.0 - alpha / 2.0);
    Ok((lo, hi))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (util::mean(a), util::mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Spearman ρ and the one-sided p-value for ρ < 0: exact over all
/// permutations for up to 8 points, Student-t approximation beyond.
pub fn spearman_negative(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, have: x.len().min(y.len()) });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let rho = pearson(&rx, &ry);
    let n = x.len();
    if n <= 8 {
        let mut perm = ry.clone();
        let (mut count, mut total) = (0usize, 0usize);
        heap_permutations(&mut perm, n, &mut |p| {
            total += 1;
            if pearson(&rx, p) <= rho + 1e-12 {
                count += 1;
            }
        });
        return Ok((rho, count as f64 / total as f64));
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho).max(1e-300)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok((rho, dist.cdf(t)))
}

fn heap_permutations(a: &mut [f64], k: usize, visit: &mut impl FnMut(&[f64])) {
    if k <= 1 {
        visit(a);
        return;
    }
    for i in 0..k - 1 {
        heap_permutations(a, k - 1, visit);
        if k.is_multiple_of(2) {
            a.swap(i, k - 1);
        } else {
            a.swap(0, k - 1);
        }
    }
    heap_permutations(a, k - 1, visit);
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitRow {
    pub sigma: f64,
    pub n: usize,
    pub exits: usize,
    pub p_hat: f64,
    pub ci: (f64, f64),
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitCurve {
    pub eta: f64,
    pub horizon: f64,
    pub rows: Vec<ExitRow>,
    /// Slope of log P̂ against 1/σ² over rows with 0 < P̂ < 1 (NaN if fewer
    /// than two such rows).
    pub slope: f64,
    /// −slope/η.
    pub mu_fit: f64,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    /// Largest μ with P̂ ≤ 2T·exp(−μη/σ²) at every row.
    pub mu_envelope: f64,
}

/// P̂(t_st < T) per σ with exact intervals, the log-linear fit in 1/σ² and
/// the envelope exponent. `ensembles` pairs σ with its records.
pub fn exit_curve(ensembles: &[(f64, Vec<TrajectoryRecord>)], eta: f64, horizon: f64) -> Result<ExitCurve> {
    if ensembles.is_empty() || ensembles.iter().any(|(_, r)| r.is_empty()) {
        return Err(Error::Design("exit sweep needs at least one trajectory per sigma".into()));
    }
    if ensembles.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Parameter("sigma list must increase strictly".into()));
    }
    let mut rows = Vec::with_capacity(ensembles.len());
    for (sigma, recs) in ensembles {
        let n = recs.len();
        let exits = recs.iter().filter(|r| r.exited_before(horizon + 1e-12)).count();
        rows.push(ExitRow {
            sigma: *sigma,
            n,
            exits,
            p_hat: exits as f64 / n as f64,
            ci: clopper_pearson(exits, n, 0.95)?,
        });
    }
    if rows.iter().all(|r| r.exits == 0) {
        return Err(Error::Design(format!("no path exits at any sigma; lower eta below {eta}")));
    }
    if rows.iter().all(|r| r.exits == r.n) {
        return Err(Error::Design(format!("every path exits at every sigma; raise eta above {eta}")));
    }
    let inner: Vec<&ExitRow> = rows.iter().filter(|r| r.p_hat > 0.0 && r.p_hat < 1.0).collect();
    let slope = if inner.len() >= 2 {
        let x: Vec<f64> = inner.iter().map(|r| 1.0 / (r.sigma * r.sigma)).collect();
        let y: Vec<f64> = inner.iter().map(|r| r.p_hat.ln()).collect();
        util::ols(&x, &y).1
    } else {
        f64::NAN
    };
    let (spearman_rho, spearman_p) = if rows.len() >= 3 {
        let x: Vec<f64> = rows.iter().map(|r| 1.0 / (r.sigma * r.sigma)).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.p_hat).collect();
        spearman_negative(&x, &y)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let mu_envelope = rows
        .iter()
        .filter(|r| r.p_hat > 0.0)
        .map(|r| r.sigma * r.sigma / eta * (2.0 * horizon / r.p_hat).ln())
        .fold(f64::INFINITY, f64::min);
    Ok(ExitCurve {
        eta,
        horizon,
        rows,
        slope,
        mu_fit: -slope / eta,
        spearman_rho,
        spearman_p,
        mu_envelope,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftFit {
    pub c0: f64,
    /// Slope of drift against σ², the Monte Carlo c₀;₂.
    pub c02: f64,
    /// Half width of the 95% interval of c₀;₂ (NaN with two points).
    pub c02_half_width: f64,
    pub r2: f64,
    /// Residuals change sign more than once in σ order.
    pub fit_warning: bool,
}

/// Fits drift = c₀ + c₀;₂σ² to (σ, drift) pairs.
pub fn sigma_drift_sweep(points: &[(f64, f64)]) -> Result<DriftFit> {
    if points.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, have: points.len() });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0 * p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (c0, c02, r2) = util::ols(&x, &y);
    let res: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| yi - c0 - c02 * xi).collect();
    let n = points.len();
    let half = if n > 2 {
        let mx = util::mean(&x);
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        let s2 = res.iter().map(|r| r * r).sum::<f64>() / (n - 2) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).map_err(|e| Error::Parameter(e.to_string()))?;
        t.inverse_cdf(0.975) * (s2 / sxx).sqrt()
    } else {
        f64::NAN
    };
    let tol = 1e-12 * y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let signs: Vec<f64> = res.iter().filter(|r| r.abs() > tol).map(|r| r.signum()).collect();
    let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
    Ok(DriftFit {
        c0,
        c02,
        c02_half_width: half,
        r2,
        fit_warning: n > 3 && changes > 1 && r2 < 0.9,
    })
}

/// Paired drift difference over common random numbers: mean and 95%
/// half width of (γ_b(T) − γ_a(T))/T path by path.
pub fn paired_drift_difference(a: &[TrajectoryRecord], b: &[TrajectoryRecord]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::TooFewSamples { need: 2, have: a.len().min(b.len()) });
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let tx = *x.times.last().expect("non-empty");
            let ty = *y.times.last().expect("non-empty");
            (y.gamma[y.gamma.len() - 1] - y.gamma[0]) / ty - (x.gamma[x.gamma.len() - 1] - x.gamma[0]) / tx
        })
        .collect();
    let n = d.len() as f64;
    let m = util::mean(&d);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok((m, t.inverse_cdf(0.975) * (util::variance(&d) / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_rule_of_three() {
        let (lo, hi) = clopper_pearson(0, 100, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi * 100.0 - 3.0).abs() < 0.05);
        let (lo, hi) = clopper_pearson(5, 20, 0.95).unwrap();
        // reference values from the beta quantiles
        assert!((lo - 0.0865).abs() < 1e-3 && (hi - 0.4910).abs() < 1e-3, "{lo} {hi}");
    }

    #[test]
    fn spearman_exact_minimum_p() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [0.9, 0.5, 0.3, 0.1, 0.0];
        let (rho, p) = spearman_negative(&x, &y).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
        assert!((p - 1.0 / 120.0).abs() < 1e-12);
    }

    #[test]
    fn drift_fit_recovers_quadratic() {
        let pts: Vec<(f64, f64)> = [0.05, 0.1, 0.15].iter().map(|&s| (s, 0.3 - 0.7 * s * s)).collect();
        let f = sigma_drift_sweep(&pts).unwrap();
        assert!((f.c0 - 0.3).abs() < 1e-12 && (f.c02 + 0.7).abs() < 1e-10);
    }
}
