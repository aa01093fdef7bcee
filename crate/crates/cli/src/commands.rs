//! One function per command. Each writes its artifacts into `out` and
//! returns a JSON summary for the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde_json::{json, Value};
use stochwave_core::fields::{self, Field};
use stochwave_core::fwd::{self, BrownianPaths, ModeBasis, StepProcess};
use stochwave_core::linear::{Linearisation, NuSeries, Projection};
use stochwave_core::meta;
use stochwave_core::noise::{self, NoiseKernel};
use stochwave_core::rng;
use stochwave_core::sim::{Setup, SimConfig, TrajectoryRecord};
use stochwave_core::wave;
use stochwave_core::Error;

use crate::config::{RunConfig, TrajectoryFormat};
use crate::CliError;

pub const COMMANDS: [&str; 8] = [
    "wave",
    "spectrum",
    "simulate",
    "exit-sweep",
    "phase-sweep",
    "torus-sweep",
    "forward-check",
    "validate",
];

pub fn run(command: &str, cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    match command {
        "wave" => wave_cmd(cfg, out),
        "spectrum" => spectrum(cfg, out),
        "simulate" => simulate(cfg, out),
        "exit-sweep" => exit_sweep(cfg, out),
        "phase-sweep" => phase_sweep(cfg, out),
        "torus-sweep" => torus_sweep(cfg, out),
        "forward-check" => forward_check(cfg, out),
        "validate" => validate(cfg, out),
        other => Err(CliError::Validation(vec![format!(
            "unknown command '{other}' (known: {})",
            COMMANDS.join(", ")
        )])),
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

pub fn write_json(out: &Path, name: &str, v: &Value) -> Result<(), CliError> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| CliError::Io(e.into()))?;
    writeln!(w)?;
    Ok(())
}

fn setup(cfg: &RunConfig) -> Result<Setup, CliError> {
    Ok(Setup::build(&cfg.model()?, &cfg.grid()?, &cfg.noise, cfg.model.mu)?)
}

fn ensemble(s: &Setup, sim: SimConfig, n: usize) -> Result<(f64, Vec<TrajectoryRecord>), CliError> {
    let sim = s.simulator(sim)?;
    let c = sim.wave.c;
    Ok((c, sim.ensemble(0..n as u64)?))
}

fn wave_cmd(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let model = cfg.model()?;
    let w = wave::solve_wave(&model, &cfg.grid()?.profile(), None)?;
    w.write_text(create(out, "wave.txt")?)?;
    Ok(json!({
        "c": w.c,
        "nu_minus": w.nu_minus,
        "nu_plus": w.nu_plus,
        "residual": w.residual,
        "iterations": w.iterations,
    }))
}

fn spectrum(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let s = setup(cfg)?;
    s.lin.write_spectrum(create(out, "spectrum.txt")?)?;
    s.kernel.write_spectrum(create(out, "kernel_spectrum.txt")?)?;
    let slope = noise::phase_diffusion_slope(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel)?;
    let c02 = meta::c02_theory(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel, cfg.model.mu)?;
    Ok(json!({
        "c0": s.wave.c,
        "beta": s.lin.beta,
        "lambda1": s.grid.lambda1(),
        "q0": s.kernel.q0,
        "q_avg": s.kernel.q_avg,
        "phase_diffusion_slope": slope,
        "c02_theory": c02,
    }))
}

fn write_records(cfg: &RunConfig, out: &Path, tag: &str, recs: &[TrajectoryRecord]) -> Result<(), CliError> {
    match cfg.output.trajectories {
        TrajectoryFormat::None => {}
        TrajectoryFormat::Binary => {
            let header = json!({
                "model": cfg.model,
                "grid": cfg.grid,
                "sim": cfg.sim(),
                "tag": tag,
            })
            .to_string();
            let mut w = create(out, &format!("trajectories{tag}.bin"))?;
            for r in recs {
                r.write_binary(&mut w, &header)?;
            }
        }
        TrajectoryFormat::Text => {
            let dir = out.join(format!("trajectories{tag}"));
            std::fs::create_dir_all(&dir)?;
            for r in recs {
                r.write_text(create(&dir, &format!("{:06}.txt", r.trajectory))?)?;
            }
        }
    }
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let s = setup(cfg)?;
    let n = cfg.sweep.n_traj;
    if n == 0 {
        return Err(Error::Design("simulate needs sweep.n_traj >= 1".into()).into());
    }
    let (c, recs) = ensemble(&s, cfg.sim(), n)?;
    write_records(cfg, out, "", &recs)?;
    let exits = recs.iter().filter(|r| r.exit_time.is_finite()).count();
    let mut summary = json!({
        "c_sigma": c,
        "n_traj": n,
        "exits": exits,
        "max_orth_median": stochwave_core::util::median(&recs.iter().map(|r| r.max_orth).collect::<Vec<_>>()),
        "recenterings": recs.iter().map(|r| r.recenterings).sum::<usize>(),
    });
    if n >= 50 {
        let st = meta::phase_statistics(&recs, c, cfg.master_seed)?;
        summary["phase"] = serde_json::to_value(st).expect("serialisable");
    }
    Ok(summary)
}

fn exit_sweep(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let sw = &cfg.sweep;
    if sw.n_traj == 0 || sw.sigma_list.is_empty() {
        return Err(Error::Design("exit sweep needs sweep.n_traj >= 1 and a non-empty sweep.sigma_list".into()).into());
    }
    let s = setup(cfg)?;
    let mut ens = Vec::new();
    for &sigma in &sw.sigma_list {
        let sim = SimConfig { sigma, eta: sw.eta, t_end: sw.t, stop_at_exit: true, ..cfg.sim() };
        let (_, recs) = ensemble(&s, sim, sw.n_traj)?;
        write_records(cfg, out, &format!("_sigma{sigma}"), &recs)?;
        ens.push((sigma, recs));
    }
    let curve = meta::exit_curve(&ens, sw.eta, sw.t)?;
    let mut w = create(out, "exit_curve.txt")?;
    writeln!(w, "# sigma n exits p_hat ci_lo ci_hi")?;
    for r in &curve.rows {
        writeln!(w, "{} {} {} {:.6e} {:.6e} {:.6e}", r.sigma, r.n, r.exits, r.p_hat, r.ci.0, r.ci.1)?;
    }
    Ok(serde_json::to_value(curve).expect("serialisable"))
}

fn phase_sweep(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let sw = &cfg.sweep;
    let s = setup(cfg)?;
    let theory = noise::phase_diffusion_slope(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel)?;
    let c02 = meta::c02_theory(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel, cfg.model.mu)?;
    let mut w = create(out, "phase_sweep.txt")?;
    writeln!(w, "# sigma c_sigma var_slope var_lo var_hi drift drift_lo drift_hi n_used censored")?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for &sigma in &sw.sigma_list {
        let sim = SimConfig { sigma, t_end: sw.t, ..cfg.sim() };
        let (c, recs) = ensemble(&s, sim, sw.n_traj)?;
        let st = meta::phase_statistics(&recs, c, cfg.master_seed)?;
        writeln!(
            w,
            "{sigma} {c:.10e} {:.6e} {:.6e} {:.6e} {:.10e} {:.10e} {:.10e} {} {}",
            st.var_slope, st.var_slope_ci.0, st.var_slope_ci.1, st.drift, st.drift_ci.0, st.drift_ci.1, st.n_used, st.censored
        )?;
        points.push((sigma, st.drift));
        rows.push(json!({
            "sigma": sigma,
            "c_sigma": c,
            "stochastic_wave_c02": if sigma > 0.0 { (c - s.wave.c) / (sigma * sigma) } else { f64::NAN },
            "stats": st,
        }));
    }
    let fit = if points.len() >= 2 { Some(meta::sigma_drift_sweep(&points)?) } else { None };
    Ok(json!({
        "c0": s.wave.c,
        "var_slope_theory_per_sigma2": theory,
        "c02_theory": c02,
        "drift_fit": fit,
        "rows": rows,
    }))
}

fn torus_sweep(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let sw = &cfg.sweep;
    let model = cfg.model()?;
    let dy = cfg.grid.torus / cfg.grid.ny as f64;
    let mut w = create(out, "torus_sweep.txt")?;
    writeln!(w, "# torus ny q_avg var_slope var_lo var_hi theory")?;
    let mut rows = Vec::new();
    for &torus in &sw.torus_list {
        let ny = (torus / dy).round() as usize;
        if (ny as f64 * dy - torus).abs() > 1e-9 * torus || !ny.is_power_of_two() || ny < 8 {
            return Err(CliError::Validation(vec![format!(
                "sweep.torus_list entry {torus} needs ny = torus/dy = {} to be a power of two >= 8 (dy = {dy})",
                torus / dy
            )]));
        }
        let grid = cfg.grid_with_torus(torus, ny)?;
        let s = Setup::build(&model, &grid, &cfg.noise, cfg.model.mu)?;
        let theory = noise::phase_diffusion_slope(&s.model, &s.wave.phi, &s.lin.psi, &s.kernel)?;
        let sim = SimConfig { t_end: sw.t, ..cfg.sim() };
        let (c, recs) = ensemble(&s, sim.clone(), sw.n_traj)?;
        let st = meta::phase_statistics(&recs, c, cfg.master_seed)?;
        writeln!(
            w,
            "{torus} {ny} {:.12e} {:.6e} {:.6e} {:.6e} {:.6e}",
            s.kernel.q_avg,
            st.var_slope,
            st.var_slope_ci.0,
            st.var_slope_ci.1,
            theory * sim.sigma * sim.sigma
        )?;
        rows.push(json!({ "torus": torus, "ny": ny, "q_avg": s.kernel.q_avg, "theory": theory, "stats": st }));
    }
    Ok(json!({ "rows": rows }))
}

fn forward_check(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let f = &cfg.forward;
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let w = wave::solve_wave(&model, &grid.profile(), None)?;
    let lin = Linearisation::build(&w, &model, &grid)?;
    let kernel = NoiseKernel::build(&cfg.noise, &grid, model.m)?;
    let basis = ModeBasis::build(&kernel, f.modes)?;
    let nu = NuSeries::constant(1.0, 2.0 * f.t + 1.0)?;
    let profile = Field::extend(&fields::deriv_x(&w.phi, 1)?, &grid)?;
    let ns = [f.n_max / 16, f.n_max / 4, f.n_max];
    let mut out_w = create(out, "forward_check.txt")?;
    writeln!(out_w, "# path fwd_vs_ito(n={}) fwd_vs_ito(n={}) fwd_vs_ito(n={}) pathwise_vs_forward pathwise_vs_ito", ns[0], ns[1], ns[2])?;
    let mut rows = Vec::new();
    for p in 0..f.paths as u64 {
        let mut r = rng::trajectory_rng(cfg.master_seed, p);
        let paths = BrownianPaths::sample(basis.len(), f.t + 0.5, f.points_per_unit, &mut r)?;
        let partition: Vec<f64> = (0..=f.steps).map(|i| f.t * i as f64 / f.steps as f64).collect();
        let b = StepProcess::adapted(&profile, partition, &paths)?;
        let ito = fwd::ito_sum(|s, xi| b.apply(s, xi), &b, &basis, &paths, f.t)?;
        let mut errs = Vec::new();
        for &n in &ns {
            let fr = fwd::forward_riemann(|s, xi| b.apply(s, xi), n, &basis, &paths, f.t)?;
            errs.push(fields::l2_norm(&fr.sub(&ito)) / fields::l2_norm(&ito));
        }
        let conv_f = fwd::conv_forward_riemann(&lin, &nu, &b, f.n_max, &basis, &paths, f.t)?;
        let conv_p = fwd::conv_pathwise(&lin, &nu, &b, &basis, &paths, f.t)?;
        let conv_i = fwd::conv_ito(&lin, &nu, &b, &basis, &paths, f.t)?;
        let pf = fields::l2_norm(&conv_p.sub(&conv_f)) / fields::l2_norm(&conv_f);
        let pi = fields::l2_norm(&conv_p.sub(&conv_i)) / fields::l2_norm(&conv_i);
        writeln!(out_w, "{p} {:.6e} {:.6e} {:.6e} {pf:.6e} {pi:.6e}", errs[0], errs[1], errs[2])?;
        rows.push(json!({
            "path": p,
            "forward_vs_ito": errs,
            "decreasing": errs.windows(2).all(|w| w[1] < w[0]),
            "pathwise_vs_forward": pf,
            "pathwise_vs_ito": pi,
        }));
    }
    Ok(json!({ "n": ns, "tail_fraction": basis.tail_fraction, "rows": rows }))
}

struct Check {
    name: &'static str,
    value: f64,
    tol: f64,
}

fn validate(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let s = setup(cfg)?;
    let g1 = s.grid.profile();
    let dphi = fields::deriv_x(&s.wave.phi, 1)?;
    let mut checks = Vec::new();
    checks.push(Check { name: "wave ODE residual", value: s.wave.residual, tol: 1e-8 });
    let lin1 = Linearisation::build(&s.wave, &s.model, &g1)?;
    let kernel_res = lin1.apply_ltw(&dphi);
    // the stencil rows next to the boundary carry the Dirichlet truncation
    let r = fields::stencil::radius(g1.fd_order) + 1;
    let interior = (r..g1.nodes() - r).map(|i| kernel_res.values()[i].abs()).fold(0.0, f64::max);
    checks.push(Check { name: "translational kernel A·Φ′", value: interior, tol: 1e-6 });
    checks.push(Check { name: "pairing ⟨Φ′, ψ⟩ − 1", value: (fields::inner_product_l2(&dphi, &s.lin.psi)? - 1.0).abs(), tol: 1e-10 });
    checks.push(Check { name: "adjoint residual", value: s.lin.adjoint_residual(), tol: 1e-8 });
    let mut r = rng::trajectory_rng(cfg.master_seed, u64::MAX - 1);
    let v = stochwave_core::linear::random_smooth_field(&s.grid, s.model.n, &mut r);
    let p1 = s.lin.project(&v, Projection::P);
    let p2 = s.lin.project(&p1, Projection::P);
    checks.push(Check { name: "projection idempotency", value: fields::l2_norm(&p2.sub(&p1)), tol: 1e-12 });
    let nu = NuSeries::constant(1.0, 1.0)?;
    let (a, b) = (r.gen_range(0.0..0.5), r.gen_range(0.5..1.0));
    checks.push(Check { name: "cocycle E(t,s) = E(t,r)E(r,s)", value: s.lin.cocycle_residual(&v, 0.0, a, b, &nu)?, tol: 1e-8 });
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let w = stochwave_core::linear::random_smooth_field(&s.grid, s.model.m, &mut r);
        worst = worst.min(fields::inner_product_l2(&s.kernel.apply_q(&w)?, &w)?);
    }
    checks.push(Check { name: "⟨Qw, w⟩ >= 0", value: -worst, tol: 1e-10 });
    let mut a1 = rng::step_rng(cfg.master_seed, 3, 7);
    let mut a2 = rng::step_rng(cfg.master_seed, 3, 7);
    let same = (0..1000).all(|_| a1.gen::<u64>() == a2.gen::<u64>());
    checks.push(Check { name: "seeding determinism", value: if same { 0.0 } else { 1.0 }, tol: 0.0 });
    let det = s.simulator(SimConfig { sigma: 0.0, dt: 1e-2, t_end: 2.0, ..cfg.sim() })?;
    let rec = det.run_trajectory(0, None)?;
    checks.push(Check { name: "sigma = 0: sup ‖v‖", value: rec.v_norm.iter().cloned().fold(0.0, f64::max), tol: 1e-6 });
    let sim = s.simulator(SimConfig { t_end: 0.5, dt: 1e-2, ..cfg.sim() })?;
    let same = sim.run_trajectory(1, None)? == sim.run_trajectory(1, None)?;
    checks.push(Check { name: "trajectory replay", value: if same { 0.0 } else { 1.0 }, tol: 0.0 });

    let mut w = create(out, "validate.txt")?;
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.value <= c.tol;
        let line = format!("{} {}: {:.3e} (tol {:.1e})", if ok { "PASS" } else { "FAIL" }, c.name, c.value, c.tol);
        println!("{line}");
        writeln!(w, "{line}")?;
        if !ok {
            failed.push(c.name);
        }
    }
    if !failed.is_empty() {
        return Err(CliError::Invariant(failed.join(", ")));
    }
    Ok(json!({ "checks": checks.len(), "failed": 0 }))
}
