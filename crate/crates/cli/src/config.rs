//! Run configuration: TOML sections mirroring the library's building blocks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stochwave_core::models::{self, ModelSpec};
use stochwave_core::noise::{KernelSpec, Transverse};
use stochwave_core::sim::SimConfig;
use stochwave_core::Grid;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub preset: String,
    pub params: BTreeMap<String, f64>,
    /// Weight of the Itô–Stratonovich correction h = ½μq(0)g′g.
    pub mu: f64,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { preset: "nagumo".into(), params: BTreeMap::new(), mu: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridBlock {
    pub l: f64,
    pub nx: usize,
    pub d: usize,
    pub torus: f64,
    pub ny: usize,
    pub fd_order: usize,
}

impl Default for GridBlock {
    fn default() -> Self {
        Self { l: 30.0, nx: 256, d: 2, torus: std::f64::consts::TAU, ny: 8, fd_order: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub sigma_list: Vec<f64>,
    pub torus_list: Vec<f64>,
    pub eta: f64,
    pub t: f64,
    pub n_traj: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            sigma_list: vec![0.05, 0.1, 0.15],
            torus_list: vec![4.0, 8.0],
            eta: 0.5,
            t: 10.0,
            n_traj: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    Binary,
    Text,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: String,
    pub trajectories: TrajectoryFormat,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { directory: "out".into(), trajectories: TrajectoryFormat::Binary }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardBlock {
    pub modes: usize,
    pub paths: usize,
    pub points_per_unit: usize,
    pub t: f64,
    pub steps: usize,
    pub n_max: usize,
}

impl Default for ForwardBlock {
    fn default() -> Self {
        Self { modes: 64, paths: 4, points_per_unit: 4096, t: 1.0, steps: 8, n_max: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub noise: KernelSpec,
    /// `sim.seed` is replaced by `master_seed` at run time.
    pub sim: SimConfig,
    pub sweep: SweepBlock,
    pub forward: ForwardBlock,
    pub output: OutputBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            model: ModelBlock::default(),
            grid: GridBlock::default(),
            noise: KernelSpec::default(),
            sim: SimConfig { t_end: 10.0, dt: 0.01, ..SimConfig::default() },
            sweep: SweepBlock::default(),
            forward: ForwardBlock::default(),
            output: OutputBlock::default(),
        }
    }
}

/// A parsed configuration and the dotted keys that took their defaults.
pub struct Parsed {
    pub config: RunConfig,
    pub defaulted: Vec<(String, String)>,
}

pub fn parse_str(text: &str) -> Result<Parsed, CliError> {
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Validation(vec![e.to_string()]))?;
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    let full = toml::Table::try_from(&config).map_err(|e| CliError::Validation(vec![e.to_string()]))?;
    let mut defaulted = Vec::new();
    collect_defaults("", &full, Some(&user), &mut defaulted);
    let errors = config.violations();
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    Ok(Parsed { config, defaulted })
}

pub fn parse_file(path: &Path) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_str(&text)
}

fn collect_defaults(prefix: &str, full: &toml::Table, user: Option<&toml::Table>, out: &mut Vec<(String, String)>) {
    for (k, v) in full {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let u = user.and_then(|t| t.get(k));
        match (v, u) {
            // a tagged enum given by the user counts as set as a whole
            (toml::Value::Table(t), None) => collect_defaults(&key, t, None, out),
            (toml::Value::Table(t), Some(toml::Value::Table(ut))) => {
                if !t.contains_key("kind") {
                    collect_defaults(&key, t, Some(ut), out)
                }
            }
            (_, None) => out.push((key, v.to_string())),
            _ => {}
        }
    }
}

impl RunConfig {
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Every range violation, named by its dotted key.
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.sim.violations().into_iter().map(|m| format!("sim.{m}")).collect();
        let g = &self.grid;
        if !(g.l > 0.0 && g.l.is_finite()) {
            v.push(format!("grid.l must be positive (got {})", g.l));
        }
        if !(g.nx >= 8 && g.nx.is_power_of_two()) {
            v.push(format!("grid.nx must be a power of two >= 8 (got {})", g.nx));
        }
        if !(1..=3).contains(&g.d) {
            v.push(format!("grid.d must be 1, 2 or 3 (got {})", g.d));
        }
        if g.d > 1 {
            if !(g.ny >= 8 && g.ny.is_power_of_two()) {
                v.push(format!("grid.ny must be a power of two >= 8 (got {})", g.ny));
            }
            if !(g.torus > 0.0 && g.torus.is_finite()) {
                v.push(format!("grid.torus must be positive (got {})", g.torus));
            }
        }
        if ![2, 4, 6].contains(&g.fd_order) {
            v.push(format!("grid.fd_order must be 2, 4 or 6 (got {})", g.fd_order));
        }
        if !["nagumo", "allen_cahn_cutoff", "oregonator"].contains(&self.model.preset.as_str()) {
            v.push(format!("model.preset '{}' is not a known preset", self.model.preset));
        }
        if !(0.0..=1.0).contains(&self.model.mu) {
            v.push(format!("model.mu must lie in [0, 1] (got {})", self.model.mu));
        }
        let n = &self.noise;
        if !(n.amplitude >= 0.0 && n.amplitude.is_finite()) {
            v.push(format!("noise.amplitude must be >= 0 (got {})", n.amplitude));
        }
        if !(n.ell_x > 0.0) {
            v.push(format!("noise.ell_x must be positive (got {})", n.ell_x));
        }
        match n.transverse {
            Transverse::Gaussian { ell_y } if !(ell_y > 0.0) => {
                v.push(format!("noise.transverse.ell_y must be positive (got {ell_y})"))
            }
            Transverse::CompactBump { radius } if !(radius > 0.0) => {
                v.push(format!("noise.transverse.radius must be positive (got {radius})"))
            }
            _ => {}
        }
        let s = &self.sweep;
        if s.sigma_list.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            v.push("sweep.sigma_list entries must be finite and >= 0".into());
        }
        if s.sigma_list.windows(2).any(|w| !(w[1] > w[0])) {
            v.push("sweep.sigma_list must increase strictly".into());
        }
        if s.torus_list.iter().any(|x| !(*x > 0.0)) {
            v.push("sweep.torus_list entries must be positive".into());
        }
        if !(s.eta > 0.0) {
            v.push(format!("sweep.eta must be positive (got {})", s.eta));
        }
        if !(s.t > 0.0 && s.t.is_finite()) {
            v.push(format!("sweep.t must be positive (got {})", s.t));
        }
        let f = &self.forward;
        if f.modes == 0 || f.paths == 0 || f.steps == 0 {
            v.push("forward.modes, forward.paths and forward.steps must be positive".into());
        }
        if !(f.t > 0.0) {
            v.push(format!("forward.t must be positive (got {})", f.t));
        }
        if f.points_per_unit < 4 * f.n_max {
            v.push(format!(
                "forward.points_per_unit must be >= 4·forward.n_max = {} (got {})",
                4 * f.n_max,
                f.points_per_unit
            ));
        }
        v
    }

    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let params: Vec<(&str, f64)> = self.model.params.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        Ok(models::preset(&self.model.preset, &params)?)
    }

    pub fn grid_with_torus(&self, torus: f64, ny: usize) -> Result<Grid, CliError> {
        let g = &self.grid;
        Ok(Grid::new(g.l, g.nx, g.d, torus, ny)?.with_fd_order(g.fd_order)?)
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        self.grid_with_torus(self.grid.torus, self.grid.ny)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig { seed: self.master_seed, ..self.sim.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_reports_defaults() {
        let p = parse_str("[model]\npreset = \"nagumo\"\n").unwrap();
        assert!(p.defaulted.len() >= 15, "{}", p.defaulted.len());
        assert!(p.defaulted.iter().any(|(k, _)| k == "sim.dt"));
        assert!(!p.defaulted.iter().any(|(k, _)| k == "model.preset"));
    }

    #[test]
    fn negative_sigma_names_key() {
        match parse_str("[sim]\nsigma = -1.0\n") {
            Err(CliError::Validation(v)) => assert!(v.iter().any(|m| m.contains("sim.sigma")), "{v:?}"),
            _ => panic!("expected validation error"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(parse_str("[grid]\nnx_typo = 3\n"), Err(CliError::Validation(_))));
    }

    #[test]
    fn canonical_round_trip() {
        let mut c = RunConfig::default();
        c.sim.eta = f64::INFINITY;
        c.noise = KernelSpec::compact_bump(1.0);
        let back = parse_str(&c.canonical()).unwrap().config;
        assert_eq!(back, c);
    }
}
