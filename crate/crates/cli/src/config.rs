//! Declarative run configuration. The schema is strict: unknown keys are
//! errors, not warnings, and command-line overrides of scalar leaves
//! (`--solver.tol=1e-9`) are applied to the parsed document before
//! validation so they obey the same rules.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use mfglab::grid::Grid;
use mfglab::model::{builtin_model, ModelSpec};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub forward: ForwardSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: String,
    pub beta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub half_width: f64,
    pub points_per_axis: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub steps: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200
}

fn default_damping() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Player counts; studies run the whole ladder, `simulate` runs each.
    #[serde(default = "default_n_players")]
    pub n_players: Vec<usize>,
    #[serde(default = "default_sim_steps")]
    pub steps: usize,
    /// Independent seeds per ladder entry.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    /// Replications for scalar cost estimates.
    #[serde(default = "default_seeds")]
    pub replications: usize,
    /// Feedback driving `simulate`: "mfg", "zero" or "constant".
    #[serde(default = "default_feedback")]
    pub feedback: String,
    #[serde(default)]
    pub feedback_constant: [f64; 2],
    /// Simulation steps between stored density frames; must divide `steps`.
    #[serde(default = "default_density_stride")]
    pub density_stride: usize,
}

fn default_n_players() -> Vec<usize> {
    vec![100, 400, 1600]
}

fn default_sim_steps() -> usize {
    200
}

fn default_seeds() -> usize {
    8
}

fn default_feedback() -> String {
    "mfg".into()
}

fn default_density_stride() -> usize {
    4
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            n_players: default_n_players(),
            steps: default_sim_steps(),
            seeds: default_seeds(),
            replications: default_seeds(),
            feedback: default_feedback(),
            feedback_constant: [0.0, 0.0],
            density_stride: default_density_stride(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// Studies this configuration is meant for; commands check membership.
    #[serde(default = "default_run")]
    pub run: Vec<String>,
    #[serde(default = "default_stride")]
    pub dw_center_stride: usize,
    #[serde(default = "default_gamma")]
    pub holder_gamma: f64,
}

fn default_run() -> Vec<String> {
    vec!["converge".into(), "nashgap".into()]
}

fn default_stride() -> usize {
    8
}

fn default_gamma() -> f64 {
    0.4
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            run: default_run(),
            dw_center_stride: default_stride(),
            holder_gamma: default_gamma(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardSection {
    /// "mfg" (solve first, use α*), "zero", or "constant".
    #[serde(default = "default_feedback")]
    pub alpha: String,
    #[serde(default)]
    pub constant: [f64; 2],
}

impl Default for ForwardSection {
    fn default() -> Self {
        ForwardSection {
            alpha: default_feedback(),
            constant: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    42
}

const STUDY_NAMES: &[&str] = &["converge", "nashgap"];

impl RunConfig {
    /// Parse, apply `--a.b=v` overrides, and validate.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut doc: toml::Value = toml::from_str(&text)
            .with_context(|| format!("config {} is not valid TOML", path.display()))?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let cfg: RunConfig = doc
            .try_into()
            .map_err(|e| anyhow!("config schema violation: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.name.is_empty() {
            bail!("model.name must not be empty");
        }
        for s in &self.study.run {
            if !STUDY_NAMES.contains(&s.as_str()) {
                bail!(
                    "study.run contains unknown study '{s}' (known: {})",
                    STUDY_NAMES.join(", ")
                );
            }
        }
        match self.sim.feedback.as_str() {
            "mfg" | "zero" | "constant" => {}
            other => bail!("sim.feedback must be mfg|zero|constant, got '{other}'"),
        }
        match self.forward.alpha.as_str() {
            "mfg" | "zero" | "constant" => {}
            other => bail!("forward.alpha must be mfg|zero|constant, got '{other}'"),
        }
        if self.sim.density_stride == 0 || self.sim.steps % self.sim.density_stride != 0 {
            bail!(
                "sim.density_stride ({}) must divide sim.steps ({})",
                self.sim.density_stride,
                self.sim.steps
            );
        }
        if self.sim.n_players.is_empty() {
            bail!("sim.n_players must not be empty");
        }
        Ok(())
    }

    /// Instantiate the model; hypothesis violations surface here.
    pub fn build_model(&self) -> mfglab::Result<ModelSpec> {
        builtin_model(
            &self.model.name,
            self.grid.dim,
            self.model.horizon,
            self.model.beta,
            &self.model.params,
        )
    }

    pub fn build_grid(&self) -> mfglab::Result<Grid> {
        Grid::new(
            self.grid.dim,
            self.grid.half_width,
            self.grid.points_per_axis,
        )
    }
}

/// Set a scalar leaf addressed by a dotted path. The leaf must already exist
/// or its parent table must exist in the schema-backed document.
fn apply_override(doc: &mut toml::Value, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.len() < 2 {
        bail!("override '{key}' must use a dotted section.key path");
    }
    let mut node = &mut *doc;
    for part in &parts[..parts.len() - 1] {
        node = node
            .get_mut(part)
            .ok_or_else(|| anyhow!("override path '{key}': section '{part}' not in config"))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| anyhow!("override path '{key}' does not address a table"))?;
    let leaf = parts[parts.len() - 1];
    let parsed: toml::Value = if let Ok(b) = value.parse::<bool>() {
        toml::Value::Boolean(b)
    } else if let Ok(i) = value.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = value.parse::<f64>() {
        toml::Value::Float(f)
    } else {
        toml::Value::String(value.to_string())
    };
    table.insert(leaf.to_string(), parsed);
    Ok(())
}
