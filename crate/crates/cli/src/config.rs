//! Experiment configuration: a TOML file (or the `config` field of a
//! provenance JSON) describing target, grid, drift, run, and metrics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sf_sampler::drift::{default_clamp, DriftConfig, DriftMode, TerminalPolicy};
use sf_sampler::integrator::{RunConfig, TimeGrid};
use sf_sampler::target::{
    make_gaussian_mixture_target, make_gaussian_target, make_triangular_kde_target, GaussianParams, MixtureComponent,
    TargetSpec, TriangularKdeParams,
};

use crate::error::CliError;

/// A scalar or a list, for keys that sweeps may vary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentBlock {
    pub weight: f64,
    pub mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetBlock {
    /// `gaussian`, `gaussian_mixture`, or `triangular_kde`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentBlock>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Regularization weight(s); a list only makes sense for `sweep`.
    #[serde(default = "zero_epsilon")]
    pub epsilon: OneOrMany<f64>,
    /// Constant added to `log rho` (the sampler must not notice).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_shift: Option<f64>,
}

fn zero_epsilon() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    /// Step count(s) `n`.
    pub steps: OneOrMany<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftBlock {
    pub mode: DriftMode,
    #[serde(default = "default_mc_batch")]
    pub mc_batch: usize,
    /// Maximum drift norm; `0` disables clamping, absent picks the default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<f64>,
    #[serde(default = "default_terminal_policy")]
    pub terminal_policy: TerminalPolicy,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
}

fn default_mc_batch() -> usize {
    1024
}

fn default_terminal_policy() -> TerminalPolicy {
    TerminalPolicy::AnalyticLimit
}

fn default_quadrature_order() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Csv,
    Bin,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub ensemble_size: usize,
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<SampleFormat>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<SampleFormat> {
    vec![SampleFormat::Csv]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsBlock {
    pub reference_size: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_bins() -> usize {
    50
}

fn default_directions() -> usize {
    sf_sampler::diagnostics::DEFAULT_DIRECTIONS
}

fn default_bootstrap() -> usize {
    sf_sampler::diagnostics::DEFAULT_BOOTSTRAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    /// Times to check; `T` itself is only allowed for `gradient_ratio`.
    pub times: Vec<f64>,
    /// Positions to check (every coordinate set to the value when `d = 2`).
    pub positions: Vec<f64>,
    #[serde(default = "default_oracle_seeds")]
    pub seeds: usize,
    /// Fraction of points per seed that must pass the gate.
    #[serde(default = "default_pass_fraction")]
    pub min_pass_fraction: f64,
    #[serde(default = "default_gate_sigmas")]
    pub gate_sigmas: f64,
}

fn default_oracle_seeds() -> usize {
    1
}

fn default_pass_fraction() -> f64 {
    1.0
}

fn default_gate_sigmas() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    pub lo: OneOrMany<f64>,
    pub hi: OneOrMany<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
}

fn default_pairs() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetBlock,
    pub grid: GridBlock,
    pub drift: DriftBlock,
    pub run: RunBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeBlock>,
}

/// 1-based line and column of byte `offset` in `source`.
fn line_col(source: &str, offset: usize) -> (usize, usize) {
    let before = &source[..offset.min(source.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Line of `key = ...` inside `[section]`, for messages about valid syntax
/// with invalid values.
fn find_key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// Where a semantic error points.
#[derive(Clone, Copy, Debug)]
struct At<'a>(&'a str, &'a str);

impl ExperimentConfig {
    pub fn from_toml_str(source: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(source).map_err(|e| {
            let (line, col) = e.span().map_or((0, 0), |s| line_col(source, s.start));
            CliError::Config(format!("{origin}:{line}:{col}: {}", e.message().trim()))
        })?;
        cfg.validate().map_err(|(at, msg)| {
            let anchor = match find_key_line(source, at.0, at.1) {
                Some(line) => format!("{origin}:{line}"),
                None => origin.to_string(),
            };
            CliError::Config(format!("{anchor}: [{}] {}: {msg}", at.0, at.1))
        })?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` field of a provenance JSON file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let source = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let origin = path.display().to_string();
        if path.extension().is_some_and(|e| e == "json") {
            let prov: crate::provenance::Provenance = serde_json::from_str(&source)
                .map_err(|e| CliError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;
            prov.config
                .validate()
                .map_err(|(at, msg)| CliError::Config(format!("{origin}: [{}] {}: {msg}", at.0, at.1)))?;
            return Ok(prov.config);
        }
        Self::from_toml_str(&source, &origin)
    }

    fn validate(&self) -> Result<(), (At<'static>, String)> {
        let t = &self.target;
        let need = |ok: bool, key: &'static str, msg: &str| -> Result<(), (At<'static>, String)> {
            if ok {
                Ok(())
            } else {
                Err((At("target", key), msg.to_string()))
            }
        };
        let allowed: &[&'static str] = match t.name.as_str() {
            "gaussian" => &["mean", "variance"],
            "gaussian_mixture" => &["components"],
            "triangular_kde" => &["centers", "bandwidth"],
            _ => {
                return Err((
                    At("target", "name"),
                    format!("unknown target `{}` (expected gaussian, gaussian_mixture, or triangular_kde)", t.name),
                ))
            }
        };
        let present = [
            ("mean", t.mean.is_some()),
            ("variance", t.variance.is_some()),
            ("components", t.components.is_some()),
            ("centers", t.centers.is_some()),
            ("bandwidth", t.bandwidth.is_some()),
        ];
        for (key, is_set) in present {
            if is_set && !allowed.contains(&key) {
                return Err((At("target", key), format!("not a parameter of `{}`", t.name)));
            }
        }
        for &key in allowed {
            let set = present.iter().any(|&(k, s)| k == key && s);
            need(set, key, &format!("required by `{}`", t.name))?;
        }
        let eps = t.epsilon.values();
        need(!eps.is_empty(), "epsilon", "empty epsilon list")?;
        need(eps.iter().all(|e| (0.0..1.0).contains(e)), "epsilon", "every epsilon must lie in [0, 1)")?;
        let steps = self.grid.steps.values();
        if steps.is_empty() {
            return Err((At("grid", "steps"), "empty step list".into()));
        }
        if steps.contains(&0) {
            return Err((At("grid", "steps"), "step counts must be positive".into()));
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err((At("grid", "horizon"), "horizon must be positive".into()));
        }
        if self.drift.mc_batch == 0 {
            return Err((At("drift", "mc_batch"), "must be at least 1".into()));
        }
        if self.drift.clamp.is_some_and(|c| !(c >= 0.0)) {
            return Err((At("drift", "clamp"), "must be non-negative (0 disables clamping)".into()));
        }
        if self.run.ensemble_size == 0 {
            return Err((At("run", "ensemble_size"), "must be at least 1".into()));
        }
        if let Some(m) = &self.metrics {
            if m.reference_size < 10 {
                return Err((At("metrics", "reference_size"), "must be at least 10".into()));
            }
            if m.bins == 0 {
                return Err((At("metrics", "bins"), "must be at least 1".into()));
            }
            if m.bootstrap < 2 {
                return Err((At("metrics", "bootstrap"), "must be at least 2".into()));
            }
        }
        if let Some(o) = &self.oracle {
            if o.times.is_empty() {
                return Err((At("oracle", "times"), "empty list".into()));
            }
            if o.positions.is_empty() {
                return Err((At("oracle", "positions"), "empty list".into()));
            }
            if !(0.0..=1.0).contains(&o.min_pass_fraction) {
                return Err((At("oracle", "min_pass_fraction"), "must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// The single epsilon of a non-sweep command.
    pub fn single_epsilon(&self) -> Result<f64, CliError> {
        match &self.target.epsilon {
            OneOrMany::One(e) => Ok(*e),
            OneOrMany::Many(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(CliError::Config("[target] epsilon: a list is only accepted by `sweep`".into())),
        }
    }

    pub fn single_steps(&self) -> Result<usize, CliError> {
        match &self.grid.steps {
            OneOrMany::One(n) => Ok(*n),
            OneOrMany::Many(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(CliError::Config("[grid] steps: a list is only accepted by `sweep`".into())),
        }
    }

    pub fn build_target(&self) -> Result<TargetSpec<f64>, CliError> {
        let t = &self.target;
        let horizon = self.grid.horizon;
        let target = match t.name.as_str() {
            "gaussian" => make_gaussian_target(
                GaussianParams { mean: t.mean.clone().unwrap_or_default(), variance: t.variance.unwrap_or(0.0) },
                horizon,
            ),
            "gaussian_mixture" => make_gaussian_mixture_target(
                t.components
                    .iter()
                    .flatten()
                    .map(|c| MixtureComponent { weight: c.weight, mean: c.mean.clone() })
                    .collect(),
                horizon,
            ),
            "triangular_kde" => make_triangular_kde_target(
                TriangularKdeParams {
                    centers: t.centers.clone().unwrap_or_default(),
                    bandwidth: t.bandwidth.unwrap_or(0.0),
                },
                horizon,
            ),
            other => return Err(CliError::Config(format!("[target] name: unknown target `{other}`"))),
        }
        .map_err(|e| CliError::Config(format!("[target] {e}")))?;
        Ok(match t.log_shift {
            Some(c) => target.shifted(c),
            None => target,
        })
    }

    /// Run configuration for one `(n, eps)` cell, validated against `target`.
    pub fn run_config(&self, target: &TargetSpec<f64>, steps: usize, epsilon: f64) -> Result<RunConfig<f64>, CliError> {
        let grid = TimeGrid::new(steps, self.grid.horizon).map_err(|e| CliError::Config(format!("[grid] {e}")))?;
        let clamp = match self.drift.clamp {
            Some(0.0) => None,
            Some(c) => Some(c),
            None => default_clamp(target, epsilon),
        };
        let mut drift = DriftConfig::new(self.drift.mode, self.drift.mc_batch)
            .with_epsilon(epsilon)
            .with_clamp(clamp)
            .with_terminal_policy(self.drift.terminal_policy);
        drift.quadrature_order = self.drift.quadrature_order;
        let cfg = RunConfig::new(grid, self.run.ensemble_size, self.run.master_seed, drift);
        cfg.validate(target).map_err(|e| CliError::Config(format!("[drift] {e}")))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[target]
name = "gaussian"
mean = [0.0]
variance = 1.0

[grid]
horizon = 1.0
steps = 16

[drift]
mode = "exact_gaussian"

[run]
ensemble_size = 1000
master_seed = 7
"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL, "c.toml").unwrap();
        assert_eq!(cfg.single_steps().unwrap(), 16);
        assert_eq!(cfg.single_epsilon().unwrap(), 0.0);
        assert_eq!(cfg.run.formats, vec![SampleFormat::Csv]);
        let target = cfg.build_target().unwrap();
        let run = cfg.run_config(&target, 16, 0.0).unwrap();
        assert_eq!(run.ensemble_size, 1000);
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let src = MINIMAL.replace("variance = 1.0", "variance = 1.0\nepsilonn = 0.1");
        let err = ExperimentConfig::from_toml_str(&src, "c.toml").unwrap_err().to_string();
        assert!(err.contains("epsilonn"), "{err}");
        assert!(err.contains("c.toml:6"), "{err}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let src = MINIMAL.replace("steps = 16", "steps = []");
        let err = ExperimentConfig::from_toml_str(&src, "c.toml").unwrap_err().to_string();
        assert!(err.contains("c.toml:9") && err.contains("steps"), "{err}");

        let src = MINIMAL.replace("variance = 1.0", "variance = 1.0\ncenters = [0.0]");
        let err = ExperimentConfig::from_toml_str(&src, "c.toml").unwrap_err().to_string();
        assert!(err.contains("centers"), "{err}");
    }

    #[test]
    fn lists_are_rejected_outside_sweeps() {
        let src = MINIMAL.replace("steps = 16", "steps = [8, 16]");
        let cfg = ExperimentConfig::from_toml_str(&src, "c.toml").unwrap();
        assert!(cfg.single_steps().is_err());
        assert_eq!(cfg.grid.steps.values(), vec![8, 16]);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
