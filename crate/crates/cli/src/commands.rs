use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sf_sampler::diagnostics::{
    compute_metrics, probe_a2, probe_a4, ConditionProbeResult, MetricsOptions, MetricsReport, ProbeRegion, RunEcho,
    METRICS_CSV_HEADER,
};
use sf_sampler::drift::{drift_exact, drift_mc, drift_terminal, DriftConfig, DriftMode};
use sf_sampler::integrator::{em_run, em_sweep_with, Ensemble};
use sf_sampler::io::{write_samples_binary, write_samples_csv};
use sf_sampler::quadrature::quadrature_drift_epsilon;
use sf_sampler::rng::{derive_seed, stream};
use sf_sampler::target::{Catalog, TargetSpec};
use sf_sampler::Scalar;

use crate::config::{ExperimentConfig, SampleFormat};
use crate::error::CliError;
use crate::provenance::{CellRecord, Provenance};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fraction of flagged paths above which a run exits with code 3.
pub const FLAGGED_PATH_LIMIT: f64 = 0.01;

/// Extra absolute slack for oracle points whose quadrature did not converge
/// (kinked integrands the piecewise rules do not cover).
pub const KINK_TOLERANCE: f64 = 1e-4;

// stream tags under the master seed
const REFERENCE_STREAM: u64 = 0x5245_4600;
const METRICS_STREAM: u64 = 0x4D45_5400;
const ORACLE_STREAM: u64 = 0x4F52_4100;
const PROBE_STREAM: u64 = 0x5052_4F00;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub formats: Option<Vec<SampleFormat>>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &overrides.out {
        cfg.run.output_dir = out.clone();
    }
    if let Some(formats) = &overrides.formats {
        cfg.run.formats = formats.clone();
    }
    Ok(cfg)
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(CliError::io(format!("cannot create {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut out = create_file(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Config(e.to_string()))?;
    writeln!(out).and_then(|_| out.flush()).map_err(CliError::io(path.display().to_string()))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))
}

fn write_samples(
    dir: &Path,
    stem: &str,
    ensemble: &Ensemble<f64>,
    formats: &[SampleFormat],
) -> Result<Vec<String>, CliError> {
    let mut files = Vec::new();
    for format in formats {
        let name = match format {
            SampleFormat::Csv => format!("{stem}.csv"),
            SampleFormat::Bin => format!("{stem}.bin"),
        };
        let path = dir.join(&name);
        let mut out = create_file(&path)?;
        match format {
            SampleFormat::Csv => write_samples_csv(&mut out, ensemble, VERSION)?,
            SampleFormat::Bin => write_samples_binary(&mut out, ensemble, VERSION)?,
        }
        out.flush().map_err(CliError::io(path.display().to_string()))?;
        files.push(name);
    }
    Ok(files)
}

fn reference_sample(cfg: &ExperimentConfig, target: &TargetSpec<f64>, size: usize) -> Result<Vec<f64>, CliError> {
    let mut rng = stream(derive_seed(cfg.run.master_seed, &[REFERENCE_STREAM]));
    Ok(target.sample_exact(&mut rng, size)?)
}

fn metrics_options(cfg: &ExperimentConfig) -> Option<MetricsOptions> {
    cfg.metrics.as_ref().map(|m| MetricsOptions {
        bins: m.bins,
        directions: m.directions,
        bootstrap: m.bootstrap,
        seed: derive_seed(cfg.run.master_seed, &[METRICS_STREAM]),
    })
}

fn write_metrics(dir: &Path, stem: &str, rows: &[MetricsReport<f64>]) -> Result<(), CliError> {
    let path = dir.join(format!("{stem}.csv"));
    let mut out = create_file(&path)?;
    let io = CliError::io(path.display().to_string());
    let text: String = std::iter::once(METRICS_CSV_HEADER.to_string())
        .chain(rows.iter().map(MetricsReport::csv_row))
        .map(|l| l + "\n")
        .collect();
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(io)?;
    write_json(&dir.join(format!("{stem}.json")), &rows)
}

fn gate_flagged(cells: &[CellRecord], k: usize) -> Result<(), CliError> {
    for c in cells {
        let fraction = c.flagged_paths as f64 / k as f64;
        if fraction > FLAGGED_PATH_LIMIT {
            return Err(CliError::Gate(format!(
                "{} of {k} paths flagged (n = {}, epsilon = {}); outputs were written",
                c.flagged_paths, c.steps, c.epsilon
            )));
        }
    }
    Ok(())
}

fn provenance(cfg: &ExperimentConfig, command: &str, target: &TargetSpec<f64>, cells: Vec<CellRecord>) -> Provenance {
    Provenance {
        tool: "sf-sampler".into(),
        version: VERSION.into(),
        command: command.into(),
        master_seed: cfg.run.master_seed,
        target: target.name().into(),
        cells,
        config: cfg.clone(),
    }
}

/// `sample`: one run, its samples, optional metrics, and provenance.
pub fn cmd_sample(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let steps = cfg.single_steps()?;
    let epsilon = cfg.single_epsilon()?;
    let target = cfg.build_target()?;
    let run = cfg.run_config(&target, steps, epsilon)?;
    let ensemble = em_run(&target, &run)?;

    let dir = &cfg.run.output_dir;
    prepare_dir(dir)?;
    let files = write_samples(dir, "samples", &ensemble, &cfg.run.formats)?;
    if let (Some(m), Some(options)) = (&cfg.metrics, metrics_options(cfg)) {
        let reference = reference_sample(cfg, &target, m.reference_size)?;
        let echo = RunEcho { n: steps, epsilon, mc_batch: run.drift.mc_batch };
        let report = compute_metrics(&ensemble.terminal, &reference, &target, echo, &options)?;
        write_metrics(dir, "metrics", &[report])?;
    }
    let cells =
        vec![CellRecord { steps, epsilon, seed: run.master_seed, flagged_paths: ensemble.flagged_paths(), files }];
    write_json(&dir.join("provenance.json"), &provenance(cfg, "sample", &target, cells.clone()))?;
    gate_flagged(&cells, run.ensemble_size)
}

/// `sweep`: every `(n, eps)` cell, one metrics row each.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let (Some(m), Some(options)) = (&cfg.metrics, metrics_options(cfg)) else {
        return Err(CliError::Config("sweep needs a [metrics] block".into()));
    };
    let target = cfg.build_target()?;
    let steps = cfg.grid.steps.values();
    let eps = cfg.target.epsilon.values();
    let base = cfg.run_config(&target, steps[0], eps[0])?;
    for &n in &steps {
        for &e in &eps {
            cfg.run_config(&target, n, e)?;
        }
    }
    let dir = &cfg.run.output_dir;
    prepare_dir(dir)?;
    let reference = reference_sample(cfg, &target, m.reference_size)?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    em_sweep_with(&target, &base, &steps, &eps, |cell| {
        let stem = format!("samples_n{}_eps{}", cell.steps, cell.epsilon);
        let files = write_samples(dir, &stem, &cell.ensemble, &cfg.run.formats)
            .map_err(|e| sf_sampler::Error::Format(e.to_string()))?;
        let echo = RunEcho { n: cell.steps, epsilon: cell.epsilon, mc_batch: base.drift.mc_batch };
        rows.push(compute_metrics(&cell.ensemble.terminal, &reference, &target, echo, &options)?);
        cells.push(CellRecord {
            steps: cell.steps,
            epsilon: cell.epsilon,
            seed: cell.seed,
            flagged_paths: cell.ensemble.flagged_paths(),
            files,
        });
        Ok(())
    })?;
    write_metrics(dir, "sweep_metrics", &rows)?;
    write_json(&dir.join("provenance.json"), &provenance(cfg, "sweep", &target, cells.clone()))?;
    gate_flagged(&cells, base.ensemble_size)
}

/// One row of the oracle-check table.
#[derive(Clone, Debug, Serialize)]
pub struct OraclePoint {
    pub seed: usize,
    pub t: f64,
    pub y: f64,
    pub mc: f64,
    pub std_error: f64,
    pub oracle: f64,
    pub oracle_kind: &'static str,
    pub quadrature_converged: bool,
    /// `|quadrature - closed form|` where both exist.
    pub quadrature_vs_exact: Option<f64>,
    pub abs_err: f64,
    pub gate: f64,
    pub pass: bool,
}

/// Summary printed by `oracle-check`.
#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub points: usize,
    pub passed: usize,
    pub min_seed_pass_fraction: f64,
    pub max_quadrature_vs_exact: Option<f64>,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Compares Monte Carlo drift against quadrature and, where available, the
/// closed form. Errors and standard errors are the worst coordinate.
pub fn oracle_points(cfg: &ExperimentConfig) -> Result<Vec<OraclePoint>, CliError> {
    let Some(oracle) = &cfg.oracle else {
        return Err(CliError::Config("oracle-check needs an [oracle] block".into()));
    };
    let target = cfg.build_target()?;
    let epsilon = cfg.single_epsilon()?;
    let horizon = target.horizon();
    let d = target.dim();
    if d > 2 {
        return Err(CliError::Config(format!("oracle-check supports d <= 2, got {d}")));
    }
    let mode = match cfg.drift.mode {
        DriftMode::Stein => DriftMode::Stein,
        _ => DriftMode::GradientRatio,
    };
    let m = cfg.drift.mc_batch;
    // no clamp: the check is about the raw estimator
    let drift = DriftConfig::new(mode, m).with_epsilon(epsilon).with_terminal_policy(cfg.drift.terminal_policy);
    drift.validate(&target).map_err(|e| CliError::Config(format!("[drift] {e}")))?;
    for &t in &oracle.times {
        if !(0.0..=horizon).contains(&t) {
            return Err(CliError::Config(format!("[oracle] times: {t} lies outside [0, {horizon}]")));
        }
        if t == horizon && mode == DriftMode::Stein {
            return Err(CliError::Config("[oracle] times: the stein estimator is undefined at t = T".into()));
        }
    }
    let has_exact = matches!(target.catalog(), Catalog::Gaussian(_) | Catalog::GaussianMixture(_));
    let mut points = Vec::new();
    for seed in 0..oracle.seeds {
        for (it, &t) in oracle.times.iter().enumerate() {
            for (iy, &yv) in oracle.positions.iter().enumerate() {
                let y = vec![yv; d];
                let exact = if has_exact { Some(drift_exact(&target, epsilon, t, &y)?) } else { None };
                let (est, quad) = if t == horizon {
                    (drift_terminal(&target, &drift, &y)?, None)
                } else {
                    let mut rng =
                        stream(derive_seed(cfg.run.master_seed, &[ORACLE_STREAM, seed as u64, it as u64, iy as u64]));
                    let noise: Vec<f64> = (0..m * d).map(|_| f64::standard_normal(&mut rng)).collect();
                    let q = quadrature_drift_epsilon(&target, epsilon, t, &y, cfg.drift.quadrature_order)?;
                    (drift_mc(&target, &drift, t, &y, &noise)?, Some(q))
                };
                let (oracle_value, kind) = match (&exact, &quad) {
                    (Some(e), _) => (e.clone(), "exact"),
                    (None, Some(q)) => (q.value.clone(), "quadrature"),
                    (None, None) => (est.value.clone(), "terminal"),
                };
                let converged = quad.as_ref().is_none_or(|q| q.converged);
                let quadrature_vs_exact = match (&exact, &quad) {
                    (Some(e), Some(q)) => Some(max_abs_diff(e, &q.value)),
                    _ => None,
                };
                let abs_err = max_abs_diff(&est.value, &oracle_value);
                let std_error = est.std_error.iter().fold(0.0f64, |a, &s| a.max(s));
                let mut gate = oracle.gate_sigmas * std_error;
                if !converged && exact.is_none() {
                    gate += KINK_TOLERANCE;
                }
                points.push(OraclePoint {
                    seed,
                    t,
                    y: yv,
                    mc: est.value[0],
                    std_error,
                    oracle: oracle_value[0],
                    oracle_kind: kind,
                    quadrature_converged: converged,
                    quadrature_vs_exact,
                    abs_err,
                    gate,
                    pass: abs_err <= gate,
                });
            }
        }
    }
    Ok(points)
}

pub fn summarize_oracle(points: &[OraclePoint], seeds: usize) -> OracleSummary {
    let min_seed_pass_fraction = (0..seeds)
        .map(|s| {
            let of_seed: Vec<&OraclePoint> = points.iter().filter(|p| p.seed == s).collect();
            of_seed.iter().filter(|p| p.pass).count() as f64 / of_seed.len().max(1) as f64
        })
        .fold(1.0, f64::min);
    OracleSummary {
        points: points.len(),
        passed: points.iter().filter(|p| p.pass).count(),
        min_seed_pass_fraction,
        max_quadrature_vs_exact: points.iter().filter_map(|p| p.quadrature_vs_exact).reduce(f64::max),
    }
}

/// `oracle-check`: writes `oracle_errors.csv` and gates on the pass fraction.
pub fn cmd_oracle_check(cfg: &ExperimentConfig) -> Result<OracleSummary, CliError> {
    let points = oracle_points(cfg)?;
    let oracle = cfg.oracle.as_ref().expect("checked by oracle_points");
    let dir = &cfg.run.output_dir;
    prepare_dir(dir)?;
    let path = dir.join("oracle_errors.csv");
    let mut out = create_file(&path)?;
    let mut text = String::from(
        "seed,t,y,mc,std_error,oracle,oracle_kind,quadrature_converged,quadrature_vs_exact,abs_err,gate,pass\n",
    );
    for p in &points {
        text.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{},{},{},{:?},{:?},{}\n",
            p.seed,
            p.t,
            p.y,
            p.mc,
            p.std_error,
            p.oracle,
            p.oracle_kind,
            p.quadrature_converged,
            p.quadrature_vs_exact.map_or(String::new(), |v| format!("{v:?}")),
            p.abs_err,
            p.gate,
            p.pass
        ));
    }
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(CliError::io(path.display().to_string()))?;
    let summary = summarize_oracle(&points, oracle.seeds);
    if summary.min_seed_pass_fraction < oracle.min_pass_fraction {
        return Err(CliError::Gate(format!(
            "oracle gate failed: {} of {} points pass, worst seed {:.3} < {}",
            summary.passed, summary.points, summary.min_seed_pass_fraction, oracle.min_pass_fraction
        )));
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub target: String,
    pub a2: ConditionProbeResult<f64>,
    pub a4: ConditionProbeResult<f64>,
}

/// `probe`: empirical Lipschitz and ratio constants of `log phi`; informs, never gates.
pub fn cmd_probe(cfg: &ExperimentConfig) -> Result<ProbeReport, CliError> {
    let Some(p) = &cfg.probe else {
        return Err(CliError::Config("probe needs a [probe] block".into()));
    };
    let target = cfg.build_target()?;
    let d = target.dim();
    let expand = |v: Vec<f64>, key: &str| -> Result<Vec<f64>, CliError> {
        match v.len() {
            1 => Ok(vec![v[0]; d]),
            n if n == d => Ok(v),
            n => Err(CliError::Config(format!("[probe] {key}: expected 1 or {d} values, got {n}"))),
        }
    };
    let region = ProbeRegion { lo: expand(p.lo.values(), "lo")?, hi: expand(p.hi.values(), "hi")? };
    let seed = derive_seed(cfg.run.master_seed, &[PROBE_STREAM]);
    let a2 =
        probe_a2(&target, &region, p.pairs, &mut stream(seed)).map_err(|e| CliError::Config(format!("[probe] {e}")))?;
    let a4 =
        probe_a4(&target, &region, p.pairs, &mut stream(seed)).map_err(|e| CliError::Config(format!("[probe] {e}")))?;
    let report = ProbeReport { target: target.name().into(), a2, a4 };
    let dir = &cfg.run.output_dir;
    prepare_dir(dir)?;
    write_json(&dir.join("probe.json"), &report)?;
    Ok(report)
}
