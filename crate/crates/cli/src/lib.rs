//! Subcommand implementations behind the `tar2` binary.

pub mod config;
pub mod plot;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde::{Deserialize, Serialize};
use tar2::redistributors::RedistributorKind;
use tar2::theory::verify::{run_suite, CheckReport, Suite, VerifyOptions};
use tar2::training::{run_training, trailing_mean, MetricsRow, TrainOutcome, SUCCESS_WINDOW};

pub use config::{load_config, parse_config, RunConfig, CONFIG_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.bin";
pub const POLICY_FILE: &str = "policy.bin";
pub const SUMMARY_FILE: &str = "summary.csv";

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_USAGE,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub metrics: String,
    pub manifest: String,
    pub model: String,
    pub policy: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self {
            metrics: METRICS_FILE.into(),
            manifest: MANIFEST_FILE.into(),
            model: MODEL_FILE.into(),
            policy: POLICY_FILE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub final_success: f64,
    pub episodes_to_0_9: Option<usize>,
    pub mean_return_last_100: f64,
    pub model_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub build: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Relative to the output directory.
    pub artifacts: Artifacts,
    pub timings: Timings,
    pub summary: RunSummary,
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    tar2::persist::write_atomic(path, &bytes)?;
    Ok(())
}

/// Trains one configuration into `out`, writing all four artifacts.
pub fn execute_run(cfg: &RunConfig, out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    cfg.train.validate().map_err(CliError::usage)?;
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(CliError::runtime)?;
    let metrics_path = out.join(METRICS_FILE);
    let file = File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))
        .map_err(CliError::runtime)?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let mut returns = Vec::with_capacity(cfg.train.episodes);
    let trained = run_training(&cfg.train, |row: &MetricsRow| {
        returns.push(row.return_env);
        writer
            .serialize(row)
            .map_err(|e| tar2::Error::Io(std::io::Error::other(e.to_string())))
    });
    let flushed = writer.flush();
    let outcome: TrainOutcome = trained
        .with_context(|| format!("training aborted; partial metrics in {}", metrics_path.display()))
        .map_err(CliError::runtime)?;
    flushed.context("flushing metrics").map_err(CliError::runtime)?;
    let train_secs = start.elapsed().as_secs_f64();

    outcome
        .model
        .save(&out.join(MODEL_FILE))
        .and_then(|_| outcome.policy.save(&out.join(POLICY_FILE)))
        .context("writing model/policy")
        .map_err(CliError::runtime)?;
    let tail = &returns[returns.len().saturating_sub(SUCCESS_WINDOW)..];
    let manifest = RunManifest {
        build: format!("tar2 {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.train.seed,
        config: cfg.clone(),
        artifacts: Artifacts::default(),
        timings: Timings {
            train_secs,
            total_secs: start.elapsed().as_secs_f64(),
        },
        summary: RunSummary {
            episodes: outcome.successes.len(),
            final_success: trailing_mean(&outcome.successes, SUCCESS_WINDOW),
            episodes_to_0_9: outcome.episodes_to(0.9),
            mean_return_last_100: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            model_fits: outcome.model_fits,
        },
    };
    write_json_atomic(&out.join(MANIFEST_FILE), &manifest).map_err(CliError::runtime)?;
    Ok(manifest)
}

pub fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> CliResult<RunManifest> {
    let mut cfg = load_config(config).map_err(CliError::usage)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    execute_run(&cfg, out)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

/// Runs a verification suite; the caller maps `passed == false` to exit 1.
pub fn cmd_verify(suite: &str, seed: u64, inject_fault: bool) -> CliResult<VerifyReport> {
    let s: Suite = suite.parse().map_err(CliError::usage)?;
    let opts = VerifyOptions {
        seed,
        inject_fault,
        ..VerifyOptions::default()
    };
    let checks = run_suite(s, &opts).map_err(CliError::runtime)?;
    Ok(VerifyReport {
        suite: s.as_str().into(),
        seed,
        passed: checks.iter().all(CheckReport::passed),
        checks,
    })
}

/// Parses a comma list of arms, dropping repeats with a warning.
pub fn parse_arms(list: &str) -> CliResult<Vec<RedistributorKind>> {
    let mut arms = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let arm: RedistributorKind = name.parse().map_err(|e| CliError::usage(anyhow!("--arms: {e}")))?;
        if arms.contains(&arm) {
            log::warn!("duplicate arm '{arm}' ignored");
            eprintln!("warning: duplicate arm '{arm}' ignored");
        } else {
            arms.push(arm);
        }
    }
    if arms.is_empty() {
        return Err(CliError::usage(anyhow!("--arms: no arms given")));
    }
    Ok(arms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub arm: String,
    pub seed: u64,
    pub final_success: Option<f64>,
    pub episodes_to_0_9: Option<usize>,
    pub status: String,
}

pub fn run_dir(out: &Path, arm: RedistributorKind, seed: u64) -> PathBuf {
    out.join(arm.as_str()).join(format!("seed{seed}"))
}

/// Every arm × seed in turn. A failed run is recorded and the rest go on.
pub fn cmd_compare(config: &Path, arms: &str, seeds: u64, out: &Path) -> CliResult<Vec<SummaryRow>> {
    let base = load_config(config).map_err(CliError::usage)?;
    let arms = parse_arms(arms)?;
    if seeds == 0 {
        return Err(CliError::usage(anyhow!("--seeds must be at least 1")));
    }
    compare_arms(&base, &arms, seeds, out)
}

pub fn compare_arms(base: &RunConfig, arms: &[RedistributorKind], seeds: u64, out: &Path) -> CliResult<Vec<SummaryRow>> {
    fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(CliError::runtime)?;
    let mut rows = Vec::new();
    for &arm in arms {
        for seed in 0..seeds {
            let mut cfg = base.clone();
            cfg.train.redistributor = arm;
            cfg.train.seed = seed;
            let row = match execute_run(&cfg, &run_dir(out, arm, seed)) {
                Ok(m) => SummaryRow {
                    arm: arm.to_string(),
                    seed,
                    final_success: Some(m.summary.final_success),
                    episodes_to_0_9: m.summary.episodes_to_0_9,
                    status: "ok".into(),
                },
                Err(e) => {
                    eprintln!("error: {arm} seed {seed}: {e}");
                    SummaryRow {
                        arm: arm.to_string(),
                        seed,
                        final_success: None,
                        episodes_to_0_9: None,
                        status: "failed".into(),
                    }
                }
            };
            log::info!("{arm} seed {seed}: {:?}", row.final_success);
            rows.push(row);
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(CliError::runtime)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::runtime(anyhow!("{e}")))?;
    tar2::persist::write_atomic(&out.join(SUMMARY_FILE), &bytes).map_err(CliError::runtime)?;
    Ok(rows)
}

pub fn cmd_plot(metrics: &[PathBuf], out: &Path) -> CliResult<()> {
    let svg = plot::plot_metrics(metrics).map_err(|e| {
        if e.is::<plot::SchemaMismatch>() || e.downcast_ref::<csv::Error>().is_some() {
            CliError::usage(e)
        } else {
            CliError::runtime(e)
        }
    })?;
    let mut f = File::create(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(CliError::runtime)?;
    f.write_all(svg.as_bytes()).map_err(CliError::runtime)?;
    Ok(())
}
