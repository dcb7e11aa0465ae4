//! Reproducible batch runner for the ECD numerical lab.
//!
//! A scenario is a TOML document with a `schema` version, a `kind` and the
//! sections that kind needs. `run` validates it, dispatches to `ecd-core`,
//! and writes CSV tables plus `manifest.json` into the output directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ecd_core::EcdError;
use thiserror::Error;

pub mod config;
pub mod kinds;
pub mod report;

pub use config::{load, load_str, validate, Diagnostic, Scenario, ScenarioParams, KINDS};
pub use report::{Check, RunManifest};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ECD_LAB_OUT";
pub const DEFAULT_OUT_DIR: &str = "ecd-out";

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid scenario:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
    #[error("numerical failure: {0}")]
    Numeric(EcdError),
    #[error("accuracy failure: {0}")]
    Accuracy(String),
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Io { .. } => 1,
            LabError::Validation(_) => 2,
            LabError::Numeric(_) => 3,
            LabError::Accuracy(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, e: csv::Error) -> Self {
        Self::io(path, e.into())
    }
}

impl From<EcdError> for LabError {
    fn from(e: EcdError) -> Self {
        match e {
            EcdError::Accuracy { .. } => LabError::Accuracy(e.to_string()),
            other => LabError::Numeric(other),
        }
    }
}

fn format_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

/// Where outputs go: the flag, then the scenario's `output.dir`, then
/// `$ECD_LAB_OUT`, then `./ecd-out`.
pub fn output_dir(flag: Option<&Path>, scenario: &Scenario) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` means all available cores.
    pub workers: Option<usize>,
    pub overrides: Vec<String>,
}

/// Runs one scenario file. The manifest is written even when gating checks
/// fail; the caller decides the exit status from `RunManifest::passed`.
pub fn run(path: &Path, opts: &RunOptions) -> Result<RunManifest, LabError> {
    let scenario = load(path, &opts.overrides)?;
    let dir = output_dir(opts.out_dir.as_deref(), &scenario);
    std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let workers = opts
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(LabError::Validation(vec![Diagnostic::general("--workers must be at least 1")]));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| LabError::io(&dir, std::io::Error::other(e)))?;

    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let clock = Instant::now();
    let report = pool.install(|| kinds::execute(&scenario.params, &dir))?;
    let wall = clock.elapsed().as_secs_f64();

    let passed = report.checks.iter().all(|c| c.passed || !c.gating);
    let manifest = RunManifest {
        manifest_schema: report::MANIFEST_SCHEMA,
        tool: env!("CARGO_PKG_NAME").to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_path: path.display().to_string(),
        scenario_kind: scenario.kind.clone(),
        scenario_name: scenario.name.clone(),
        overrides: opts.overrides.clone(),
        scenario: serde_json::to_value(&scenario.document).unwrap_or(serde_json::Value::Null),
        started_at,
        wall_time_seconds: wall,
        workers,
        tolerances: report.tolerances,
        checks: report.checks,
        diagnostics: report.diagnostics,
        outputs: report.outputs,
        passed,
    };
    manifest.write(&dir)?;
    Ok(manifest)
}
