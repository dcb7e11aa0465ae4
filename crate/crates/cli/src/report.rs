//! Run artifacts: CSV tables and the JSON manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::LabError;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// value ≤ tolerance
    #[serde(rename = "<=")]
    AtMost,
    /// value ≥ tolerance
    #[serde(rename = ">=")]
    AtLeast,
    /// |value − target| ≤ tolerance
    #[serde(rename = "within")]
    Within,
}

/// A number in the report together with the tolerance it is judged by.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Fit window for slopes and trends.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Gating checks decide the exit status; the others are recorded only.
    pub gating: bool,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self::build(name, value, Relation::AtMost, tolerance, None, value <= tolerance)
    }

    pub fn at_least(name: &str, value: f64, tolerance: f64) -> Self {
        Self::build(name, value, Relation::AtLeast, tolerance, None, value >= tolerance)
    }

    pub fn within(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        let ok = (value - target).abs() <= tolerance;
        Self::build(name, value, Relation::Within, tolerance, Some(target), ok)
    }

    fn build(name: &str, value: f64, relation: Relation, tolerance: f64, target: Option<f64>, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            value,
            relation,
            tolerance,
            target,
            window: None,
            gating: true,
            passed,
        }
    }

    pub fn over(mut self, window: [f64; 2]) -> Self {
        self.window = Some(window);
        self
    }

    /// Recorded, but does not affect the exit status.
    pub fn informational(mut self) -> Self {
        self.gating = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub columns: Vec<String>,
    pub rows: usize,
}

/// What a scenario kind hands back to the runner.
#[derive(Debug, Default)]
pub struct KindReport {
    pub checks: Vec<Check>,
    /// Every tolerance and tail bound the computation used.
    pub tolerances: BTreeMap<String, f64>,
    /// Quadrature and solver diagnostics, free-form.
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<OutputFile>,
}

impl KindReport {
    pub fn tolerance(&mut self, key: &str, v: f64) {
        self.tolerances.insert(key.to_string(), v);
    }

    pub fn diagnostic(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).unwrap_or(serde_json::Value::Null);
        self.diagnostics.insert(key.to_string(), v);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub manifest_schema: u32,
    pub tool: String,
    pub tool_version: String,
    pub scenario_path: String,
    pub scenario_kind: String,
    pub scenario_name: Option<String>,
    pub overrides: Vec<String>,
    /// The scenario document after overrides.
    pub scenario: serde_json::Value,
    pub started_at: String,
    pub wall_time_seconds: f64,
    pub workers: usize,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub diagnostics: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<OutputFile>,
    pub passed: bool,
}

impl RunManifest {
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.gating && !c.passed).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, LabError> {
        let path = dir.join(MANIFEST_FILE);
        let file = File::create(&path).map_err(|e| LabError::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self).map_err(|e| LabError::io(&path, e.into()))?;
        Ok(path)
    }
}

/// Shortest round-trip form; scientific notation outside [1e-5, 1e16).
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

/// Writes an RFC 4180 table. Floats use the shortest representation that
/// round-trips, so identical inputs give identical bytes.
pub fn write_table(dir: &Path, name: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<OutputFile, LabError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| LabError::csv(&path, e))?;
    w.write_record(columns).map_err(|e| LabError::csv(&path, e))?;
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        w.write_record(row.iter().copied().map(format_f64))
            .map_err(|e| LabError::csv(&path, e))?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))?;
    Ok(OutputFile {
        path: name.to_string(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
        rows: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let xs = [0.1 + 0.2, -1.0 / 3.0, 1e-300, 4.87890977618477e-19, 6.02e23, -0.0, 1.0, f64::INFINITY];
        write_table(dir.path(), "t.csv", &["x"], &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        let back: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
        for (a, b) in xs.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn check_relations() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_least("b", 0.5, 1.0).passed);
        assert!(Check::within("c", -1.01, -1.0, 0.02).passed);
        assert!(!Check::within("d", -3.98, -5.0, 0.5).informational().gating);
    }
}
