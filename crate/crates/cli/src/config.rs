//! Scenario documents: parsing, overrides and schema validation.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::kinds::{
    ClassicalLimitSweep, ClassicalOrbit, ConservationAudit, CurrentRegularization, FreeEcd, GuidingRun, LwFieldMap,
};
use crate::LabError;

pub const SCHEMA_VERSION: i64 = 1;

pub const KINDS: [&str; 7] = [
    "classical-orbit",
    "lw-field-map",
    "conservation-audit",
    "free-ecd",
    "guiding-run",
    "classical-limit-sweep",
    "current-regularization",
];

/// One problem found in a scenario document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted key path, when the problem belongs to a key.
    pub path: Option<String>,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl Diagnostic {
    pub fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: Some(path.into()),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            path: None,
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// Collects diagnostics for one section of a document.
#[derive(Debug, Default)]
pub struct Checker {
    pub diagnostics: Vec<Diagnostic>,
}

impl Checker {
    pub fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0) || !v.is_finite() {
            self.diagnostics.push(Diagnostic::at(path, format!("{path} must be positive (got {v})")));
        }
    }

    pub fn finite(&mut self, path: &str, vs: &[f64]) {
        if vs.iter().any(|v| !v.is_finite()) {
            self.diagnostics.push(Diagnostic::at(path, format!("{path} must be finite")));
        }
    }

    pub fn require(&mut self, ok: bool, path: &str, message: impl Into<String>) {
        if !ok {
            self.diagnostics.push(Diagnostic::at(path, format!("{path} {}", message.into())));
        }
    }

    pub fn missing(&mut self, path: &str, why: &str) {
        self.diagnostics.push(Diagnostic::at(path, format!("missing section [{path}] ({why})")));
    }
}

/// Per-kind parameter block.
pub trait Params: DeserializeOwned + Serialize {
    fn check(&self, c: &mut Checker);
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum ScenarioParams {
    ClassicalOrbit(ClassicalOrbit),
    LwFieldMap(LwFieldMap),
    ConservationAudit(ConservationAudit),
    FreeEcd(FreeEcd),
    GuidingRun(GuidingRun),
    ClassicalLimitSweep(ClassicalLimitSweep),
    CurrentRegularization(CurrentRegularization),
}

/// A validated scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub schema: i64,
    pub kind: String,
    pub name: Option<String>,
    /// Output directory requested by the document itself.
    pub output_dir: Option<String>,
    pub params: ScenarioParams,
    /// The document after overrides, echoed into the manifest.
    #[serde(skip)]
    pub document: Table,
}

/// Replaces or inserts `key.path = value` in the document tree. The value
/// is read as a TOML literal, falling back to a bare string.
pub fn apply_override(doc: &mut Table, spec: &str) -> Result<(), Diagnostic> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Diagnostic::general(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Diagnostic::general(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Diagnostic::at(
                    parts[..=i].join("."),
                    format!("override `{key}`: {} is not a table", parts[..=i].join(".")),
                ))
            }
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses the raw text; syntax errors carry line and column.
pub fn parse_document(text: &str) -> Result<Table, Diagnostic> {
    text.parse::<Table>().map_err(|e| {
        let (line, column) = e.span().map(|s| line_column(text, s.start)).unzip();
        Diagnostic {
            path: None,
            line,
            column,
            message: format!("parse error: {}", e.message().trim_end()),
        }
    })
}

fn typed<P: Params>(body: Table, diags: &mut Vec<Diagnostic>) -> Option<P> {
    match serde_path_to_error::deserialize::<_, P>(body) {
        Ok(p) => {
            let mut c = Checker::default();
            p.check(&mut c);
            diags.extend(c.diagnostics);
            Some(p)
        }
        Err(e) => {
            let path = e.path().to_string();
            let msg = e.inner().message().trim_end().to_string();
            diags.push(if path == "." {
                Diagnostic::general(msg)
            } else {
                Diagnostic::at(path.clone(), format!("{path}: {msg}"))
            });
            None
        }
    }
}

fn header(doc: &mut Table, diags: &mut Vec<Diagnostic>) -> (Option<String>, Option<String>, Option<String>) {
    match doc.remove("schema") {
        None => diags.push(Diagnostic::at("schema", format!("missing key `schema` (expected {SCHEMA_VERSION})"))),
        Some(Value::Integer(v)) if v == SCHEMA_VERSION => {}
        Some(v) => diags.push(Diagnostic::at(
            "schema",
            format!("unsupported schema {v}; this build reads schema {SCHEMA_VERSION}"),
        )),
    }
    let allowed = KINDS.join(", ");
    let kind = match doc.remove("kind") {
        None => {
            diags.push(Diagnostic::at("kind", format!("missing key `kind`; allowed kinds: {allowed}")));
            None
        }
        Some(Value::String(k)) if KINDS.contains(&k.as_str()) => Some(k),
        Some(v) => {
            diags.push(Diagnostic::at(
                "kind",
                format!("unknown kind {v}; allowed kinds: {allowed}"),
            ));
            None
        }
    };
    let mut string_key = |key: &str| match doc.remove(key) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(v) => {
            diags.push(Diagnostic::at(key, format!("{key} must be a string (got {v})")));
            None
        }
    };
    let name = string_key("name");
    let output_dir = match doc.remove("output") {
        None => None,
        Some(Value::Table(mut t)) => {
            let dir = match t.remove("dir") {
                Some(Value::String(s)) => Some(s),
                None => None,
                Some(v) => {
                    diags.push(Diagnostic::at("output.dir", format!("output.dir must be a string (got {v})")));
                    None
                }
            };
            for k in t.keys() {
                diags.push(Diagnostic::at(format!("output.{k}"), format!("output.{k}: unknown key")));
            }
            dir
        }
        Some(_) => {
            diags.push(Diagnostic::at("output", "output must be a table"));
            None
        }
    };
    (kind, name, output_dir)
}

/// Parses, overrides and validates a scenario held in memory.
pub fn load_str(text: &str, overrides: &[String]) -> Result<Scenario, Vec<Diagnostic>> {
    if text.trim().is_empty() {
        return Err(vec![Diagnostic::general("scenario file is empty")]);
    }
    let mut doc = parse_document(text).map_err(|d| vec![d])?;
    let mut diags = Vec::new();
    for o in overrides {
        if let Err(d) = apply_override(&mut doc, o) {
            diags.push(d);
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let echo = doc.clone();
    let (kind, name, output_dir) = header(&mut doc, &mut diags);
    let Some(kind) = kind else {
        return Err(diags);
    };
    let params = match kind.as_str() {
        "classical-orbit" => typed(doc, &mut diags).map(ScenarioParams::ClassicalOrbit),
        "lw-field-map" => typed(doc, &mut diags).map(ScenarioParams::LwFieldMap),
        "conservation-audit" => typed(doc, &mut diags).map(ScenarioParams::ConservationAudit),
        "free-ecd" => typed(doc, &mut diags).map(ScenarioParams::FreeEcd),
        "guiding-run" => typed(doc, &mut diags).map(ScenarioParams::GuidingRun),
        "classical-limit-sweep" => typed(doc, &mut diags).map(ScenarioParams::ClassicalLimitSweep),
        "current-regularization" => typed(doc, &mut diags).map(ScenarioParams::CurrentRegularization),
        _ => unreachable!("kind checked against KINDS"),
    };
    match params {
        Some(params) if diags.is_empty() => Ok(Scenario {
            schema: SCHEMA_VERSION,
            kind,
            name,
            output_dir,
            params,
            document: echo,
        }),
        _ => Err(diags),
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, LabError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_str(&text, overrides).map_err(LabError::Validation)
}

/// Schema check only; an empty list means the file is valid.
pub fn validate(path: &Path) -> Result<Vec<Diagnostic>, LabError> {
    match load(path, &[]) {
        Ok(_) => Ok(Vec::new()),
        Err(LabError::Validation(d)) => Ok(d),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_creates_nested_keys() {
        let mut t = Table::new();
        apply_override(&mut t, "calibration.epsilon=1e-2").unwrap();
        apply_override(&mut t, "name = run-a").unwrap();
        assert_eq!(t["calibration"]["epsilon"].as_float(), Some(1e-2));
        assert_eq!(t["name"].as_str(), Some("run-a"));
        assert!(apply_override(&mut t, "calibration.epsilon.x=1").is_err());
        assert!(apply_override(&mut t, "novalue").is_err());
    }

    #[test]
    fn parse_errors_carry_position() {
        let d = parse_document("schema = 1\nkind = \n").unwrap_err();
        assert_eq!(d.line, Some(2));
        assert!(d.column.is_some());
    }

    #[test]
    fn empty_document_is_invalid() {
        let d = load_str("  \n", &[]).unwrap_err();
        assert_eq!(d[0].message, "scenario file is empty");
    }

    #[test]
    fn unknown_kind_lists_allowed() {
        let d = load_str("schema = 1\nkind = \"free-ec\"\n", &[]).unwrap_err();
        assert!(d[0].message.contains("allowed kinds"));
        assert!(KINDS.iter().all(|k| d[0].message.contains(k)));
    }
}
