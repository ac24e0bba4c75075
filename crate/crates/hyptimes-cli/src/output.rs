//! Run manifests, content hashes and report/CSV writers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hyptimes::flow::SmoothSystem;
use hyptimes::systems::{builtin, parse_config, system_from_config};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::{Invocation, SystemArgs};
use crate::CliError;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// A system as recorded in a manifest: a built-in name or an inline document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
    pub params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn from_args(a: &SystemArgs) -> Result<Self, CliError> {
        let params = a.param_map();
        match (&a.system, &a.config) {
            (Some(name), None) => Ok(SystemSpec {
                builtin: Some(name.clone()),
                document: None,
                params,
            }),
            (None, Some(path)) => {
                let doc = fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
                Ok(SystemSpec {
                    builtin: None,
                    document: Some(doc),
                    params,
                })
            }
            _ => Err(CliError::Input("exactly one of --system or --config is required".into())),
        }
    }

    pub fn build(&self) -> Result<SmoothSystem, CliError> {
        match (&self.builtin, &self.document) {
            (Some(name), _) => Ok(builtin(name, &self.params)?),
            (None, Some(doc)) => {
                let mut cfg = parse_config(doc)?;
                cfg.params.extend(self.params.iter().map(|(k, v)| (k.clone(), *v)));
                Ok(system_from_config(&cfg)?)
            }
            (None, None) => Err(CliError::Input("manifest names no system".into())),
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub invocation: Invocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    /// sha256 of the canonical JSON of invocation and system.
    pub input_hash: String,
    /// sha256 of each output file, keyed by file name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(invocation: Invocation, system: Option<SystemSpec>) -> Self {
        let canonical = json!({ "invocation": &invocation, "system": &system });
        Manifest {
            tool: "hyptimes".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            input_hash: sha256_hex(canonical.to_string().as_bytes()),
            invocation,
            system,
            outputs: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub struct CsvTable {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(file: &str, header: Vec<String>) -> Self {
        CsvTable {
            file: file.into(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(CliError::io)?;
        for r in &self.rows {
            w.write_record(r).map_err(CliError::io)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Result of one command before it is written.
pub struct Outputs {
    /// Top-level report fields besides version and manifest.
    pub body: BTreeMap<String, Value>,
    pub csv: Option<CsvTable>,
    pub inconclusive: bool,
}

fn report_bytes(manifest: &Manifest, body: &BTreeMap<String, Value>) -> Result<Vec<u8>, CliError> {
    let mut top = serde_json::Map::new();
    top.insert("version".into(), json!(SCHEMA_VERSION));
    top.insert("manifest".into(), serde_json::to_value(manifest).map_err(CliError::io)?);
    for (k, v) in body {
        top.insert(k.clone(), v.clone());
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(top)).map_err(CliError::io)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Writes report.json, the CSV table and manifest.json into `dir`, or prints
/// to stdout when no directory is given. Returns the manifest with output hashes.
pub fn emit(mut manifest: Manifest, out: &Outputs, dir: Option<&Path>) -> Result<Manifest, CliError> {
    let report = report_bytes(&manifest, &out.body)?;
    let csv = out.csv.as_ref().map(|t| t.to_bytes().map(|b| (t.file.clone(), b))).transpose()?;
    match dir {
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            let bytes = if out.body.is_empty() {
                csv.map(|c| c.1).unwrap_or_default()
            } else {
                report
            };
            stdout.write_all(&bytes).map_err(CliError::io)?;
        }
        Some(d) => {
            fs::create_dir_all(d).map_err(CliError::io)?;
            if !out.body.is_empty() {
                fs::write(d.join("report.json"), &report).map_err(CliError::io)?;
                manifest.outputs.insert("report.json".into(), sha256_hex(&report));
            }
            if let Some((name, bytes)) = csv {
                fs::write(d.join(&name), &bytes).map_err(CliError::io)?;
                manifest.outputs.insert(name, sha256_hex(&bytes));
            }
            let mut m = serde_json::to_string_pretty(&manifest).map_err(CliError::io)?;
            m.push('\n');
            fs::write(d.join("manifest.json"), m).map_err(CliError::io)?;
        }
    }
    Ok(manifest)
}
