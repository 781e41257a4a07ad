//! Experiment output and the checks that decide the exit code.

use anyhow::Result;
use serde_json::{Map, Value, json};

use crate::config::ExperimentConfig;

/// One embedded assertion of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// Complete file contents: CSV with a leading comment line, or JSON.
    pub body: String,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// `# config-hash=<hex> key=value ...` for the top of a CSV file.
pub fn config_comment(cfg: &ExperimentConfig) -> String {
    let pairs: Vec<String> = cfg.resolved().iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("# config-hash={} {}\n", cfg.hash(), pairs.join(" "))
}

/// RFC-4180 CSV with a header row, after the config comment line.
pub fn csv_body(cfg: &ExperimentConfig, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let data = String::from_utf8(w.into_inner()?)?;
    Ok(config_comment(cfg) + &data)
}

/// Pretty JSON object with `config_hash` and `config` ahead of `fields`.
pub fn json_body(cfg: &ExperimentConfig, fields: Map<String, Value>) -> Result<String> {
    let config: Map<String, Value> =
        cfg.resolved().into_iter().map(|(k, v)| (k, Value::String(v))).collect();
    let mut top = Map::new();
    top.insert("config_hash".into(), json!(cfg.hash()));
    top.insert("config".into(), Value::Object(config));
    top.extend(fields);
    Ok(serde_json::to_string_pretty(&Value::Object(top))? + "\n")
}

/// Shortest round-trip decimal form, `inf` for infinities.
pub fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}
