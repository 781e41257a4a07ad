//! Flat `key=value` experiment configuration.
//!
//! Resolution order, lowest to highest: built-in defaults, `DPSECMUL_SEED`,
//! the config file, `--set` pairs, then the dedicated `--seed`/`--workers`
//! flags. Keys an experiment does not know are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result, anyhow, bail};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "DPSECMUL_SEED";
const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Tradeoff,
    Gap,
    Converse,
    Precision,
    Matrix,
    Eval,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Tradeoff => "tradeoff",
            Experiment::Gap => "gap",
            Experiment::Converse => "converse",
            Experiment::Precision => "precision",
            Experiment::Matrix => "matrix",
            Experiment::Eval => "eval",
        }
    }

    /// Every key the experiment accepts, with its default.
    pub fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Experiment::Tradeoff => &[
                ("eta", "1"),
                ("t", "2"),
                ("n_nodes", "3"),
                ("eps_min", "0.2"),
                ("eps_max", "8"),
                ("eps_points", "20"),
                ("sigma_sq_min", "0.01"),
                ("sigma_sq_max", "100"),
                ("sigma_points", "25"),
            ],
            Experiment::Gap => &[
                ("eta", "1"),
                ("t_values", "2,3,4"),
                ("n_values", "10,100,1000,10000"),
                ("scheme_dir", ""),
            ],
            Experiment::Converse => &[("n_codes", "1000"), ("t_max", "4"), ("eta", "1")],
            Experiment::Precision => &[
                ("schemes", "shamir_real,layered"),
                ("t", "1"),
                ("delta_log2", "-4,-6,-8,-10,-12,-14"),
                ("eta", "1"),
                ("x", "1"),
                ("min_samples", "200000"),
                ("samples_per_inv_delta", "200"),
                ("max_bits", "52"),
            ],
            Experiment::Matrix => &[
                ("m", "3"),
                ("l", "3"),
                ("k", "3"),
                ("n_samples", "1000000"),
                ("eta", "1"),
                ("t", "2"),
                ("x", "1"),
                ("alpha1", "0.1"),
            ],
            Experiment::Eval => &[("t", "1")],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub workers: usize,
    pub output_path: Option<PathBuf>,
    pub overrides: BTreeMap<String, String>,
}

/// Raw inputs before resolution.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    /// Value of `DPSECMUL_SEED`, if set.
    pub env_seed: Option<String>,
}

impl ConfigSources {
    pub fn from_env() -> Self {
        ConfigSources { env_seed: std::env::var(SEED_ENV).ok(), ..Default::default() }
    }
}

/// Parses `key=value` lines; `#` starts a comment line, blank lines are skipped.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_pair(line).with_context(|| format!("{origin}:{}", no + 1))?);
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got {s:?}"))?;
    let k = k.trim();
    if k.is_empty() {
        bail!("empty key in {s:?}");
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("bad value for {key}: {v:?} ({e})"))
}

impl ExperimentConfig {
    pub fn resolve(experiment: Experiment, src: &ConfigSources) -> Result<Self> {
        let mut seed = match &src.env_seed {
            Some(s) => parse_value::<u64>(SEED_ENV, s)?,
            None => 0,
        };
        let mut workers = DEFAULT_WORKERS;
        let mut output_path = None;
        let mut overrides: BTreeMap<String, String> = experiment
            .defaults()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();

        let mut pairs = Vec::new();
        if let Some(path) = &src.file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            pairs.extend(parse_pairs(&text, &path.display().to_string())?);
        }
        for s in &src.sets {
            pairs.push(parse_pair(s).context("--set")?);
        }
        for (k, v) in pairs {
            match k.as_str() {
                "seed" => seed = parse_value(&k, &v)?,
                "workers" => workers = parse_value(&k, &v)?,
                "out" => output_path = Some(PathBuf::from(v)),
                _ if overrides.contains_key(&k) => {
                    overrides.insert(k, v);
                }
                _ => {
                    let known: Vec<&str> = experiment.defaults().iter().map(|(k, _)| *k).collect();
                    bail!(
                        "unknown key {k:?} for {experiment}; accepted: seed, workers, out, {}",
                        known.join(", ")
                    );
                }
            }
        }
        if let Some(s) = src.seed {
            seed = s;
        }
        if let Some(w) = src.workers {
            workers = w;
        }
        if src.out.is_some() {
            output_path = src.out.clone();
        }
        if workers == 0 {
            bail!("workers must be at least 1");
        }
        Ok(ExperimentConfig { experiment, seed, workers, output_path, overrides })
    }

    /// Every setting that influences the results, sorted by key.
    pub fn resolved(&self) -> Vec<(String, String)> {
        let mut all: Vec<(String, String)> = vec![
            ("experiment".into(), self.experiment.name().into()),
            ("seed".into(), self.seed.to_string()),
            ("workers".into(), self.workers.to_string()),
        ];
        all.extend(self.overrides.iter().map(|(k, v)| (k.clone(), v.clone())));
        all.sort();
        all
    }

    /// SHA-256 of the resolved `key=value` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.resolved() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.overrides
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| anyhow!("missing key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        parse_value(key, self.raw(key)?)
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        self.raw(key)
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',').map(|v| parse_value(key, v.trim())).collect()
    }

    pub fn output_path(&self) -> Option<&Path> {
        self.output_path.as_deref()
    }
}
