use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::Validation;

/// Flat experiment manifest. Every key has a matching command-line flag, and
/// flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub quality: Option<PathBuf>,
    pub default_quality: Option<f64>,
    pub docs: Option<PathBuf>,
    /// `name=path` or a bare path.
    pub qrels: Option<Vec<String>>,
    pub queries: Option<Vec<String>>,
    pub policies: Option<Vec<String>>,
    pub traces: Option<Vec<PathBuf>>,
    pub checkpoint_interval: Option<usize>,
    pub budget: Option<usize>,
    pub rng_seed: Option<u64>,
    pub baseline: Option<String>,
    pub alpha: Option<f64>,
    pub normalized_max_ndcg: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Validation(format!("config {}: {e}", path.display())))?;
        let cfg = toml::from_str(&text).map_err(|e| Validation(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }
}

/// A named input file given as `name=path` or `path`. A bare path is named
/// after its file name with any `qrels.`/`queries.` prefix and the extension
/// removed.
#[derive(Clone, Debug, PartialEq)]
pub struct Named {
    pub name: String,
    pub path: PathBuf,
}

pub fn parse_named(spec: &str) -> Named {
    if let Some((name, path)) = spec.split_once('=') {
        return Named {
            name: name.to_string(),
            path: PathBuf::from(path),
        };
    }
    let path = PathBuf::from(spec);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
    let name = stem
        .strip_prefix("qrels.")
        .or_else(|| stem.strip_prefix("queries."))
        .unwrap_or(stem);
    Named {
        name: name.to_string(),
        path,
    }
}

/// Flag value if present, else the config value.
pub fn pick<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

/// Repeated flag values if any were given, else the config list.
pub fn pick_list<T>(flag: Vec<T>, config: Option<Vec<T>>) -> Vec<T> {
    if flag.is_empty() {
        config.unwrap_or_default()
    } else {
        flag
    }
}

pub fn require<T>(value: Option<T>, key: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| Validation(format!("missing `{key}` (flag or config key)")).into())
}

pub fn existing(path: PathBuf) -> anyhow::Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Validation(format!("{} does not exist", path.display())).into())
    }
}
