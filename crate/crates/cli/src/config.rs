use std::path::Path;

use anyhow::{bail, Context};
use luxskim_core::synth::SynthConfigFile;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "LUXSKIM_SEED";

/// Keys accepted in a `--config` TOML file. Synthesis keys sit at top level
/// next to the feature and evaluation keys; command-line flags override them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    #[serde(flatten)]
    pub synth: SynthConfigFile,
    pub classifier: Option<Vec<String>>,
    pub scheme: Option<Vec<String>>,
    #[serde(alias = "norm")]
    pub normalization: Option<String>,
    pub margin_ms: Option<f64>,
    #[serde(alias = "folds")]
    pub k: Option<usize>,
    pub fold_seed: Option<u64>,
    pub guesses: Option<usize>,
    pub guess_curve: Option<bool>,
    pub sweep_rates: Option<Vec<f64>>,
    pub jobs: Option<usize>,
}

const ALIASES: [&str; 5] = ["pins", "env", "input", "norm", "folds"];

impl FileConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let known = serde_json::to_value(FileConfig::default())?;
        let known = known.as_object().expect("struct serializes to an object");
        let unknown: Vec<&String> = table
            .keys()
            .filter(|k| !known.contains_key(k.as_str()) && !ALIASES.contains(&k.as_str()))
            .collect();
        if !unknown.is_empty() {
            bail!(luxskim_core::Error::Config(format!(
                "unknown config keys: {}",
                unknown
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        toml::from_str(text).map_err(|e| luxskim_core::Error::Config(e.to_string()).into())
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(FileConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text)
            }
        }
    }
}

/// Flag value, then config value, then `LUXSKIM_SEED`.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<Option<u64>> {
    if let Some(s) = flag.or(file) {
        return Ok(Some(s));
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            luxskim_core::Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))
                .into()
        }),
        Err(_) => Ok(None),
    }
}
