use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, CliError};
use crate::refseg::DEFAULT_TEMPERATURE;
use crate::ridge::RidgeParams;
use crate::robust::TrainConfig;
use crate::segfeat::FeatureMode;
use crate::species::SpeciesSet;
use crate::synth::GenConfig;

/// A preset name (`irish`, `grassclover`) or an explicit class list starting with `soil`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpeciesSpec {
    Preset(String),
    Names(Vec<String>),
}

impl Default for SpeciesSpec {
    fn default() -> Self {
        SpeciesSpec::Preset("irish".into())
    }
}

impl SpeciesSpec {
    pub fn resolve(&self) -> Result<SpeciesSet, CliError> {
        match self {
            SpeciesSpec::Preset(p) => SpeciesSet::preset(p),
            SpeciesSpec::Names(n) => SpeciesSet::new(n.iter().cloned()),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Settings shared by all stages. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub species: SpeciesSpec,
    /// Asset manifest.
    pub assets: Option<PathBuf>,
    pub generator: GenConfig,
    pub temperature: f64,
    pub feature_mode: FeatureMode,
    pub ridge: RidgeParams,
    pub train: TrainConfig,
    /// Held-out share of trusted rows for sigma estimation.
    pub sigma_val_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            species: SpeciesSpec::default(),
            assets: None,
            generator: GenConfig::default(),
            temperature: DEFAULT_TEMPERATURE,
            feature_mode: FeatureMode::HlSlH,
            ridge: RidgeParams::default(),
            train: TrainConfig::default(),
            sigma_val_fraction: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(a) = cfg.assets.as_mut() {
            if a.is_relative() {
                *a = path.parent().unwrap_or(Path::new(".")).join(&*a);
            }
        }
        Ok(cfg)
    }
}

/// Attached to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the effective settings as JSON.
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new<T: Serialize>(command: &str, settings: &T, seed: Option<u64>) -> Self {
        let bytes = serde_json::to_vec(settings).expect("settings serialize");
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: hex::encode(Sha256::digest(&bytes)),
            seed,
        }
    }

    /// Writes `<file>.provenance.json` next to a CSV artifact.
    pub fn write_sidecar(&self, artifact: &Path, extra: serde_json::Value) -> Result<(), CliError> {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".provenance.json");
        let path = artifact.with_file_name(name);
        let mut v = serde_json::to_value(self).expect("provenance serializes");
        if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
            obj.extend(more);
        }
        write_json(&path, &v)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
