//! Run configuration: one TOML file per run, with an `include` key for
//! shared defaults and a single root seed fanned out to every component.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::SweepLevels;
use crate::attack::AttackConfig;
use crate::channel::ChannelParams;
use crate::countermeasure::{AugmentRanges, TrainOptions};
use crate::scene::{ObjectId, SceneConfig, StereoRig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("cannot parse config {0}: {1}")]
    Parse(PathBuf, toml::de::Error),
    #[error("config include cycle involving {0}")]
    IncludeCycle(PathBuf),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Detector family selection and its knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// "template" or "linear".
    pub kind: String,
    pub classes: Vec<ObjectId>,
    pub logistic_a: f64,
    pub logistic_b: f64,
    pub linear_epochs: usize,
    pub linear_lr: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kind: "template".into(),
            classes: ObjectId::all().to_vec(),
            logistic_a: crate::detector::LOGISTIC_A_DEFAULT,
            logistic_b: crate::detector::LOGISTIC_B_DEFAULT,
            linear_epochs: 200,
            linear_lr: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    pub albedos: Vec<[f64; 3]>,
    pub repeats: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            albedos: vec![
                [0.0, 0.0, 0.0],
                [0.1, 0.1, 0.1],
                [0.3, 0.3, 0.3],
                [0.5, 0.5, 0.5],
                [0.7, 0.7, 0.7],
                [0.9, 0.9, 0.9],
                [1.0, 1.0, 1.0],
            ],
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub objects: Vec<ObjectId>,
    /// Attack method names: "dpatch_like" / "nap_like".
    pub methods: Vec<String>,
    /// Detector kinds to cross-evaluate ("template", "linear").
    pub detectors: Vec<String>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            objects: vec![ObjectId::Car, ObjectId::Cup],
            methods: vec!["dpatch_like".into(), "nap_like".into()],
            detectors: vec!["template".into(), "linear".into()],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CountermeasureConfig {
    pub projected_count: usize,
    pub clean_count: usize,
    pub augment_copies: usize,
    pub augment: AugmentRanges,
    pub train: TrainOptions,
    pub gate_threshold: f64,
}

impl Default for CountermeasureConfig {
    fn default() -> Self {
        CountermeasureConfig {
            projected_count: 338,
            clean_count: 324,
            augment_copies: 0,
            augment: AugmentRanges::default(),
            train: TrainOptions::default(),
            gate_threshold: 0.5,
        }
    }
}

/// The full run configuration. Every section has defaults, so an empty
/// file is a valid config.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; fanned out to the attack, channel, and countermeasure
    /// components by `apply_root_seed`.
    pub seed: Option<u64>,
    pub scene: SceneConfig,
    pub rig: StereoRig,
    pub channel: ChannelParams,
    pub attack: AttackConfig,
    pub detector: DetectorConfig,
    pub sweep: SweepLevels,
    pub surface: SurfaceConfig,
    pub transfer: TransferConfig,
    pub countermeasure: CountermeasureConfig,
}

impl RunConfig {
    /// Pushes the root seed (when set) into every seeded component, with
    /// fixed per-component offsets so their streams never alias.
    pub fn apply_root_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.attack.seed = seed;
            self.channel.seed = seed ^ 0xC4A7;
            self.countermeasure.train.seed = seed ^ 0xCE11;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scene.validate().map_err(ConfigError::Invalid)?;
        self.channel.validate().map_err(ConfigError::Invalid)?;
        self.attack
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.detector.kind.as_str() {
            "template" | "linear" => {}
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown detector kind '{other}' (expected 'template' or 'linear')"
                )))
            }
        }
        for m in &self.transfer.methods {
            if m != "dpatch_like" && m != "nap_like" {
                return Err(ConfigError::Invalid(format!(
                    "unknown attack method '{m}'"
                )));
            }
        }
        for d in &self.transfer.detectors {
            if d != "template" && d != "linear" {
                return Err(ConfigError::Invalid(format!(
                    "unknown transfer detector '{d}'"
                )));
            }
        }
        if self.countermeasure.projected_count == 0 || self.countermeasure.clean_count == 0 {
            return Err(ConfigError::Invalid(
                "countermeasure dataset needs both classes".into(),
            ));
        }
        Ok(())
    }
}

/// Deep merge: `over` wins on scalars and arrays; tables merge key-wise.
fn merge_toml(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing) => merge_toml(existing, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}

fn load_value(path: &Path, seen: &mut BTreeSet<PathBuf>) -> Result<toml::Value, ConfigError> {
    let canonical = path
        .canonicalize()
        .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    if !seen.insert(canonical.clone()) {
        return Err(ConfigError::IncludeCycle(canonical));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    let mut value: toml::Value = text
        .parse()
        .map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;

    let include = value
        .as_table()
        .and_then(|t| t.get("include"))
        .and_then(|v| v.as_str())
        .map(str::to_owned);
    if let Some(table) = value.as_table_mut() {
        table.remove("include");
    }
    if let Some(rel) = include {
        let parent = path.parent().unwrap_or_else(|| Path::new("."));
        let included = load_value(&parent.join(rel), seen)?;
        value = merge_toml(included, value);
    }
    Ok(value)
}

/// Loads a config file, resolving `include` chains (the including file
/// overrides included values, key by key).
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let mut seen = BTreeSet::new();
    let value = load_value(path, &mut seen)?;
    let mut cfg: RunConfig = value
        .try_into()
        .map_err(|e| ConfigError::Parse(path.to_path_buf(), e))?;
    cfg.apply_root_seed();
    cfg.validate()?;
    Ok(cfg)
}
