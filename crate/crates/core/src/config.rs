//! Flat, dotted-key run configuration.
//!
//! Files are TOML; nested tables and dotted keys are equivalent
//! (`[train] epochs = 3` is `train.epochs = 3`). Every key must be known,
//! and the fully resolved configuration can be written back as one
//! sorted `key = value` line per setting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::data::{AugmentConfig, Extractor, Normalization, SplitSpec, MULTISCALE_SET};
use crate::encoder::{BackboneConfig, BackboneVariant};
use crate::error::{Error, Result};
use crate::layers::Activation;
use crate::losses::LossConfig;
use crate::mbg_decoder::Refinement;
use crate::metrics::{EMeasureInput, EvalProtocol};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: BackboneVariant,
    pub channels: usize,
    /// Backbone weights (safetensors); empty for random initialization.
    pub pretrained_weights: String,
    pub dse_on: bool,
    pub mbg_on: bool,
    pub mbg_left_on: bool,
    pub mbg_right_on: bool,
    pub boundary_source_level: usize,
    pub output_stage: usize,
    pub refinement: Refinement,
    pub dilated_activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self::from_model(&ModelConfig::default())
    }
}

impl ModelSection {
    pub fn from_model(m: &ModelConfig) -> Self {
        Self {
            backbone: m.backbone.variant,
            channels: m.backbone.common_channels,
            pretrained_weights: m
                .backbone
                .pretrained_weights_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            dse_on: m.dse_on,
            mbg_on: m.mbg_on,
            mbg_left_on: m.mbg_left_on,
            mbg_right_on: m.mbg_right_on,
            boundary_source_level: m.boundary_source_level,
            output_stage: m.output_stage,
            refinement: m.refinement,
            dilated_activation: m.dilated_activation,
        }
    }

    pub fn to_model(&self) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                variant: self.backbone,
                common_channels: self.channels,
                pretrained_weights_path: (!self.pretrained_weights.is_empty())
                    .then(|| PathBuf::from(&self.pretrained_weights)),
            },
            dse_on: self.dse_on,
            mbg_on: self.mbg_on,
            mbg_left_on: self.mbg_left_on,
            mbg_right_on: self.mbg_right_on,
            boundary_source_level: self.boundary_source_level,
            output_stage: self.output_stage,
            refinement: self.refinement,
            dilated_activation: self.dilated_activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables.
    pub gradient_clip: f64,
    /// `constant` or `cosine`.
    pub lr_schedule: String,
    pub image_size: usize,
    pub scales: Vec<f64>,
    /// Stop after this many optimizer steps; 0 means run all epochs.
    pub max_steps: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Validate every N epochs when a test split exists; 0 disables.
    pub val_every: usize,
    pub workers: usize,
    /// `cpu`; overridden by the `BSNET_DEVICE` environment variable in the CLI.
    pub device: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 90,
            batch_size: 8,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            gradient_clip: 0.0,
            lr_schedule: "constant".into(),
            image_size: 352,
            scales: MULTISCALE_SET.to_vec(),
            max_steps: 0,
            seed: 0,
            deterministic: false,
            val_every: 1,
            workers: 4,
            device: "cpu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Ingested dataset root.
    pub root: String,
    /// Raw sources for `prepare`, each `id=path` or a path.
    pub sources: Vec<String>,
    pub extractor: Extractor,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let split = SplitSpec::default();
        Self {
            root: "data".into(),
            sources: Vec::new(),
            extractor: split.extractor,
            test_fraction: split.test_fraction,
            split_seed: split.seed,
        }
    }
}

impl DataSection {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: self.split_seed,
            test_fraction: self.test_fraction,
            extractor: self.extractor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f32,
    /// `binarized` or `continuous`.
    pub e_measure: String,
    pub s_alpha: f64,
    pub overlays: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = EvalProtocol::default();
        Self {
            threshold: p.threshold,
            e_measure: "binarized".into(),
            s_alpha: p.s_alpha,
            overlays: true,
        }
    }
}

impl EvalSection {
    pub fn protocol(&self) -> Result<EvalProtocol> {
        let e_measure = match self.e_measure.as_str() {
            "binarized" => EMeasureInput::Binarized,
            "continuous" => EMeasureInput::Continuous,
            other => {
                return Err(Error::config(
                    "eval.e_measure",
                    format!("expected binarized or continuous, got `{other}`"),
                ))
            }
        };
        Ok(EvalProtocol {
            threshold: self.threshold,
            e_measure,
            s_alpha: self.s_alpha,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub images: usize,
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            images: 100,
            warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossConfig,
    pub data: DataSection,
    pub augment: AugmentConfig,
    pub norm: Normalization,
    pub eval: EvalSection,
    pub bench: BenchSection,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn unflatten(flat: &BTreeMap<String, Value>) -> toml::Table {
    let mut root = toml::Table::new();
    for (key, value) in flat {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().expect("non-empty key");
        let mut table = &mut root;
        for p in parts {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| Value::Table(toml::Table::new()))
                .as_table_mut()
                .expect("known keys never overlap a table");
        }
        table.insert(last.to_string(), value.clone());
    }
    root
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Converts between integer and float where the default's type asks for it.
fn coerce(value: Value, like: &Value) -> Value {
    match (&value, like) {
        (Value::Integer(i), Value::Float(_)) => Value::Float(*i as f64),
        (Value::Array(items), Value::Array(defaults)) if defaults.first().is_some_and(Value::is_float) => {
            Value::Array(items.iter().map(|v| coerce(v.clone(), &Value::Float(0.0))).collect())
        }
        _ => value,
    }
}

impl RunConfig {
    fn defaults_flat() -> BTreeMap<String, Value> {
        let table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        flat
    }

    /// Every valid dotted key with its default value.
    pub fn known_keys() -> Vec<String> {
        Self::defaults_flat().into_keys().collect()
    }

    /// Applies `key=value` pairs over the file (if any) over the defaults.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let defaults = Self::defaults_flat();
        let mut flat = defaults.clone();
        let mut set = |key: String, value: Value| -> Result<()> {
            let Some(default) = defaults.get(&key) else {
                return Err(Error::config(key, "unknown configuration key"));
            };
            flat.insert(key, coerce(value, default));
            Ok(())
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
            let mut from_file = BTreeMap::new();
            flatten("", &table, &mut from_file);
            for (k, v) in from_file {
                set(k, v)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o.clone(), "override must be key=value"))?;
            set(k.trim().to_string(), parse_value(v))?;
        }
        let nested = unflatten(&flat);
        let cfg: RunConfig = nested.try_into().map_err(|e: toml::de::Error| {
            let msg = e.to_string();
            let key = flat
                .keys()
                .find(|k| msg.contains(k.rsplit('.').next().unwrap_or(k)))
                .cloned()
                .unwrap_or_else(|| "config".into());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_model().validate()?;
        self.augment.validate()?;
        self.eval.protocol()?;
        let t = &self.train;
        let positive = [
            ("train.epochs", t.epochs as f64),
            ("train.batch_size", t.batch_size as f64),
            ("train.learning_rate", t.learning_rate),
            ("train.eps", t.eps),
            ("train.workers", t.workers as f64),
            ("loss.window", self.loss.window as f64),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::config("train.beta1", "betas must lie in [0, 1)"));
        }
        if t.scales.is_empty() || t.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("train.scales", "need at least one positive scale"));
        }
        if t.image_size % 32 != 0 || t.image_size == 0 {
            return Err(Error::config("train.image_size", "must be a positive multiple of 32"));
        }
        if !matches!(t.lr_schedule.as_str(), "constant" | "cosine") {
            return Err(Error::config("train.lr_schedule", "expected constant or cosine"));
        }
        if self.loss.window % 2 == 0 {
            return Err(Error::config("loss.window", "must be odd"));
        }
        if self.loss.gamma < 0.0 {
            return Err(Error::config("loss.gamma", "must be non-negative"));
        }
        Ok(())
    }

    /// One `key = value` line per setting, sorted by key.
    pub fn to_flat_string(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        flat.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Writes the resolved configuration as `resolved_config.toml`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.toml");
        std::fs::write(&path, self.to_flat_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
