//! Checkpoint files.
//!
//! A checkpoint is a single safetensors file: a map from dot-separated
//! parameter path (e.g. `encoder.rfb3.conv_cat.conv.weight`) to a dense
//! array, plus string metadata. Model checkpoints carry:
//!
//! * `format`: `bsnet-checkpoint/1`
//! * `model_config`: the [`ModelConfig`] as JSON
//! * optional `epoch`, `step` and free-form keys written by the trainer.
//!
//! Backbone weights use the `encoder.backbone.` prefix; pretrained files
//! may omit the prefix (the names of the public Res2Net release).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::BACKBONE_PREFIX;
use crate::error::{Error, Result};
use crate::model::{BsNet, ModelConfig};

pub const FORMAT: &str = "bsnet-checkpoint/1";

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the parameter name.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Deterministic initialization keyed by `(seed, parameter name)`.
///
/// Convolution weights and biases are uniform in `±1/√fan_in`; batch-norm
/// scale/shift are 1/0 and running statistics 0/1.
pub fn initialize(varmap: &VarMap, seed: u64) -> Result<()> {
    let data = varmap.data().lock().expect("varmap lock");
    let names: Vec<&String> = {
        let mut n: Vec<_> = data.keys().collect();
        n.sort();
        n
    };
    for name in names {
        let var = &data[name];
        let (stem, leaf) = name.rsplit_once('.').unwrap_or(("", name.as_str()));
        let is_norm = data.contains_key(&format!("{stem}.running_mean"));
        let shape = var.shape().clone();
        let dims = shape.dims();
        let value: Option<f64> = match leaf {
            "running_mean" => Some(0.0),
            "running_var" => Some(1.0),
            "weight" if is_norm => Some(1.0),
            "bias" if is_norm => Some(0.0),
            _ => None,
        };
        let t = match value {
            Some(v) => Tensor::full(v, dims, var.device())?.to_dtype(var.dtype())?,
            None => {
                let fan_in = if leaf == "weight" && dims.len() == 4 {
                    dims[1] * dims[2] * dims[3]
                } else {
                    data.get(&format!("{stem}.weight"))
                        .map(|w| w.dims().iter().skip(1).product())
                        .unwrap_or(1)
                };
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
                let vals: Vec<f64> = (0..shape.elem_count())
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::from_vec(vals, dims, var.device())?.to_dtype(var.dtype())?
            }
        };
        var.set(&t)?;
    }
    Ok(())
}

fn weight_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::WeightLoad {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Write tensors and metadata atomically (temp file + rename).
pub fn write_tensors(
    path: &Path,
    tensors: &BTreeMap<String, Tensor>,
    metadata: HashMap<String, String>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("safetensors.tmp");
    let contiguous: Vec<(String, Tensor)> = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), t.contiguous()?)))
        .collect::<Result<_>>()?;
    safetensors::serialize_to_file(contiguous, Some(metadata), &tmp)
        .map_err(|e| weight_err(&tmp, e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Parsed checkpoint contents.
#[derive(Debug)]
pub struct TensorFile {
    pub path: PathBuf,
    pub tensors: HashMap<String, Tensor>,
    pub metadata: HashMap<String, String>,
}

pub fn read_tensors(path: &Path, device: &Device) -> Result<TensorFile> {
    let bytes = std::fs::read(path).map_err(|e| weight_err(path, e.to_string()))?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| weight_err(path, format!("corrupt header: {e}")))?;
    let metadata = meta.metadata().clone().unwrap_or_default();
    let tensors = candle_core::safetensors::load_buffer(&bytes, device)
        .map_err(|e| weight_err(path, format!("corrupt tensor data: {e}")))?;
    Ok(TensorFile {
        path: path.to_path_buf(),
        tensors,
        metadata,
    })
}

/// Copy file tensors into the selected variables. `key_for` maps a variable
/// name to the candidate file keys, or `None` to leave the variable alone.
/// Every selected variable is checked before any is written.
pub fn assign(
    varmap: &VarMap,
    file: &TensorFile,
    key_for: impl Fn(&str) -> Option<Vec<String>>,
) -> Result<usize> {
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut staged = Vec::new();
    for name in names {
        let Some(keys) = key_for(name) else { continue };
        let var = &data[name];
        let found = keys.iter().find_map(|k| file.tensors.get(k));
        let Some(t) = found else {
            return Err(weight_err(
                &file.path,
                format!("missing parameter `{name}` (layout mismatch)"),
            ));
        };
        if t.dims() != var.dims() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: var.dims().to_vec(),
                found: t.dims().to_vec(),
            });
        }
        staged.push((var.clone(), t.to_dtype(var.dtype())?));
    }
    let n = staged.len();
    for (var, t) in staged {
        var.set(&t)?;
    }
    Ok(n)
}

impl BsNet {
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        self.varmap()
            .data()
            .lock()
            .expect("varmap lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Save all parameters with the model config embedded.
    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT.to_string());
        meta.insert("model_config".to_string(), serde_json::to_string(self.config())?);
        for (k, v) in extra {
            meta.insert(k.to_string(), v.clone());
        }
        write_tensors(path, &self.state(), meta)
    }

    /// Rebuild a model from a checkpoint written by [`BsNet::save`].
    pub fn load(path: &Path, dtype: DType, device: &Device) -> Result<(Self, HashMap<String, String>)> {
        let file = read_tensors(path, device)?;
        let cfg_json = file
            .metadata
            .get("model_config")
            .ok_or_else(|| weight_err(path, "no model_config metadata"))?;
        let cfg: ModelConfig = serde_json::from_str(cfg_json)?;
        let model = BsNet::new(&cfg, 0, dtype, device)?;
        assign(model.varmap(), &file, |n| Some(vec![n.to_string()]))?;
        Ok((model, file.metadata))
    }

    /// Replace every parameter from a checkpoint of the same layout.
    pub fn load_weights(&self, path: &Path) -> Result<()> {
        let file = read_tensors(path, self.device())?;
        assign(self.varmap(), &file, |n| Some(vec![n.to_string()]))?;
        Ok(())
    }

    /// Replace backbone parameters only; enhancement blocks and decoder are
    /// left untouched. Keys may be stored with or without the backbone prefix.
    pub fn load_pretrained_weights(&self, path: &Path) -> Result<usize> {
        let file = read_tensors(path, self.device())?;
        assign(self.varmap(), &file, |n| {
            n.strip_prefix(BACKBONE_PREFIX)
                .map(|short| vec![n.to_string(), short.to_string()])
        })
    }
}
