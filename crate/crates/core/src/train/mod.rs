//! Training loop with deep supervision, checkpoints and run logs.
//!
//! Output layout under the run directory:
//!
//! * `resolved_config.toml`: every setting of the run
//! * `steps.jsonl`: one loss breakdown per optimizer step
//! * `epochs.csv`: per-epoch mean loss and validation means
//! * `checkpoints/epoch_NNN.safetensors` (+ `.optim.safetensors`)
//! * `final.safetensors`: the last epoch, the reported model
//! * `best_val.safetensors`: best validation DSC, for reference only

mod eval;
mod optim;

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use eval::{bench_fps, device_descriptor, tensor_to_grid, validate, FpsReport, ModelSegmenter, Segmenter};
pub use optim::{Adam, AdamConfig};

use crate::config::RunConfig;
use crate::data::{augment, multiscale_side, Batch, SampleRecord};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown};
use crate::metrics::{MetricMeans, MetricReport};
use crate::model::BsNet;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parses a device spec. Only the CPU backend is compiled in.
pub fn parse_device(spec: &str) -> Result<Device> {
    match spec.trim() {
        "" | "cpu" => Ok(Device::Cpu),
        other => Err(Error::config(
            "train.device",
            format!("device `{other}` is not available in this build (cpu only)"),
        )),
    }
}

/// A seeded stream keyed by `(seed, parts...)`; distinct keys give
/// independent streams.
pub fn rng_stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        // splitmix64 finalizer over the running key
        h = h.wrapping_add(p.wrapping_add(0x9e37_79b9_7f4a_7c15));
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub scale: f64,
    pub side: usize,
    pub learning_rate: f64,
    pub grad_norm: f64,
    pub loss: LossBreakdown,
    /// Seconds since the run started; 0 in deterministic mode.
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub validation: Option<MetricMeans>,
    pub checkpoint: String,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub version: String,
    pub config_hash: String,
    pub config: String,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss.total).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from the newest complete epoch checkpoint in the run dir.
    pub resume: bool,
    /// Skip per-epoch checkpoint files (final checkpoint is still written).
    pub skip_epoch_checkpoints: bool,
}

pub struct TrainOutcome {
    pub model: BsNet,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: Option<PathBuf>,
    pub last_validation: Option<MetricReport>,
    pub log: RunLog,
}

fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:03}.safetensors"))
}

fn optim_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("optim.safetensors")
}

fn latest_complete_epoch(dir: &Path, epochs: usize) -> Option<usize> {
    (1..=epochs)
        .rev()
        .find(|&e| epoch_checkpoint(dir, e).exists() && optim_path(&epoch_checkpoint(dir, e)).exists())
}

fn learning_rate(cfg: &RunConfig, step: usize, total: usize) -> f64 {
    let lr = cfg.train.learning_rate;
    match cfg.train.lr_schedule.as_str() {
        "cosine" if total > 0 => lr * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()),
        _ => lr,
    }
}

const EPOCH_HEADER: &str =
    "epoch,steps,mean_loss,val_dsc,val_sen,val_prec,val_s_alpha,val_e_phi,val_mae,val_hd,elapsed_s\n";

fn epoch_row(e: &EpochRecord) -> String {
    let mut row = format!("{},{},{:.6}", e.epoch, e.steps, e.mean_loss);
    match &e.validation {
        Some(m) => {
            for v in m.values() {
                row.push_str(&format!(",{v:.6}"));
            }
        }
        None => row.push_str(",,,,,,,"),
    }
    row.push_str(&format!(",{:.3}\n", e.elapsed_s));
    row
}

/// Builds the model described by the config, loading pretrained backbone
/// weights when a path is set.
pub fn build_model(cfg: &RunConfig, device: &Device) -> Result<BsNet> {
    let model_cfg = cfg.model.to_model();
    let model = BsNet::new(&model_cfg, cfg.train.seed, DType::F32, device)?;
    if let Some(path) = &model_cfg.backbone.pretrained_weights_path {
        let n = model.load_pretrained_weights(path)?;
        log::info!("loaded {n} pretrained backbone tensors from {}", path.display());
    }
    Ok(model)
}

/// The batches of one epoch as sample-index lists.
fn epoch_batches(cfg: &RunConfig, n: usize, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_stream(cfg.train.seed, &[1, epoch as u64]));
    order.chunks(cfg.train.batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains on `train_set`, validating on `val_set` (may be empty).
pub fn train(
    cfg: &RunConfig,
    train_set: &[SampleRecord],
    val_set: &[SampleRecord],
    out_dir: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    cfg.validate()?;
    let device = parse_device(&cfg.train.device)?;
    let t = &cfg.train;
    let det = t.deterministic;
    std::fs::create_dir_all(out_dir.join("checkpoints")).map_err(|e| Error::io(out_dir, e))?;
    cfg.write_resolved(out_dir)?;
    let config_text = cfg.to_flat_string();
    let mut log = RunLog {
        version: VERSION.to_string(),
        config_hash: hex::encode(Sha256::digest(config_text.as_bytes())),
        config: config_text,
        steps: Vec::new(),
        epochs: Vec::new(),
    };

    let model = build_model(cfg, &device)?;
    let mut opt = Adam::new(
        model.varmap(),
        AdamConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
        },
    );
    let steps_path = out_dir.join("steps.jsonl");
    let epochs_path = out_dir.join("epochs.csv");
    let mut first_epoch = 1;
    let mut best: Option<(f64, PathBuf)> = None;
    let mut last_ckpt: Option<PathBuf> = None;
    if opts.resume {
        if let Some(e) = latest_complete_epoch(out_dir, t.epochs) {
            let ckpt = epoch_checkpoint(out_dir, e);
            model.load_weights(&ckpt)?;
            opt.load(&optim_path(&ckpt))?;
            first_epoch = e + 1;
            last_ckpt = Some(ckpt);
            let step_limit = opt.step_count() as usize;
            if let Ok(f) = File::open(&steps_path) {
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| Error::io(&steps_path, e))?;
                    let rec: StepRecord = serde_json::from_str(&line)?;
                    if rec.step <= step_limit {
                        log.steps.push(rec);
                    }
                }
            }
            if let Ok(text) = std::fs::read_to_string(out_dir.join("run_log.json")) {
                if let Ok(prev) = serde_json::from_str::<RunLog>(&text) {
                    log.epochs = prev.epochs.into_iter().filter(|r| r.epoch <= e).collect();
                }
            }
            log::info!("resuming after epoch {e} (step {step_limit})");
        }
    }
    let rewrite = |path: &Path, text: String| std::fs::write(path, text).map_err(|e| Error::io(path, e));
    rewrite(
        &steps_path,
        log.steps
            .iter()
            .map(|s| serde_json::to_string(s).map(|l| l + "\n"))
            .collect::<std::result::Result<String, _>>()?,
    )?;
    rewrite(&epochs_path, std::iter::once(EPOCH_HEADER.to_string()).chain(log.epochs.iter().map(epoch_row)).collect())?;
    let mut steps_file = std::fs::OpenOptions::new()
        .append(true)
        .open(&steps_path)
        .map_err(|e| Error::io(&steps_path, e))?;

    let start = Instant::now();
    let elapsed = || if det { 0.0 } else { start.elapsed().as_secs_f64() };
    let steps_per_epoch = train_set.len().div_ceil(t.batch_size);
    let total_steps = if t.max_steps > 0 {
        t.max_steps.min(steps_per_epoch * t.epochs)
    } else {
        steps_per_epoch * t.epochs
    };
    let mut step = opt.step_count() as usize;
    let mut last_validation = None;
    let mut final_epoch = first_epoch.saturating_sub(1);
    let protocol = cfg.eval.protocol()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(t.workers)
        .build()
        .map_err(|e| Error::Data(format!("worker pool: {e}")))?;

    'epochs: for epoch in first_epoch..=t.epochs {
        if step >= total_steps {
            break;
        }
        let mut epoch_loss = 0.0;
        let mut epoch_steps = 0;
        for (b, indices) in epoch_batches(cfg, train_set.len(), epoch).into_iter().enumerate() {
            if step >= total_steps {
                break;
            }
            let mut scale_rng = rng_stream(t.seed, &[2, epoch as u64, b as u64]);
            let scale = t.scales[scale_rng.random_range(0..t.scales.len())];
            let side = multiscale_side(t.image_size, scale)?;
            let samples: Vec<SampleRecord> = pool.install(|| {
                indices
                    .par_iter()
                    .map(|&i| {
                        let mut rng = rng_stream(t.seed, &[3, epoch as u64, i as u64]);
                        augment(&train_set[i], &cfg.augment, &mut rng)
                    })
                    .collect()
            });
            let batch = Batch::from_samples(&samples, side, cfg.data.extractor);
            let (x, gt, bgt) = batch.to_tensors(&cfg.norm, DType::F32, &device)?;
            let preds = model.forward(&x, true)?;
            let loss = total_loss(&preds, &gt, &bgt, &cfg.loss)?;
            let lr = learning_rate(cfg, step, total_steps);
            if !loss.breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step + 1,
                    last_checkpoint: last_ckpt,
                });
            }
            let grads = loss.total.backward()?;
            let norm = opt.grad_norm(&grads)?;
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step + 1,
                    last_checkpoint: last_ckpt,
                });
            }
            let scale_grad = if t.gradient_clip > 0.0 && norm > t.gradient_clip {
                t.gradient_clip / norm
            } else {
                1.0
            };
            opt.set_learning_rate(lr);
            opt.step(&grads, scale_grad)?;
            step += 1;
            epoch_loss += loss.breakdown.total;
            epoch_steps += 1;
            let rec = StepRecord {
                epoch,
                step,
                scale,
                side,
                learning_rate: lr,
                grad_norm: norm,
                loss: loss.breakdown,
                elapsed_s: elapsed(),
            };
            writeln!(steps_file, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&steps_path, e))?;
            log::debug!("epoch {epoch} step {step} loss {:.5}", rec.loss.total);
            log.steps.push(rec);
        }
        if epoch_steps == 0 {
            break 'epochs;
        }
        final_epoch = epoch;
        let ckpt = epoch_checkpoint(out_dir, epoch);
        let meta = [("epoch", epoch.to_string()), ("step", step.to_string())];
        if !opts.skip_epoch_checkpoints {
            model.save(&ckpt, &meta)?;
            opt.save(&optim_path(&ckpt))?;
            last_ckpt = Some(ckpt.clone());
        }
        let mut validation = None;
        let validate_now = !val_set.is_empty()
            && t.val_every > 0
            && (epoch % t.val_every == 0 || epoch == t.epochs || step >= total_steps);
        if validate_now {
            let seg = ModelSegmenter {
                model: &model,
                image_size: t.image_size,
                norm: cfg.norm,
            };
            let report = validate(&seg, val_set, &protocol)?;
            validation = Some(report.means);
            if best.as_ref().is_none_or(|(d, _)| report.means.dsc > *d) {
                let path = out_dir.join("best_val.safetensors");
                model.save(
                    &path,
                    &[
                        meta[0].clone(),
                        meta[1].clone(),
                        ("selection", "best validation DSC; not the final-epoch model".into()),
                    ],
                )?;
                best = Some((report.means.dsc, path));
            }
            last_validation = Some(report);
        }
        let rec = EpochRecord {
            epoch,
            steps: epoch_steps,
            mean_loss: epoch_loss / epoch_steps as f64,
            validation,
            checkpoint: if opts.skip_epoch_checkpoints {
                String::new()
            } else {
                ckpt.strip_prefix(out_dir).unwrap_or(&ckpt).display().to_string()
            },
            elapsed_s: elapsed(),
        };
        std::fs::OpenOptions::new()
            .append(true)
            .open(&epochs_path)
            .and_then(|mut f| f.write_all(epoch_row(&rec).as_bytes()))
            .map_err(|e| Error::io(&epochs_path, e))?;
        log.epochs.push(rec);
        std::fs::write(out_dir.join("run_log.json"), serde_json::to_string_pretty(&log)?)
            .map_err(|e| Error::io(out_dir, e))?;
    }

    let final_checkpoint = out_dir.join("final.safetensors");
    model.save(
        &final_checkpoint,
        &[
            ("epoch", final_epoch.to_string()),
            ("step", step.to_string()),
            ("selection", "final epoch".into()),
        ],
    )?;
    std::fs::write(out_dir.join("run_log.json"), serde_json::to_string_pretty(&log)?)
        .map_err(|e| Error::io(out_dir, e))?;
    Ok(TrainOutcome {
        model,
        final_checkpoint,
        best_checkpoint: best.map(|(_, p)| p),
        last_validation,
        log,
    })
}
