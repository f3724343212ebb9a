//! Inference wrappers, split validation and throughput measurement.

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{preprocess, Normalization, SampleRecord};
use crate::error::{Error, Result};
use crate::grid::{GrayImage, ProbMap};
use crate::metrics::{evaluate_pairs, EvalProtocol, MetricReport};
use crate::model::BsNet;
use crate::ops::resize_grid;

/// Anything that maps a slice to a probability map of the same size.
pub trait Segmenter {
    fn predict(&self, image: &GrayImage) -> Result<ProbMap>;
}

/// Runs the network at a fixed square input size and resizes the final
/// map back to the slice resolution.
pub struct ModelSegmenter<'a> {
    pub model: &'a BsNet,
    pub image_size: usize,
    pub norm: Normalization,
}

impl ModelSegmenter<'_> {
    /// The final map at network resolution, `(1, 1, S, S)`.
    pub fn forward_map(&self, image: &GrayImage) -> Result<Tensor> {
        let x = preprocess(image, self.image_size, &self.norm)?
            .to_tensor(self.model.dtype(), self.model.device())?;
        let preds = self.model.forward(&x, false)?;
        Ok(preds.final_map().clone())
    }
}

pub fn tensor_to_grid(t: &Tensor) -> Result<ProbMap> {
    let (_, _, h, w) = t.dims4()?;
    let data: Vec<f32> = t.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
    if data.len() != h * w {
        return Err(Error::InputShape("expected a single-image, single-channel map".into()));
    }
    ProbMap::new(w, h, data)
}

impl Segmenter for ModelSegmenter<'_> {
    fn predict(&self, image: &GrayImage) -> Result<ProbMap> {
        let map = tensor_to_grid(&self.forward_map(image)?)?;
        Ok(resize_grid(&map, image.width, image.height))
    }
}

/// Predicts every sample and scores it against its mask.
pub fn validate(seg: &dyn Segmenter, samples: &[SampleRecord], protocol: &EvalProtocol) -> Result<MetricReport> {
    let start = Instant::now();
    let pairs = samples
        .iter()
        .map(|s| Ok((s.name.clone(), seg.predict(&s.image)?, s.mask.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut report = evaluate_pairs(&pairs, protocol)?;
    let elapsed = start.elapsed().as_secs_f64();
    report.images_per_second = if elapsed > 0.0 { samples.len() as f64 / elapsed } else { 0.0 };
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    /// `1 / mean latency`, batch size 1.
    pub fps: f64,
    pub mean_latency_ms: f64,
    pub images: usize,
    pub warmup: usize,
    pub image_size: usize,
    pub backbone: String,
    pub parameters: usize,
    pub device: String,
    pub definition: String,
}

/// Host descriptor: device kind, CPU model and thread count.
pub fn device_descriptor(device: &Device) -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match device {
        Device::Cpu => format!("cpu ({cpu}, {threads} threads)"),
        other => format!("{other:?}"),
    }
}

/// Single-image forward passes on a fixed random input; the first
/// `warmup` are discarded.
pub fn bench_fps(model: &BsNet, image_size: usize, n_images: usize, warmup: usize) -> Result<FpsReport> {
    if n_images == 0 {
        return Err(Error::Contract("bench_fps needs at least one timed image".into()));
    }
    let x = Tensor::randn(0f32, 1.0, (1, 3, image_size, image_size), model.device())?.to_dtype(model.dtype())?;
    let run = || -> Result<()> {
        let p = model.forward(&x, false)?;
        // Force evaluation of the output.
        p.final_map().sum_all()?.to_dtype(DType::F32)?.to_scalar::<f32>()?;
        Ok(())
    };
    for _ in 0..warmup {
        run()?;
    }
    let start = Instant::now();
    for _ in 0..n_images {
        run()?;
    }
    let mean = start.elapsed().as_secs_f64() / n_images as f64;
    Ok(FpsReport {
        fps: 1.0 / mean,
        mean_latency_ms: mean * 1e3,
        images: n_images,
        warmup,
        image_size,
        backbone: model.config().backbone.variant.name().to_string(),
        parameters: model.parameter_count(),
        device: device_descriptor(model.device()),
        definition: "fps = 1 / mean single-image latency (batch size 1)".into(),
    })
}
