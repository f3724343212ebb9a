//! Per-image and dataset-level metric reports with CSV/JSON output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dsc, e_measure, hausdorff, mae, precision, s_measure, sensitivity, EvalProtocol};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbMap};
use crate::imageio;

/// Metric column names, in report order.
pub const COLUMNS: [&str; 7] = ["dsc", "sen", "prec", "s_alpha", "e_phi", "mae", "hd"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub dsc: f64,
    pub sen: f64,
    pub prec: f64,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub mae: f64,
    pub hd: f64,
    /// Metrics whose value came from an empty-mask convention.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

impl ImageMetrics {
    pub fn values(&self) -> [f64; 7] {
        [self.dsc, self.sen, self.prec, self.s_alpha, self.e_phi, self.mae, self.hd]
    }

    /// Evaluates one prediction against its ground truth.
    pub fn compute(name: &str, pred: &ProbMap, gt: &BinaryMask, protocol: &EvalProtocol) -> Result<Self> {
        let bin = BinaryMask::binarize(pred, protocol.threshold);
        let d = dsc(&bin, gt)?;
        let sen = sensitivity(&bin, gt)?;
        let prec = precision(&bin, gt)?;
        let hd = hausdorff(&bin, gt)?;
        let mut degenerate = Vec::new();
        for (label, m) in [("dsc", d), ("sen", sen), ("prec", prec), ("hd", hd)] {
            if m.degenerate {
                degenerate.push(label.to_string());
            }
        }
        Ok(Self {
            name: name.to_string(),
            dsc: d.value,
            sen: sen.value,
            prec: prec.value,
            s_alpha: s_measure(pred, gt, protocol.s_alpha)?,
            e_phi: e_measure(pred, gt, protocol.e_measure, protocol.threshold)?,
            mae: mae(pred, gt)?,
            hd: hd.value,
            degenerate,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub dsc: f64,
    pub sen: f64,
    pub prec: f64,
    pub s_alpha: f64,
    pub e_phi: f64,
    pub mae: f64,
    pub hd: f64,
}

impl MetricMeans {
    pub fn values(&self) -> [f64; 7] {
        [self.dsc, self.sen, self.prec, self.s_alpha, self.e_phi, self.mae, self.hd]
    }

    fn from_values(v: [f64; 7]) -> Self {
        Self {
            dsc: v[0],
            sen: v[1],
            prec: v[2],
            s_alpha: v[3],
            e_phi: v[4],
            mae: v[5],
            hd: v[6],
        }
    }

    /// Arithmetic means, summed in the given (sorted) order.
    pub fn of(images: &[ImageMetrics]) -> Self {
        if images.is_empty() {
            return Self::default();
        }
        let mut sums = [0f64; 7];
        for m in images {
            for (s, v) in sums.iter_mut().zip(m.values()) {
                *s += v;
            }
        }
        Self::from_values(sums.map(|s| s / images.len() as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub means: MetricMeans,
    pub count: usize,
    pub images_per_second: f64,
    pub protocol: EvalProtocol,
    /// Files that could not be paired or read.
    pub warnings: Vec<String>,
}

impl MetricReport {
    /// Values that affect results; excludes timing.
    pub fn same_metrics(&self, other: &MetricReport) -> bool {
        self.images == other.images && self.means == other.means
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name");
        for c in COLUMNS {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        let mut row = |name: &str, values: [f64; 7]| {
            out.push_str(name);
            for v in values {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        };
        for m in &self.images {
            row(&m.name, m.values());
        }
        row("mean", self.means.values());
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Evaluates named prediction/ground-truth pairs in parallel. Records are
/// sorted by name; means are reduced sequentially in that order.
pub fn evaluate_pairs(
    pairs: &[(String, ProbMap, BinaryMask)],
    protocol: &EvalProtocol,
) -> Result<MetricReport> {
    let start = Instant::now();
    let mut images = pairs
        .par_iter()
        .map(|(name, pred, gt)| ImageMetrics::compute(name, pred, gt, protocol))
        .collect::<Result<Vec<_>>>()?;
    images.sort_by(|a, b| a.name.cmp(&b.name));
    let elapsed = start.elapsed().as_secs_f64();
    Ok(report(images, elapsed, *protocol, Vec::new()))
}

fn report(images: Vec<ImageMetrics>, elapsed: f64, protocol: EvalProtocol, warnings: Vec<String>) -> MetricReport {
    let count = images.len();
    MetricReport {
        means: MetricMeans::of(&images),
        images_per_second: if elapsed > 0.0 { count as f64 / elapsed } else { 0.0 },
        count,
        images,
        protocol,
        warnings,
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut files = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(files)
}

/// Evaluates every prediction in `pred_dir` against the same-stem mask in
/// `gt_dir`. Unmatched files on either side are skipped and listed in
/// [`MetricReport::warnings`].
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path, protocol: &EvalProtocol) -> Result<MetricReport> {
    let preds = image_files(pred_dir)?;
    let gts = image_files(gt_dir)?;
    let mut warnings = Vec::new();
    for name in preds.keys().filter(|k| !gts.contains_key(*k)) {
        warnings.push(format!("prediction `{name}` has no ground truth"));
    }
    for name in gts.keys().filter(|k| !preds.contains_key(*k)) {
        warnings.push(format!("ground truth `{name}` has no prediction"));
    }
    let matched: Vec<_> = preds
        .iter()
        .filter_map(|(name, p)| gts.get(name).map(|g| (name.clone(), p.clone(), g.clone())))
        .collect();
    let start = Instant::now();
    let mut images = matched
        .par_iter()
        .map(|(name, p, g)| {
            let pred = imageio::read_prob(p)?;
            let gt = imageio::read_mask(g)?.mask;
            ImageMetrics::compute(name, &pred, &gt, protocol)
        })
        .collect::<Result<Vec<_>>>()?;
    images.sort_by(|a, b| a.name.cmp(&b.name));
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(report(images, start.elapsed().as_secs_f64(), *protocol, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob() -> BinaryMask {
        BinaryMask::from_fn(10, 8, |r, c| (2..6).contains(&r) && (3..8).contains(&c))
    }

    #[test]
    fn identical_pair_scores_perfect() {
        let gt = blob();
        let r = evaluate_pairs(&[("a".into(), gt.to_f32(), gt.clone())], &EvalProtocol::default()).unwrap();
        let m = &r.images[0];
        assert_eq!((m.dsc, m.sen, m.prec, m.mae, m.hd), (1.0, 1.0, 1.0, 0.0, 0.0));
        assert!((m.s_alpha - 1.0).abs() < 1e-9);
        assert!((m.e_phi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn means_are_arithmetic() {
        let gt = blob();
        let pairs = vec![
            ("b".to_string(), gt.to_f32(), gt.clone()),
            ("a".to_string(), gt.invert().to_f32(), gt.clone()),
        ];
        let r = evaluate_pairs(&pairs, &EvalProtocol::default()).unwrap();
        assert_eq!(r.images[0].name, "a");
        for (i, mean) in r.means.values().iter().enumerate() {
            let expect = (r.images[0].values()[i] + r.images[1].values()[i]) / 2.0;
            assert!((mean - expect).abs() < 1e-12);
        }
        let csv = r.to_csv();
        assert!(csv.starts_with("name,dsc,sen,prec,s_alpha,e_phi,mae,hd\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn unmatched_files_are_warned() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("p"), dir.path().join("g"));
        let gt = blob();
        imageio::write_mask(&gt, &p.join("x.png")).unwrap();
        imageio::write_mask(&gt, &g.join("x.png")).unwrap();
        imageio::write_mask(&gt, &p.join("extra.png")).unwrap();
        let r = evaluate_dataset(&p, &g, &EvalProtocol::default()).unwrap();
        assert_eq!(r.count, 1);
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.means.dsc, 1.0);
    }
}
