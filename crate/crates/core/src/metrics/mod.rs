//! The seven evaluation measures: DSC, sensitivity, precision, S-measure,
//! E-measure, MAE and Hausdorff distance.
//!
//! Count-based measures and HD take binarized predictions; S-measure and
//! MAE take probabilities. Degenerate denominators follow fixed
//! conventions and are reported through [`Measured::degenerate`].

mod hausdorff;
mod report;
mod structure;

use serde::{Deserialize, Serialize};

pub use hausdorff::{directed_hausdorff, distance_transform_sq, hausdorff};
pub use report::{evaluate_dataset, evaluate_pairs, ImageMetrics, MetricMeans, MetricReport, COLUMNS};
pub use structure::{e_measure, s_measure, s_object, s_region, ssim_region};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ProbMap};

/// A metric value plus whether a fallback convention produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub degenerate: bool,
}

impl Measured {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn fallback(value: f64) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

/// How predictions enter the E-measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum EMeasureInput {
    /// Binarize at the protocol threshold first.
    Binarized,
    /// Use probabilities directly.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Predictions `>= threshold` are foreground.
    pub threshold: f32,
    pub e_measure: EMeasureInput,
    /// Weight of the region term in the S-measure.
    pub s_alpha: f64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            e_measure: EMeasureInput::Binarized,
            s_alpha: 0.5,
        }
    }
}

fn check_shapes(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::InputShape(format!(
            "prediction {}x{} and ground truth {}x{} differ",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

struct Confusion {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<Confusion> {
    check_shapes((pred.width, pred.height), (gt.width, gt.height))?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

/// `2|G ∩ S| / (|G| + |S|)`; 1 when both masks are empty.
pub fn dsc(pred: &BinaryMask, gt: &BinaryMask) -> Result<Measured> {
    let c = confusion(pred, gt)?;
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 {
        Measured::fallback(1.0)
    } else {
        Measured::ok(2.0 * c.tp as f64 / denom as f64)
    })
}

/// `TP / (TP + FN)`; 1 when the ground truth is empty.
pub fn sensitivity(pred: &BinaryMask, gt: &BinaryMask) -> Result<Measured> {
    let c = confusion(pred, gt)?;
    let denom = c.tp + c.fn_;
    Ok(if denom == 0 {
        Measured::fallback(1.0)
    } else {
        Measured::ok(c.tp as f64 / denom as f64)
    })
}

/// `TP / (TP + FP)`; 1 when the prediction is empty.
pub fn precision(pred: &BinaryMask, gt: &BinaryMask) -> Result<Measured> {
    let c = confusion(pred, gt)?;
    let denom = c.tp + c.fp;
    Ok(if denom == 0 {
        Measured::fallback(1.0)
    } else {
        Measured::ok(c.tp as f64 / denom as f64)
    })
}

/// Mean absolute difference between probabilities and the binary truth.
pub fn mae(pred: &ProbMap, gt: &BinaryMask) -> Result<f64> {
    check_shapes((pred.width, pred.height), (gt.width, gt.height))?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .data
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p as f64 - g as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(w, h, |r, c| on.contains(&(r, c)))
    }

    #[test]
    fn dsc_cases() {
        let a = mask(4, 4, &[(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(dsc(&a, &a).unwrap().value, 1.0);
        let b = mask(4, 4, &[(3, 3), (3, 2)]);
        assert_eq!(dsc(&a, &b).unwrap().value, 0.0);
        let c = mask(4, 4, &[(0, 0), (0, 1), (2, 2), (2, 3)]);
        assert_eq!(dsc(&a, &c).unwrap().value, 0.5);
        let e = BinaryMask::zeros(4, 4);
        assert_eq!(dsc(&e, &e).unwrap(), Measured::fallback(1.0));
        assert!(dsc(&a, &BinaryMask::zeros(3, 4)).is_err());
    }

    #[test]
    fn sensitivity_and_precision_counts() {
        // TP = 3, FN = 1, FP = 2.
        let gt = mask(4, 4, &[(0, 0), (0, 1), (0, 2), (0, 3)]);
        let pred = mask(4, 4, &[(0, 0), (0, 1), (0, 2), (2, 0), (2, 1)]);
        assert_eq!(sensitivity(&pred, &gt).unwrap().value, 0.75);
        assert_eq!(precision(&pred, &gt).unwrap().value, 0.6);
        let sup = mask(4, 4, &[(0, 0), (0, 1), (0, 2), (0, 3), (3, 3)]);
        assert_eq!(sensitivity(&sup, &gt).unwrap().value, 1.0);
        assert!(precision(&sup, &gt).unwrap().value < 1.0);
        let e = BinaryMask::zeros(4, 4);
        assert!(sensitivity(&pred, &e).unwrap().degenerate);
        assert!(precision(&e, &gt).unwrap().degenerate);
    }

    #[test]
    fn mae_hand_case() {
        let pred = ProbMap::new(2, 2, vec![0.25, 0.75, 0.0, 1.0]).unwrap();
        let gt = BinaryMask::new(2, 2, vec![0, 1, 0, 1]).unwrap();
        assert!((mae(&pred, &gt).unwrap() - 0.125).abs() < 1e-12);
        let inv = gt.invert().to_f32();
        assert_eq!(mae(&inv, &gt).unwrap(), 1.0);
    }
}
