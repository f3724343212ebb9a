//! Python bindings: metrics, boundary extraction, loss weights and model
//! inference over NumPy arrays.

use std::path::PathBuf;

use bsnet::data::{extract_boundary_gt, Extractor, Normalization};
use bsnet::grid::{BinaryMask, Grid, ProbMap};
use bsnet::metrics::{self, EMeasureInput, EvalProtocol, ImageMetrics};
use bsnet::model::ModelConfig;
use bsnet::train::{ModelSegmenter, Segmenter};
use bsnet::BsNet;
use candle_core::{DType, Device};
use numpy::{IntoPyArray, PyArray2, PyArrayMethods, PyReadonlyArray2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: bsnet::Error) -> PyErr {
    match e {
        bsnet::Error::Config { .. } | bsnet::Error::InputShape(_) | bsnet::Error::Contract(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_mask(a: PyReadonlyArray2<'_, u8>) -> PyResult<BinaryMask> {
    let view = a.as_array();
    let (h, w) = view.dim();
    let data: Vec<u8> = view.iter().map(|&v| (v != 0) as u8).collect();
    BinaryMask::new(w, h, data).map_err(err)
}

fn to_grid(a: PyReadonlyArray2<'_, f32>) -> PyResult<Grid<f32>> {
    let view = a.as_array();
    let (h, w) = view.dim();
    Grid::new(w, h, view.iter().copied().collect()).map_err(err)
}

fn mask_array<'py>(py: Python<'py>, m: &BinaryMask) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let v = m.data().to_vec().into_pyarray(py);
    v.reshape([m.height, m.width])
}

fn grid_array<'py>(py: Python<'py>, g: &Grid<f32>) -> PyResult<Bound<'py, PyArray2<f32>>> {
    g.data.clone().into_pyarray(py).reshape([g.height, g.width])
}

fn parse_extractor(name: &str) -> PyResult<Extractor> {
    name.parse().map_err(|e: String| PyValueError::new_err(e))
}

/// Dice coefficient of two binary masks (non-zero is foreground).
#[pyfunction]
fn dsc(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    Ok(metrics::dsc(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?.value)
}

#[pyfunction]
fn sensitivity(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    Ok(metrics::sensitivity(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?.value)
}

#[pyfunction]
fn precision(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    Ok(metrics::precision(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?.value)
}

/// Hausdorff distance between mask boundaries, in pixels.
#[pyfunction]
fn hausdorff(pred: PyReadonlyArray2<'_, u8>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    Ok(metrics::hausdorff(&to_mask(pred)?, &to_mask(gt)?).map_err(err)?.value)
}

#[pyfunction]
fn mae(prob: PyReadonlyArray2<'_, f32>, gt: PyReadonlyArray2<'_, u8>) -> PyResult<f64> {
    metrics::mae(&to_grid(prob)?, &to_mask(gt)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (prob, gt, alpha = 0.5))]
fn s_measure(prob: PyReadonlyArray2<'_, f32>, gt: PyReadonlyArray2<'_, u8>, alpha: f64) -> PyResult<f64> {
    metrics::s_measure(&to_grid(prob)?, &to_mask(gt)?, alpha).map_err(err)
}

/// `mode` is "binarized" (threshold first) or "continuous".
#[pyfunction]
#[pyo3(signature = (prob, gt, mode = "binarized", threshold = 0.5))]
fn e_measure(prob: PyReadonlyArray2<'_, f32>, gt: PyReadonlyArray2<'_, u8>, mode: &str, threshold: f32) -> PyResult<f64> {
    let mode = match mode {
        "binarized" => EMeasureInput::Binarized,
        "continuous" => EMeasureInput::Continuous,
        other => return Err(PyValueError::new_err(format!("unknown E-measure mode `{other}`"))),
    };
    metrics::e_measure(&to_grid(prob)?, &to_mask(gt)?, mode, threshold).map_err(err)
}

/// All seven measures for one probability map, as a dict.
#[pyfunction]
#[pyo3(signature = (prob, gt, threshold = 0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    prob: PyReadonlyArray2<'_, f32>,
    gt: PyReadonlyArray2<'_, u8>,
    threshold: f32,
) -> PyResult<Bound<'py, PyDict>> {
    let protocol = EvalProtocol {
        threshold,
        ..EvalProtocol::default()
    };
    let m = ImageMetrics::compute("image", &to_grid(prob)?, &to_mask(gt)?, &protocol).map_err(err)?;
    let d = PyDict::new(py);
    for (k, v) in metrics::COLUMNS.iter().zip(m.values()) {
        d.set_item(*k, v)?;
    }
    Ok(d)
}

/// Boundary ground truth for a mask: "canny", "sobel", "roberts" or
/// "neighbor".
#[pyfunction]
#[pyo3(signature = (mask, extractor = "canny"))]
fn extract_boundary<'py>(
    py: Python<'py>,
    mask: PyReadonlyArray2<'_, u8>,
    extractor: &str,
) -> PyResult<Bound<'py, PyArray2<u8>>> {
    let b = extract_boundary_gt(&to_mask(mask)?, parse_extractor(extractor)?);
    mask_array(py, &b)
}

/// Per-pixel importance weights used by the weighted region losses.
#[pyfunction]
#[pyo3(signature = (mask, window = 31))]
fn pixel_importance<'py>(
    py: Python<'py>,
    mask: PyReadonlyArray2<'_, u8>,
    window: usize,
) -> PyResult<Bound<'py, PyArray2<f32>>> {
    let a = bsnet::losses::pixel_importance(&to_mask(mask)?, window).map_err(err)?;
    grid_array(py, &a)
}

/// A network held in memory for inference on grayscale slices.
#[pyclass(unsendable)]
struct Model {
    inner: BsNet,
    image_size: usize,
}

#[pymethods]
impl Model {
    /// A freshly initialized network. `backbone` is "tiny-backbone" or
    /// "full-backbone".
    #[new]
    #[pyo3(signature = (backbone = "tiny-backbone", seed = 0, image_size = 352))]
    fn new(backbone: &str, seed: u64, image_size: usize) -> PyResult<Self> {
        let mut cfg = ModelConfig::default();
        cfg.backbone.variant = match backbone {
            "tiny" | "tiny-backbone" => bsnet::encoder::BackboneVariant::TinyBackbone,
            "full" | "full-backbone" => bsnet::encoder::BackboneVariant::FullBackbone,
            other => return Err(PyValueError::new_err(format!("unknown backbone `{other}`"))),
        };
        let inner = BsNet::new(&cfg, seed, DType::F32, &Device::Cpu).map_err(err)?;
        Ok(Self { inner, image_size })
    }

    /// Loads a checkpoint written by training.
    #[staticmethod]
    #[pyo3(signature = (path, image_size = 352))]
    fn load(path: PathBuf, image_size: usize) -> PyResult<Self> {
        let (inner, _) = BsNet::load(&path, DType::F32, &Device::Cpu).map_err(err)?;
        Ok(Self { inner, image_size })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn image_size(&self) -> usize {
        self.image_size
    }

    /// Infection probability map at the input's size. `image` holds
    /// intensities in [0, 1].
    fn predict<'py>(&self, py: Python<'py>, image: PyReadonlyArray2<'_, f32>) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let img = to_grid(image)?;
        let seg = ModelSegmenter {
            model: &self.inner,
            image_size: self.image_size,
            norm: Normalization::default(),
        };
        let prob: ProbMap = seg.predict(&img).map_err(err)?;
        grid_array(py, &prob)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, &[]).map_err(err)
    }
}

#[pymodule]
fn bsnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(dsc, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    m.add_function(wrap_pyfunction!(precision, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(s_measure, m)?)?;
    m.add_function(wrap_pyfunction!(e_measure, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_importance, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
