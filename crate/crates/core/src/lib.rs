//! Boundary-guided semantic segmentation of lung infection in CT slices.
//!
//! The network couples a dual-branch semantic attention map with
//! mirror-symmetric boundary guidance in the decoder, trained with
//! deeply supervised weighted BCE/IoU losses. The crate also contains the
//! evaluation metrics, dataset tooling and the training/ablation harness.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dse;
pub mod encoder;
pub mod error;
pub mod grid;
pub mod imageio;
pub mod layers;
pub mod losses;
pub mod mbg_decoder;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod render;
pub mod train;

pub use error::{Error, Result};
pub use grid::{BinaryMask, GrayImage, Grid, ProbMap};
pub use model::{BsNet, ModelConfig, PredictionSet};
