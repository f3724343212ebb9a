//! Dataset ingest, boundary ground truth and training-time transforms.

mod boundary;
mod ingest;
pub mod synthetic;
mod transform;

use serde::{Deserialize, Serialize};

pub use boundary::{extract_boundary_gt, Extractor};
pub use ingest::{ingest, load_split, DatasetManifest, ManifestEntry, SourceDir, SplitSpec, MANIFEST_FILE};
pub use transform::{
    augment, multiscale_batch, multiscale_side, preprocess, AugmentConfig, Batch, Normalization,
    MULTISCALE_SET,
};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (train, test)")),
        }
    }
}

/// One slice with its infection mask and boundary map.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub name: String,
    /// Intensities in `[0, 1]`.
    pub image: GrayImage,
    pub mask: BinaryMask,
    pub boundary: BinaryMask,
    pub source_id: String,
    pub split: Split,
}

impl SampleRecord {
    pub fn new(
        name: impl Into<String>,
        image: GrayImage,
        mask: BinaryMask,
        boundary: BinaryMask,
        source_id: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        let dims = (image.width, image.height);
        if (mask.width, mask.height) != dims || (boundary.width, boundary.height) != dims {
            return Err(Error::Data(format!(
                "image {}x{}, mask {}x{} and boundary {}x{} must agree",
                image.width, image.height, mask.width, mask.height, boundary.width, boundary.height
            )));
        }
        Ok(Self {
            name: name.into(),
            image,
            mask,
            boundary,
            source_id: source_id.into(),
            split,
        })
    }

    /// Builds a record whose boundary is extracted from the mask.
    pub fn from_mask(
        name: impl Into<String>,
        image: GrayImage,
        mask: BinaryMask,
        extractor: Extractor,
        source_id: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        let boundary = extract_boundary_gt(&mask, extractor);
        Self::new(name, image, mask, boundary, source_id, split)
    }
}
