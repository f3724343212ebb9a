//! Raw directory ingest into the `<root>/<split>/{images,masks,boundaries}`
//! layout with a JSON manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{extract_boundary_gt, Extractor, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::imageio;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "bsnet-dataset/1";

/// A raw dataset: `<path>/images/*` paired by file stem with
/// `<path>/masks/*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceDir {
    pub id: String,
    pub path: PathBuf,
}

impl SourceDir {
    /// Parses `id=path`, or a bare path whose directory name is the id.
    pub fn parse(s: &str) -> Self {
        match s.split_once('=') {
            Some((id, path)) => Self {
                id: id.to_string(),
                path: PathBuf::from(path),
            },
            None => {
                let path = PathBuf::from(s);
                let id = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .unwrap_or("data")
                    .to_string();
                Self { id, path }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Fraction of samples in the test split.
    pub test_fraction: f64,
    pub extractor: Extractor,
}

impl Default for SplitSpec {
    /// 300 of 1018 slices held out.
    fn default() -> Self {
        Self {
            seed: 0,
            test_fraction: 300.0 / 1018.0,
            extractor: Extractor::Canny,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub source_id: String,
    pub split: Split,
    /// Paths relative to the dataset root.
    pub image: String,
    pub mask: String,
    pub boundary: String,
    pub width: usize,
    pub height: usize,
    /// SHA-256 of the decoded image pixels.
    pub image_hash: String,
    pub mask_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub split: SplitSpec,
    pub counts: BTreeMap<Split, usize>,
    pub samples: Vec<ManifestEntry>,
    /// Raw files left out, with the reason.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
    /// SHA-256 over everything above.
    pub content_hash: String,
}

impl DatasetManifest {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn count(&self, split: Split) -> usize {
        self.counts.get(&split).copied().unwrap_or(0)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    fn compute_hash(&self) -> Result<String> {
        let mut unhashed = self.clone();
        unhashed.content_hash.clear();
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(&unhashed)?)))
    }
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg" | "tif" | "tiff" | "bmp")) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            // Stems are unique per directory; a second extension is ignored.
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

fn pixel_hash(img: &DynamicImage) -> String {
    let mut h = Sha256::new();
    h.update((img.width() as u64).to_le_bytes());
    h.update((img.height() as u64).to_le_bytes());
    h.update(img.as_bytes());
    hex::encode(h.finalize())
}

struct Candidate {
    name: String,
    source_id: String,
    image: DynamicImage,
    mask: crate::grid::BinaryMask,
    image_hash: String,
}

/// Merges raw sources, splits by image-content hash (identical slices
/// always land on the same side), writes the normalized layout and
/// returns the manifest. Runs are deterministic given `spec.seed`.
pub fn ingest(sources: &[SourceDir], out_root: &Path, spec: &SplitSpec) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&spec.test_fraction) {
        return Err(Error::config("data.test_fraction", "must lie in [0, 1]"));
    }
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    let mut candidates = Vec::new();
    let mut seen = BTreeSet::new();
    for src in sources {
        let images = list_images(&src.path.join("images"))?;
        let masks = list_images(&src.path.join("masks"))?;
        for (stem, path) in &masks {
            if !images.contains_key(stem) {
                excluded.push(format!("{}: mask without image", path.display()));
            }
        }
        for (stem, path) in &images {
            let Some(mask_path) = masks.get(stem) else {
                excluded.push(format!("{}: image without mask", path.display()));
                continue;
            };
            let name = format!("{}_{}", src.id, stem);
            if !seen.insert(name.clone()) {
                excluded.push(format!("{}: duplicate sample name `{name}`", path.display()));
                continue;
            }
            let image = image::open(path).map_err(|e| Error::image(path, e))?;
            let image = match image {
                DynamicImage::ImageLuma16(_) | DynamicImage::ImageLuma8(_) => image,
                DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLumaA16(_) => {
                    DynamicImage::ImageLuma16(image.to_luma16())
                }
                other => DynamicImage::ImageLuma8(other.to_luma8()),
            };
            let loaded = imageio::read_mask(mask_path)?;
            if loaded.was_binarized {
                warnings.push(format!(
                    "{}: non-binary mask values binarized at {}",
                    mask_path.display(),
                    imageio::MASK_THRESHOLD
                ));
            }
            if (loaded.mask.width, loaded.mask.height) != (image.width() as usize, image.height() as usize) {
                excluded.push(format!("{}: mask size differs from image", path.display()));
                continue;
            }
            let image_hash = pixel_hash(&image);
            candidates.push(Candidate {
                name,
                source_id: src.id.clone(),
                image,
                mask: loaded.mask,
                image_hash,
            });
        }
    }
    if candidates.is_empty() {
        return Err(Error::Data(format!(
            "no image/mask pairs found in {}",
            sources
                .iter()
                .map(|s| s.path.display().to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    // Group by content so duplicates cannot straddle the split.
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        groups.entry(&c.image_hash).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let target = (candidates.len() as f64 * spec.test_fraction).round() as usize;
    let mut split = vec![Split::Train; candidates.len()];
    let mut n_test = 0;
    for g in &groups {
        if n_test >= target {
            break;
        }
        for &i in g {
            split[i] = Split::Test;
        }
        n_test += g.len();
    }

    let mut samples = Vec::with_capacity(candidates.len());
    for (c, split) in candidates.iter().zip(&split) {
        let rel = |kind: &str| format!("{}/{}/{}.png", split.name(), kind, c.name);
        let image_rel = rel("images");
        let image_path = out_root.join(&image_rel);
        if let Some(dir) = image_path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        c.image.save(&image_path).map_err(|e| Error::image(&image_path, e))?;
        let boundary = extract_boundary_gt(&c.mask, spec.extractor);
        imageio::write_mask(&c.mask, &out_root.join(rel("masks")))?;
        imageio::write_mask(&boundary, &out_root.join(rel("boundaries")))?;
        samples.push(ManifestEntry {
            name: c.name.clone(),
            source_id: c.source_id.clone(),
            split: *split,
            image: image_rel,
            mask: rel("masks"),
            boundary: rel("boundaries"),
            width: c.mask.width,
            height: c.mask.height,
            image_hash: c.image_hash.clone(),
            mask_hash: hex::encode(Sha256::digest(c.mask.data())),
        });
    }
    samples.sort_by(|a, b| a.name.cmp(&b.name));
    for w in &warnings {
        log::warn!("{w}");
    }
    for e in &excluded {
        log::warn!("excluded {e}");
    }
    let mut counts = BTreeMap::new();
    counts.insert(Split::Train, candidates.len() - n_test);
    counts.insert(Split::Test, n_test);
    let mut manifest = DatasetManifest {
        format: FORMAT.to_string(),
        split: *spec,
        counts,
        samples,
        excluded,
        warnings,
        content_hash: String::new(),
    };
    manifest.content_hash = manifest.compute_hash()?;
    let path = out_root.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads every sample of one split from an ingested dataset.
pub fn load_split(root: &Path, manifest: &DatasetManifest, split: Split) -> Result<Vec<SampleRecord>> {
    manifest
        .entries(split)
        .map(|e| {
            let image = imageio::read_gray(&root.join(&e.image))?;
            let mask = imageio::read_mask(&root.join(&e.mask))?.mask;
            let boundary = imageio::read_mask(&root.join(&e.boundary))?.mask;
            SampleRecord::new(&e.name, image, mask, boundary, &e.source_id, e.split)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    #[test]
    fn empty_source_is_an_error_without_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        std::fs::create_dir_all(raw.join("images")).unwrap();
        let out = dir.path().join("out");
        assert!(ingest(&[SourceDir::parse(raw.to_str().unwrap())], &out, &SplitSpec::default()).is_err());
        assert!(!out.join(MANIFEST_FILE).exists());
    }

    #[test]
    fn split_counts_are_deterministic_and_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw");
        synthetic::write_raw_dir(&raw, 20, 32, 5).unwrap();
        // An orphan image and a duplicated slice under another name.
        std::fs::copy(raw.join("images/slice_000.png"), raw.join("images/orphan.png")).unwrap();
        std::fs::copy(raw.join("images/slice_001.png"), raw.join("images/dup.png")).unwrap();
        std::fs::copy(raw.join("masks/slice_001.png"), raw.join("masks/dup.png")).unwrap();
        let spec = SplitSpec {
            seed: 9,
            test_fraction: 0.25,
            extractor: Extractor::Neighbor,
        };
        let src = [SourceDir::parse(&format!("a={}", raw.display()))];
        let m1 = ingest(&src, &dir.path().join("o1"), &spec).unwrap();
        let m2 = ingest(&src, &dir.path().join("o2"), &spec).unwrap();
        assert_eq!(m1.content_hash, m2.content_hash);
        assert_eq!(m1.count(Split::Train) + m1.count(Split::Test), 21);
        assert_eq!(m1.excluded.len(), 1);
        let test_hashes: BTreeSet<_> = m1.entries(Split::Test).map(|e| &e.image_hash).collect();
        assert!(m1.entries(Split::Train).all(|e| !test_hashes.contains(&e.image_hash)));
        let loaded = load_split(&dir.path().join("o1"), &m1, Split::Test).unwrap();
        assert_eq!(loaded.len(), m1.count(Split::Test));
        assert!(dir.path().join("o1/test/boundaries").is_dir());
    }
}
