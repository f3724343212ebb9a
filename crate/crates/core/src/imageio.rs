//! PNG/JPEG reading and writing for slices, masks and probability maps.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GrayImage, ProbMap};

/// Gray level at or above which a stored mask pixel is foreground.
pub const MASK_THRESHOLD: u8 = 127;

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| Error::image(path, e))
}

/// Reads a grayscale slice as intensities in `[0, 1]`. 16-bit images keep
/// their full precision; color images are converted to luma.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        other => other.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
    };
    GrayImage::new(w, h, data)
}

/// A mask read from disk, with whether any value needed binarizing.
pub struct LoadedMask {
    pub mask: BinaryMask,
    pub was_binarized: bool,
}

/// Reads a mask stored as 0/255 (or 0/1). Other gray levels are
/// binarized at [`MASK_THRESHOLD`].
pub fn read_mask(path: &Path) -> Result<LoadedMask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let max = raw.iter().copied().max().unwrap_or(0);
    let zero_one = max <= 1;
    let mut was_binarized = false;
    let data = raw
        .into_iter()
        .map(|v| {
            if zero_one {
                v
            } else {
                if v != 0 && v != 255 {
                    was_binarized = true;
                }
                (v > MASK_THRESHOLD) as u8
            }
        })
        .collect();
    Ok(LoadedMask {
        mask: BinaryMask::new(w, h, data)?,
        was_binarized,
    })
}

/// Reads a probability map stored as 8- or 16-bit gray.
pub fn read_prob(path: &Path) -> Result<ProbMap> {
    read_gray(path)
}

fn save(buf: ImageBuffer<Luma<u8>, Vec<u8>>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::image(path, e))
}

/// Writes a mask as 0/255 gray.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let data = mask.data().iter().map(|&v| v * 255).collect();
    let buf = ImageBuffer::from_raw(mask.width as u32, mask.height as u32, data)
        .expect("buffer size matches mask");
    save(buf, path)
}

/// Writes values in `[0, 1]` as 8-bit gray (clamped, rounded).
pub fn write_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let data = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = ImageBuffer::from_raw(img.width as u32, img.height as u32, data)
        .expect("buffer size matches image");
    save(buf, path)
}
