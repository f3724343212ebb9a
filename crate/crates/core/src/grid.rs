//! Plain row-major 2-D grids used outside the tensor graph: probability maps,
//! grayscale slices and binary masks.

use crate::error::{Error, Result};

/// Row-major grid, `data[row * width + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

/// Per-pixel probabilities in `[0, 1]`.
pub type ProbMap = Grid<f32>;

/// Grayscale intensities scaled to `[0, 1]`.
pub type GrayImage = Grid<f32>;

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InputShape(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U, F: Fn(T) -> U>(&self, f: F) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn flip_vertical(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width).rev() {
            data.extend_from_slice(row);
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// A grid whose values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InputShape(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Contract(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Foreground where `value > threshold`.
    pub fn threshold(map: &Grid<f32>, threshold: f32) -> Self {
        Self {
            width: map.width,
            height: map.height,
            data: map.data.iter().map(|&v| (v > threshold) as u8).collect(),
        }
    }

    /// Foreground where `value >= threshold`, the binarization used for predictions.
    pub fn binarize(map: &Grid<f32>, threshold: f32) -> Self {
        Self {
            width: map.width,
            height: map.height,
            data: map.data.iter().map(|&v| (v >= threshold) as u8).collect(),
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_f32(&self) -> Grid<f32> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn invert(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let g = Grid {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
        .flip_horizontal();
        Self {
            width: g.width,
            height: g.height,
            data: g.data,
        }
    }

    pub fn flip_vertical(&self) -> Self {
        let g = Grid {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
        .flip_vertical();
        Self {
            width: g.width,
            height: g.height,
            data: g.data,
        }
    }

    /// Foreground pixels with at least one background 4-neighbor; pixels
    /// outside the image count as background.
    pub fn inner_boundary(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        BinaryMask::from_fn(w, h, |r, c| {
            if !self.get(r, c) {
                return false;
            }
            r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !self.get(r - 1, c)
                || !self.get(r + 1, c)
                || !self.get(r, c - 1)
                || !self.get(r, c + 1)
        })
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        BinaryMask::from_fn(w, h, |r, c| {
            let r0 = r.saturating_sub(radius);
            let c0 = c.saturating_sub(radius);
            let r1 = (r + radius).min(h - 1);
            let c1 = (c + radius).min(w - 1);
            (r0..=r1).any(|rr| (c0..=c1).any(|cc| self.get(rr, cc)))
        })
    }

    /// Row/column coordinates of every foreground pixel, in raster order.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMask::new(2, 1, vec![0, 2]).is_err());
        assert!(BinaryMask::new(2, 2, vec![0, 1]).is_err());
    }

    #[test]
    fn inner_boundary_of_full_frame_is_border() {
        let m = BinaryMask::from_fn(5, 4, |_, _| true);
        let b = m.inner_boundary();
        assert_eq!(b.count(), 2 * 5 + 2 * 2);
        assert!(!b.get(1, 1));
    }

    #[test]
    fn flips_are_involutions() {
        let g = Grid::new(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(g.flip_horizontal().data, vec![3., 2., 1., 6., 5., 4.]);
        assert_eq!(g.flip_horizontal().flip_horizontal(), g);
        assert_eq!(g.flip_vertical().data, vec![4., 5., 6., 1., 2., 3.]);
    }
}
