use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of `(channel, row, col)` in channel-major order.
    #[inline]
    pub const fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }
}

/// Flat pixel intensities in `[0, 1]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    shape: ImageShape,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(shape: ImageShape) -> Self {
        Self {
            shape,
            pixels: vec![T::zero(); shape.len()],
        }
    }

    /// Panics when `pixels.len()` disagrees with `shape`.
    pub fn from_pixels(shape: ImageShape, pixels: Vec<T>) -> Self {
        assert_eq!(pixels.len(), shape.len(), "pixel count does not match shape");
        Self { shape, pixels }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [T] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> T {
        self.pixels[self.shape.index(channel, row, col)]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: T) {
        let i = self.shape.index(channel, row, col);
        self.pixels[i] = value;
    }

    /// Bit pattern of the pixels, usable as a hash key for distinctness counts.
    pub fn key(&self) -> Vec<u64> {
        self.pixels.iter().map(|p| p.as_f64().to_bits()).collect()
    }
}
