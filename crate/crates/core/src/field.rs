//! Dense row-major 2-D rasters used throughout the pipeline.

use std::ops::{Index, IndexMut};

/// Dense 2-D raster with one value per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Clone> Field2<T> {
    /// Field of the given extents with every pixel set to `value`.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Field2<T> {
    /// Wraps a row-major buffer. Panics if `data.len() != height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width, "field buffer length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_dims<U>(&self, other: &Field2<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub(crate) fn offset(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }
}

impl<T: Copy> Field2<T> {
    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[self.offset(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.offset(row, col);
        self.data[i] = value;
    }
}

impl<T> Index<(usize, usize)> for Field2<T> {
    type Output = T;

    #[inline]
    fn index(&self, (row, col): (usize, usize)) -> &T {
        &self.data[row * self.width + col]
    }
}

impl<T> IndexMut<(usize, usize)> for Field2<T> {
    #[inline]
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut T {
        &mut self.data[row * self.width + col]
    }
}

/// Dense 2-D raster with a 3-vector per pixel (RGB or stain triples).
#[derive(Debug, Clone, PartialEq)]
pub struct Field3<F> {
    height: usize,
    width: usize,
    data: Vec<[F; 3]>,
}

impl<F: Copy> Field3<F> {
    pub fn filled(height: usize, width: usize, value: [F; 3]) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<[F; 3]>) -> Self {
        assert_eq!(data.len(), height * width, "field buffer length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> [F; 3] {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: [F; 3]) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[[F; 3]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[F; 3]] {
        &mut self.data
    }
}

/// Dense 2-D raster with `channels` values per pixel, HWC row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField<F> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<F>,
}

impl<F: Copy> ChannelField<F> {
    pub fn filled(height: usize, width: usize, channels: usize, value: F) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<F>) -> Self {
        assert_eq!(
            data.len(),
            height * width * channels,
            "field buffer length mismatch"
        );
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> F {
        debug_assert!(channel < self.channels);
        self.data[(row * self.width + col) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: F) {
        debug_assert!(channel < self.channels);
        self.data[(row * self.width + col) * self.channels + channel] = value;
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[F] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
}

/// H×W×3 RGB tile of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTile {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageTile {
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Wraps an interleaved RGB buffer. Panics if `data.len() != h * w * 3`.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), height * width * 3, "rgb buffer length mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Horizontal/vertical signed distance maps, each in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HvMaps<F> {
    pub horizontal: Field2<F>,
    pub vertical: Field2<F>,
}

impl<F> HvMaps<F> {
    pub fn new(horizontal: Field2<F>, vertical: Field2<F>) -> Self {
        assert!(
            horizontal.same_dims(&vertical),
            "horizontal/vertical extents differ"
        );
        Self {
            horizontal,
            vertical,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.horizontal.dims()
    }
}

/// Binary foreground mask.
pub type BinaryField = Field2<bool>;
/// Per-pixel instance id; 0 is background.
pub type InstanceMap = Field2<u32>;
/// Per-pixel class id in `0..=C`; 0 is background.
pub type ClassMap = Field2<u32>;
/// Per-pixel real value.
pub type ScalarField<F> = Field2<F>;
/// Per-pixel haematoxylin/eosin/DAB concentrations.
pub type StainMap<F> = Field3<F>;
/// Per-pixel linear RGB in [0, 1].
pub type RgbField<F> = Field3<F>;
/// Per-pixel (C+1)-channel soft one-hot label.
pub type SmoothedOneHot<F> = ChannelField<F>;
