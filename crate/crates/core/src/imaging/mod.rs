//! Images, class masks and everything that produces or perturbs them.

mod augment;
mod io;
mod swap;
mod synth;

pub use augment::{source_augment, AugmentConfig};
pub use io::{load_dataset, load_image, load_mask, load_sample, save_dataset, Dataset};
pub use swap::{replace_background, resize_bilinear, tight_bbox, BoundingBox};
pub use synth::{synth_dataset, DomainParams};

use serde::{Deserialize, Serialize};

use crate::boundary::hard_boundary;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Class channel index of the optic disc.
pub const DISC: usize = 0;
/// Class channel index of the optic cup.
pub const CUP: usize = 1;
pub const NUM_CLASSES: usize = 2;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["disc", "cup"];

pub const MIN_IMAGE_SIDE: usize = 8;

/// Planar RGB (or any channel count) image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterImage(Grid<f32>);

impl RasterImage {
    pub fn new(grid: Grid<f32>) -> Result<Self> {
        let (_, h, w) = grid.dims();
        if h < MIN_IMAGE_SIDE || w < MIN_IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "image {h}x{w} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        if let Some(v) = grid
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Param(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self(grid))
    }

    /// Clamps every intensity into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(mut grid: Grid<f32>) -> Result<Self> {
        for v in grid.as_mut_slice() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(grid)
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }
}

/// Binary per-class mask, channel 0 = disc, channel 1 = cup.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassMask(Grid<u8>);

impl ClassMask {
    pub fn new(grid: Grid<u8>) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|&&v| v > 1) {
            return Err(Error::Param(format!("mask value {v} is not binary")));
        }
        Ok(Self(grid))
    }

    pub(crate) fn from_grid_unchecked(grid: Grid<u8>) -> Self {
        debug_assert!(grid.as_slice().iter().all(|&v| v <= 1));
        Self(grid)
    }

    pub fn empty(classes: usize, height: usize, width: usize) -> Self {
        Self(Grid::filled(classes, height, width, 0))
    }

    /// Thresholds a probability map: `1` where `p > threshold`.
    pub fn from_probs(probs: &Grid<f32>, threshold: f32) -> Self {
        Self(probs.map(|p| u8::from(p > threshold)))
    }

    /// Decodes a `{0, 128, 255}` labelmap: disc = `v >= 128`, cup = `v == 255`.
    pub fn from_labelmap(values: &[u8], height: usize, width: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "labelmap has {} values for {height}x{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !matches!(v, 0 | 128 | 255)) {
            return Err(Error::Param(format!("unexpected label value {v}")));
        }
        let n = height * width;
        let mut data = vec![0u8; NUM_CLASSES * n];
        for (i, &v) in values.iter().enumerate() {
            data[DISC * n + i] = u8::from(v >= 128);
            data[CUP * n + i] = u8::from(v == 255);
        }
        Ok(Self(Grid::new(NUM_CLASSES, height, width, data)?))
    }

    /// Inverse of [`from_labelmap`](Self::from_labelmap). Cup pixels outside the
    /// disc are encoded as cup (255), which re-decodes as cup ⊆ disc.
    pub fn to_labelmap(&self) -> Vec<u8> {
        let disc = self.0.plane(DISC);
        let cup = self.0.plane(CUP);
        disc.iter()
            .zip(cup)
            .map(|(&d, &c)| match (d, c) {
                (_, 1) => 255,
                (1, 0) => 128,
                _ => 0,
            })
            .collect()
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        self.0.plane(c)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }

    pub fn count(&self, c: usize) -> usize {
        self.channel(c).iter().map(|&v| usize::from(v)).sum()
    }

    pub fn is_channel_empty(&self, c: usize) -> bool {
        self.channel(c).iter().all(|&v| v == 0)
    }

    /// True when every cup pixel is also a disc pixel.
    pub fn cup_within_disc(&self) -> bool {
        self.channel(CUP)
            .iter()
            .zip(self.channel(DISC))
            .all(|(&c, &d)| c <= d)
    }

    pub fn to_f64(&self) -> Grid<f64> {
        self.0.map(f64::from)
    }

    pub fn to_f32(&self) -> Grid<f32> {
        self.0.map(f32::from)
    }
}

/// Labeled source-domain sample with its derived boundary labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub image: RasterImage,
    pub mask: ClassMask,
    pub boundary: ClassMask,
}

impl AnnotatedSample {
    pub fn new(image: RasterImage, mask: ClassMask) -> Result<Self> {
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::Shape(format!(
                "image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        let boundary = hard_boundary(&mask);
        Ok(Self {
            image,
            mask,
            boundary,
        })
    }
}
