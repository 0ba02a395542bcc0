//! Background replacement: crop the tissue of one image and paste it, resized,
//! over the tissue box of another.

use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize) -> Result<Self> {
        if top >= bottom || left >= right {
            return Err(Error::Param(format!(
                "empty box rows {top}..{bottom}, cols {left}..{right}"
            )));
        }
        Ok(Self {
            top,
            left,
            bottom,
            right,
        })
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom).contains(&y) && (self.left..self.right).contains(&x)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.top < self.bottom && self.left < self.right && self.bottom <= height && self.right <= width
    }
}

/// Smallest box containing every nonzero pixel of a single `height × width` plane,
/// or `None` when the plane is empty.
pub fn tight_bbox(plane: &[u8], height: usize, width: usize) -> Option<BoundingBox> {
    debug_assert_eq!(plane.len(), height * width);
    let rows_hit = |y: usize| plane[y * width..(y + 1) * width].iter().any(|&v| v != 0);
    let top = (0..height).find(|&y| rows_hit(y))?;
    let bottom = (0..height).rev().find(|&y| rows_hit(y))? + 1;
    let mut left = width;
    let mut right = 0;
    for y in top..bottom {
        let row = &plane[y * width..(y + 1) * width];
        if let Some(first) = row.iter().position(|&v| v != 0) {
            left = left.min(first);
            right = right.max(row.iter().rposition(|&v| v != 0).unwrap() + 1);
        }
    }
    Some(BoundingBox {
        top,
        left,
        bottom,
        right,
    })
}

/// Bilinear resize with half-pixel centres; sample positions are clamped to the
/// source, so a one-pixel source replicates.
pub fn resize_bilinear(src: &Grid<f32>, out_h: usize, out_w: usize) -> Grid<f32> {
    let (c, in_h, in_w) = src.dims();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|i| {
                let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(in_h, out_h);
    let xs = axis(in_w, out_w);
    Grid::from_fn(c, out_h, out_w, |ch, y, x| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = src.get(ch, y0, x0) * (1.0 - fx) + src.get(ch, y0, x1) * fx;
        let bot = src.get(ch, y1, x0) * (1.0 - fx) + src.get(ch, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

fn crop(src: &Grid<f32>, b: &BoundingBox) -> Grid<f32> {
    Grid::from_fn(src.channels(), b.height(), b.width(), |c, y, x| {
        src.get(c, b.top + y, b.left + x)
    })
}

/// Copy of `host` whose `host_box` region holds the `target_box` crop of
/// `target`, bilinearly resized to the host box. Pixels outside `host_box` are
/// the host's, untouched.
pub fn replace_background(
    target: &RasterImage,
    target_box: &BoundingBox,
    host: &RasterImage,
    host_box: &BoundingBox,
) -> Result<RasterImage> {
    if !target_box.fits(target.height(), target.width()) {
        return Err(Error::Param(format!(
            "target box {target_box:?} outside {}x{} image",
            target.height(),
            target.width()
        )));
    }
    if !host_box.fits(host.height(), host.width()) {
        return Err(Error::Param(format!(
            "host box {host_box:?} outside {}x{} image",
            host.height(),
            host.width()
        )));
    }
    if target.channels() != host.channels() {
        return Err(Error::Shape(format!(
            "target has {} channels, host {}",
            target.channels(),
            host.channels()
        )));
    }
    let patch = resize_bilinear(
        &crop(target.grid(), target_box),
        host_box.height(),
        host_box.width(),
    );
    let mut out = host.grid().clone();
    for c in 0..out.channels() {
        for y in 0..host_box.height() {
            for x in 0..host_box.width() {
                out.set(c, host_box.top + y, host_box.left + x, patch.get(c, y, x));
            }
        }
    }
    RasterImage::from_clamped(out)
}
