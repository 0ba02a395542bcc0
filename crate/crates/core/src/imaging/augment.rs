//! Source-domain augmentation: rotation, flips, elastic warping, contrast,
//! Gaussian noise and random erasing.
//!
//! Geometric transforms move image, mask and boundary together (bilinear for
//! intensities, nearest for labels); photometric transforms touch the image
//! only. The boundary channel is recomputed from the warped mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnotatedSample, ClassMask, RasterImage};
use crate::grid::Grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotate_prob: f64,
    pub max_rotation_deg: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub elastic_prob: f64,
    /// Standard deviation of control-point displacements, in pixels.
    pub elastic_magnitude: f64,
    /// Control points per side of the displacement grid.
    pub elastic_grid: usize,
    pub contrast_prob: f64,
    /// Contrast factor drawn uniformly from this range.
    pub contrast_range: (f64, f64),
    pub noise_prob: f64,
    pub noise_sigma: f64,
    pub erase_prob: f64,
    /// Largest erased rectangle side as a fraction of the image side.
    pub erase_max_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate_prob: 0.5,
            max_rotation_deg: 20.0,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            elastic_prob: 0.3,
            elastic_magnitude: 1.5,
            elastic_grid: 4,
            contrast_prob: 0.5,
            contrast_range: (0.8, 1.2),
            noise_prob: 0.3,
            noise_sigma: 0.02,
            erase_prob: 0.2,
            erase_max_frac: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            rotate_prob: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            elastic_prob: 0.0,
            contrast_prob: 0.0,
            noise_prob: 0.0,
            erase_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn noise_only(sigma: f64) -> Self {
        Self {
            noise_prob: 1.0,
            noise_sigma: sigma,
            ..Self::identity()
        }
    }
}

/// Maps an output pixel to the source coordinate it samples from.
struct Warp {
    h: usize,
    w: usize,
    rotation: Option<(f64, f64)>,
    /// Displacements on a coarse `g × g` grid, `(dy, dx)` per control point.
    elastic: Option<(usize, Vec<(f64, f64)>)>,
}

impl Warp {
    fn is_identity(&self) -> bool {
        self.rotation.is_none() && self.elastic.is_none()
    }

    fn displacement(&self, y: f64, x: f64) -> (f64, f64) {
        let Some((g, d)) = &self.elastic else {
            return (0.0, 0.0);
        };
        let g = *g;
        let fy = y / (self.h - 1).max(1) as f64 * (g - 1) as f64;
        let fx = x / (self.w - 1).max(1) as f64 * (g - 1) as f64;
        let y0 = (fy.floor() as usize).min(g - 2);
        let x0 = (fx.floor() as usize).min(g - 2);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let at = |r: usize, c: usize| d[r * g + c];
        let lerp = |a: (f64, f64), b: (f64, f64), t: f64| {
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        };
        let top = lerp(at(y0, x0), at(y0, x0 + 1), tx);
        let bot = lerp(at(y0 + 1, x0), at(y0 + 1, x0 + 1), tx);
        lerp(top, bot, ty)
    }

    fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let (mut sy, mut sx) = (y as f64, x as f64);
        let (dy, dx) = self.displacement(sy, sx);
        sy += dy;
        sx += dx;
        if let Some((cos, sin)) = self.rotation {
            let cy = (self.h - 1) as f64 / 2.0;
            let cx = (self.w - 1) as f64 / 2.0;
            let (ry, rx) = (sy - cy, sx - cx);
            sy = cy + cos * ry - sin * rx;
            sx = cx + sin * ry + cos * rx;
        }
        (sy, sx)
    }
}

fn warp_bilinear(src: &Grid<f32>, warp: &Warp) -> Grid<f32> {
    let (c, h, w) = src.dims();
    let coords: Vec<(f64, f64)> = (0..h * w).map(|i| warp.source(i / w, i % w)).collect();
    Grid::from_fn(c, h, w, |ch, y, x| {
        let (sy, sx) = coords[y * w + x];
        let sy = sy.clamp(0.0, (h - 1) as f64);
        let sx = sx.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
        let top = src.get(ch, y0, x0) * (1.0 - fx) + src.get(ch, y0, x1) * fx;
        let bot = src.get(ch, y1, x0) * (1.0 - fx) + src.get(ch, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

fn warp_nearest(src: &Grid<u8>, warp: &Warp) -> Grid<u8> {
    let (c, h, w) = src.dims();
    let coords: Vec<(usize, usize)> = (0..h * w)
        .map(|i| {
            let (sy, sx) = warp.source(i / w, i % w);
            (
                sy.round().clamp(0.0, (h - 1) as f64) as usize,
                sx.round().clamp(0.0, (w - 1) as f64) as usize,
            )
        })
        .collect();
    Grid::from_fn(c, h, w, |ch, y, x| {
        let (sy, sx) = coords[y * w + x];
        src.get(ch, sy, sx)
    })
}

fn flip<T: Copy>(g: &Grid<T>, horizontal: bool, vertical: bool) -> Grid<T> {
    let (c, h, w) = g.dims();
    Grid::from_fn(c, h, w, |ch, y, x| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        g.get(ch, sy, sx)
    })
}

/// Applies a random subset of the configured transforms, deterministically in `seed`.
pub fn source_augment(sample: &AnnotatedSample, config: &AugmentConfig, seed: u64) -> AnnotatedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = sample.image.grid().clone();
    let mut mask = sample.mask.grid().clone();
    let (_, h, w) = image.dims();

    // Draw every decision up front so the random stream does not depend on
    // which branches fire.
    let hflip = rng.gen_bool(config.hflip_prob.clamp(0.0, 1.0));
    let vflip = rng.gen_bool(config.vflip_prob.clamp(0.0, 1.0));
    let rotate = rng.gen_bool(config.rotate_prob.clamp(0.0, 1.0));
    let angle = rng.gen_range(-1.0..=1.0) * config.max_rotation_deg.to_radians();
    let elastic = rng.gen_bool(config.elastic_prob.clamp(0.0, 1.0));
    let contrast = rng.gen_bool(config.contrast_prob.clamp(0.0, 1.0));
    let noise = rng.gen_bool(config.noise_prob.clamp(0.0, 1.0));
    let erase = rng.gen_bool(config.erase_prob.clamp(0.0, 1.0));

    if hflip || vflip {
        image = flip(&image, hflip, vflip);
        mask = flip(&mask, hflip, vflip);
    }

    let g = config.elastic_grid.max(2);
    let mut warp = Warp {
        h,
        w,
        rotation: None,
        elastic: None,
    };
    if rotate && angle != 0.0 {
        warp.rotation = Some((angle.cos(), angle.sin()));
    }
    if elastic && config.elastic_magnitude > 0.0 {
        let normal = Normal::new(0.0, config.elastic_magnitude).expect("positive sigma");
        let d = (0..g * g)
            .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
            .collect();
        warp.elastic = Some((g, d));
    }
    if !warp.is_identity() {
        image = warp_bilinear(&image, &warp);
        mask = warp_nearest(&mask, &warp);
    }

    if contrast {
        let (lo, hi) = config.contrast_range;
        let k = if hi > lo { rng.gen_range(lo..hi) } else { lo } as f32;
        let n = image.plane_len() as f32;
        for ch in 0..image.channels() {
            let plane = image.plane_mut(ch);
            let mean = plane.iter().sum::<f32>() / n;
            for v in plane {
                *v = (mean + (*v - mean) * k).clamp(0.0, 1.0);
            }
        }
    }
    if noise && config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f32, config.noise_sigma as f32).expect("positive sigma");
        for v in image.as_mut_slice() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if erase && config.erase_max_frac > 0.0 {
        let eh = ((h as f64 * config.erase_max_frac * rng.gen::<f64>()).round() as usize).max(1);
        let ew = ((w as f64 * config.erase_max_frac * rng.gen::<f64>()).round() as usize).max(1);
        let top = rng.gen_range(0..=h - eh.min(h));
        let left = rng.gen_range(0..=w - ew.min(w));
        for ch in 0..image.channels() {
            let fill: f32 = rng.gen();
            for y in top..(top + eh).min(h) {
                for x in left..(left + ew).min(w) {
                    image.set(ch, y, x, fill);
                }
            }
        }
    }

    let image = RasterImage::from_clamped(image).expect("augmentation keeps image dimensions");
    let mask = ClassMask::from_grid_unchecked(mask);
    AnnotatedSample::new(image, mask).expect("augmentation keeps image and mask aligned")
}
