//! Dice and average surface distance, per class and aggregated.
//!
//! The surface of a mask is its 4-connected inner border: foreground pixels
//! with at least one background 4-neighbour, the outside of the image
//! counting as background. ASD distances are exact Euclidean distances,
//! obtained from a squared distance transform of the other mask's surface.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ClassMask, Dataset, RasterImage, CLASS_NAMES, NUM_CLASSES};
use crate::network::Model;

/// `2|A∩B| / (|A|+|B|)`, with 1.0 when both masks are empty.
pub fn dice_score(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "dice of {} vs {} pixels",
            pred.len(),
            truth.len()
        )));
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p != 0, t != 0);
        inter += usize::from(p && t);
        a += usize::from(p);
        b += usize::from(t);
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Surface pixels as `(row, col)`, in raster order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceSet {
    pub points: Vec<(usize, usize)>,
}

impl SurfaceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn extract_surface(mask: &[u8], height: usize, width: usize) -> SurfaceSet {
    debug_assert_eq!(mask.len(), height * width);
    let fg = |y: isize, x: isize| {
        y >= 0
            && x >= 0
            && (y as usize) < height
            && (x as usize) < width
            && mask[y as usize * width + x as usize] != 0
    };
    let mut points = Vec::new();
    for y in 0..height as isize {
        for x in 0..width as isize {
            if fg(y, x) && !(fg(y - 1, x) && fg(y + 1, x) && fg(y, x - 1) && fg(y, x + 1)) {
                points.push((y as usize, x as usize));
            }
        }
    }
    SurfaceSet { points }
}

/// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher), in place.
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], out: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    let first = match f.iter().position(|x| x.is_finite()) {
        Some(i) => i,
        None => return,
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *o = (qf - p) * (qf - p) + f[v[k]];
    }
    f.copy_from_slice(&out[..n]);
}

/// Squared Euclidean distance from every pixel to the nearest site.
fn squared_distance_map(sites: &SurfaceSet, height: usize, width: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; height * width];
    for &(y, x) in &sites.points {
        d[y * width + x] = 0.0;
    }
    let n = height.max(width);
    let (mut v, mut z, mut out) = (vec![0usize; n], vec![0.0; n + 1], vec![0.0; n]);
    let mut col = vec![0.0; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = d[y * width + x];
        }
        edt_1d(&mut col, &mut v, &mut z, &mut out);
        for y in 0..height {
            d[y * width + x] = col[y];
        }
    }
    for y in 0..height {
        edt_1d(&mut d[y * width..(y + 1) * width], &mut v, &mut z, &mut out);
    }
    d
}

/// Symmetric average surface distance, or `None` when either surface is empty.
pub fn asd(pred: &[u8], truth: &[u8], height: usize, width: usize) -> Result<Option<f64>> {
    if pred.len() != height * width || truth.len() != height * width {
        return Err(Error::Shape(format!(
            "asd expects {height}x{width} masks, got {} and {} pixels",
            pred.len(),
            truth.len()
        )));
    }
    let sp = extract_surface(pred, height, width);
    let st = extract_surface(truth, height, width);
    if sp.is_empty() || st.is_empty() {
        return Ok(None);
    }
    let to_truth = squared_distance_map(&st, height, width);
    let to_pred = squared_distance_map(&sp, height, width);
    let directed = |from: &SurfaceSet, to: &[f64]| -> f64 { from.points.iter().map(|&(y, x)| to[y * width + x].sqrt()).sum() };
    // Two partial sums added once, so swapping the arguments is exact.
    let sum = directed(&sp, &to_truth) + directed(&st, &to_pred);
    Ok(Some(sum / (sp.len() + st.len()) as f64))
}

/// Per-image scores, Dice as a fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub dice: [f64; NUM_CLASSES],
    pub asd: [Option<f64>; NUM_CLASSES],
}

pub fn image_metrics(pred: &ClassMask, truth: &ClassMask) -> Result<ImageMetrics> {
    if pred.grid().dims() != truth.grid().dims() || pred.classes() != NUM_CLASSES {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.grid().dims(),
            truth.grid().dims()
        )));
    }
    let (h, w) = (truth.height(), truth.width());
    let mut dice = [0.0; NUM_CLASSES];
    let mut dist = [None; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        dice[c] = dice_score(pred.channel(c), truth.channel(c))?;
        dist[c] = asd(pred.channel(c), truth.channel(c), h, w)?;
    }
    Ok(ImageMetrics { dice, asd: dist })
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    /// Percent.
    pub dice: MeanStd,
    /// Pixels; `None` when every image had an empty surface.
    pub asd: Option<MeanStd>,
    /// Images whose ASD was undefined and left out of the mean.
    pub asd_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classes: Vec<ClassReport>,
    pub avg_dice: f64,
    pub avg_asd: Option<f64>,
    pub samples: usize,
}

impl MetricsReport {
    pub fn from_images(per_image: &[ImageMetrics]) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Precondition("no images to summarise".into()));
        }
        let classes: Vec<ClassReport> = (0..NUM_CLASSES)
            .map(|c| {
                let dice: Vec<f64> = per_image.iter().map(|m| 100.0 * m.dice[c]).collect();
                let asd: Vec<f64> = per_image.iter().filter_map(|m| m.asd[c]).collect();
                ClassReport {
                    class: CLASS_NAMES[c].to_string(),
                    dice: MeanStd::of(&dice).expect("non-empty"),
                    asd: MeanStd::of(&asd),
                    asd_excluded: per_image.len() - asd.len(),
                }
            })
            .collect();
        let avg_dice = classes.iter().map(|c| c.dice.mean).sum::<f64>() / NUM_CLASSES as f64;
        let avg_asd = classes
            .iter()
            .map(|c| c.asd.map(|a| a.mean))
            .sum::<Option<f64>>()
            .map(|s| s / NUM_CLASSES as f64);
        Ok(Self {
            classes,
            avg_dice,
            avg_asd,
            samples: per_image.len(),
        })
    }

    /// Mean Dice (percent) of one class.
    pub fn dice(&self, class: usize) -> f64 {
        self.classes[class].dice.mean
    }
}

/// Scores a model on a labeled set, thresholding its region probabilities.
pub fn evaluate(model: &Model, dataset: &Dataset, threshold: f32) -> Result<MetricsReport> {
    let masks = dataset
        .masks
        .as_ref()
        .ok_or_else(|| Error::Precondition("evaluation needs a labeled set".into()))?;
    evaluate_images(model, &dataset.images, masks, threshold)
}

/// [`evaluate`] over parallel image/mask slices.
pub fn evaluate_images(
    model: &Model,
    images: &[RasterImage],
    masks: &[ClassMask],
    threshold: f32,
) -> Result<MetricsReport> {
    if images.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} images but {} masks",
            images.len(),
            masks.len()
        )));
    }
    let per_image = images
        .iter()
        .zip(masks)
        .map(|(image, truth)| {
            let out = model.predict(image)?;
            image_metrics(&ClassMask::from_probs(&out.seg_probs, threshold), truth)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_images(&per_image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, top: usize, left: usize, side: usize) -> Vec<u8> {
        let mut m = vec![0u8; h * w];
        for y in top..top + side {
            for x in left..left + side {
                m[y * w + x] = 1;
            }
        }
        m
    }

    #[test]
    fn dice_cases() {
        let a = square(8, 8, 1, 1, 3);
        let b = square(8, 8, 1, 2, 3);
        let far = square(8, 8, 5, 5, 3);
        assert_eq!(dice_score(&a, &a).unwrap(), 1.0);
        assert_eq!(dice_score(&a, &far).unwrap(), 0.0);
        assert!((dice_score(&a, &b).unwrap() - 2.0 * 6.0 / 18.0).abs() < 1e-12);
        assert_eq!(dice_score(&[0; 4], &[0; 4]).unwrap(), 1.0);
        assert!(dice_score(&[0; 4], &[0; 5]).is_err());
    }

    #[test]
    fn surface_of_single_pixel_and_square() {
        let mut one = vec![0u8; 25];
        one[12] = 1;
        assert_eq!(extract_surface(&one, 5, 5).points, vec![(2, 2)]);
        let sq = square(8, 8, 2, 2, 4);
        let s = extract_surface(&sq, 8, 8);
        assert_eq!(s.len(), 12);
        assert!(!s.points.contains(&(3, 3)));
        assert!(extract_surface(&[0; 16], 4, 4).is_empty());
    }

    #[test]
    fn full_mask_surface_is_border_ring() {
        let s = extract_surface(&[1; 16], 4, 4);
        assert_eq!(s.len(), 12);
    }

    #[test]
    fn asd_cases() {
        let a = square(10, 10, 2, 2, 4);
        assert_eq!(asd(&a, &a, 10, 10).unwrap(), Some(0.0));
        let mut p = vec![0u8; 100];
        let mut t = vec![0u8; 100];
        p[0] = 1;
        t[3 * 10 + 4] = 1;
        assert_eq!(asd(&p, &t, 10, 10).unwrap(), Some(5.0));
        assert_eq!(asd(&p, &[0; 100], 10, 10).unwrap(), None);
    }

    #[test]
    fn report_of_single_image_has_zero_std() {
        let m = ImageMetrics {
            dice: [0.9, 0.8],
            asd: [Some(1.5), None],
        };
        let r = MetricsReport::from_images(&[m]).unwrap();
        assert_eq!(r.classes[0].dice.std, 0.0);
        assert!((r.classes[0].dice.mean - 90.0).abs() < 1e-12);
        assert_eq!(r.classes[1].asd, None);
        assert_eq!(r.classes[1].asd_excluded, 1);
        assert_eq!(r.avg_asd, None);
        assert!((r.avg_dice - 85.0).abs() < 1e-12);
    }
}
