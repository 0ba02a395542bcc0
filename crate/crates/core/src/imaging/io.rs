use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use super::{AnnotatedSample, ClassMask, RasterImage};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Reads an 8-bit raster as a planar RGB image scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_rgb8()
        }
        other => {
            return Err(Error::load(
                path,
                format!("expected an 8-bit raster, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let grid = Grid::from_fn(3, h, w, |c, y, x| {
        f32::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
    });
    RasterImage::new(grid).map_err(|e| Error::load(path, e.to_string()))
}

/// Reads a `{0, 128, 255}` grayscale labelmap.
pub fn load_mask(path: &Path) -> Result<ClassMask> {
    let img = image::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::load(
                path,
                format!("expected an 8-bit grayscale labelmap, found {:?}", other.color()),
            ))
        }
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    ClassMask::from_labelmap(gray.as_raw(), h, w).map_err(|e| Error::load(path, e.to_string()))
}

pub fn load_sample(image_path: &Path, mask_path: &Path) -> Result<AnnotatedSample> {
    let image = load_image(image_path)?;
    let mask = load_mask(mask_path)?;
    AnnotatedSample::new(image, mask).map_err(|e| Error::load(mask_path, e.to_string()))
}

fn to_rgb8(image: &RasterImage) -> RgbImage {
    let g = image.grid();
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let px = |c: usize| {
            let c = c.min(g.channels() - 1);
            (g.get(c, y as usize, x as usize) * 255.0).round() as u8
        };
        image::Rgb([px(0), px(1), px(2)])
    })
}

/// An image set in the on-disk layout `images/<stem>.png` + optional `masks/<stem>.png`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub images: Vec<RasterImage>,
    pub masks: Option<Vec<ClassMask>>,
}

impl Dataset {
    pub fn from_samples(names: Vec<String>, samples: Vec<AnnotatedSample>) -> Self {
        let (images, masks) = samples.into_iter().map(|s| (s.image, s.mask)).unzip();
        Self {
            names,
            images,
            masks: Some(masks),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.masks.is_some()
    }

    pub fn samples(&self) -> Result<Vec<AnnotatedSample>> {
        let masks = self
            .masks
            .as_ref()
            .ok_or_else(|| Error::Precondition("dataset has no masks".into()))?;
        self.images
            .iter()
            .zip(masks)
            .map(|(i, m)| AnnotatedSample::new(i.clone(), m.clone()))
            .collect()
    }
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::load(dir, e.to_string()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads `dir/images/*.png`, plus `dir/masks/*.png` when that directory exists.
/// Every image must have a mask with the same stem if any masks are present.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let image_dir = dir.join("images");
    if !image_dir.is_dir() {
        return Err(Error::load(&image_dir, "missing images directory"));
    }
    let stems = png_stems(&image_dir)?;
    let mask_dir = dir.join("masks");
    let mut names = Vec::with_capacity(stems.len());
    let mut images = Vec::with_capacity(stems.len());
    let mut masks = mask_dir.is_dir().then(Vec::new);
    for (stem, path) in stems {
        let image = load_image(&path)?;
        if let Some(masks) = masks.as_mut() {
            let mask_path = mask_dir.join(format!("{stem}.png"));
            if !mask_path.is_file() {
                return Err(Error::load(&mask_path, "mask missing for image"));
            }
            let mask = load_mask(&mask_path)?;
            if mask.height() != image.height() || mask.width() != image.width() {
                return Err(Error::load(
                    &mask_path,
                    format!(
                        "dimension mismatch: image {}x{}, mask {}x{}",
                        image.height(),
                        image.width(),
                        mask.height(),
                        mask.width()
                    ),
                ));
            }
            masks.push(mask);
        }
        names.push(stem);
        images.push(image);
    }
    Ok(Dataset {
        names,
        images,
        masks,
    })
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir)?;
    for (name, image) in dataset.names.iter().zip(&dataset.images) {
        to_rgb8(image).save(image_dir.join(format!("{name}.png")))?;
    }
    if let Some(masks) = &dataset.masks {
        let mask_dir = dir.join("masks");
        std::fs::create_dir_all(&mask_dir)?;
        for (name, mask) in dataset.names.iter().zip(masks) {
            let gray = GrayImage::from_raw(
                mask.width() as u32,
                mask.height() as u32,
                mask.to_labelmap(),
            )
            .expect("labelmap length matches dimensions");
            gray.save(mask_dir.join(format!("{name}.png")))?;
        }
    }
    Ok(())
}
