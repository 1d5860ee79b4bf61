//! Image persistence.
//!
//! Masks are stored as 8-bit single-channel PNGs with 0/255 encoding; scalar
//! maps as 16-bit single-channel PNGs scaled from `[0, 1]`; rasters load from
//! PNG/JPEG and save as 8-bit RGB PNG.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster, ScalarMap};

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save(path: &Path, img: &DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a color image, normalizing channels to `[0, 1]`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let img = open(path.as_ref())?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            [
                p.0[0] as f64 / 255.0,
                p.0[1] as f64 / 255.0,
                p.0[2] as f64 / 255.0,
            ]
        })
        .collect();
    Raster::new(w, h, data)
}

pub fn save_raster(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    let mut img = RgbImage::new(raster.width() as u32, raster.height() as u32);
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            let px = raster.pixel(x, y);
            img.put_pixel(
                x as u32,
                y as u32,
                Rgb([
                    (px[0] * 255.0).round() as u8,
                    (px[1] * 255.0).round() as u8,
                    (px[2] * 255.0).round() as u8,
                ]),
            );
        }
    }
    save(path.as_ref(), &DynamicImage::ImageRgb8(img))
}

/// Loads an 8-bit mask; any nonzero sample counts as foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = open(path.as_ref())?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] > 127).collect();
    BinaryMask::new(w, h, data)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let mut img = GrayImage::new(mask.width() as u32, mask.height() as u32);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            img.put_pixel(
                x as u32,
                y as u32,
                Luma([if mask.get(x, y) { 255 } else { 0 }]),
            );
        }
    }
    save(path.as_ref(), &DynamicImage::ImageLuma8(img))
}

/// Loads a 16-bit scalar map, rescaling samples to `[0, 1]`.
pub fn load_scalar_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let img = open(path.as_ref())?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] as f64 / u16::MAX as f64).collect();
    ScalarMap::new(w, h, data)
}

/// Saves a `[0, 1]` scalar map as 16-bit grayscale; values are clamped.
pub fn save_scalar_map(path: impl AsRef<Path>, map: &ScalarMap) -> Result<()> {
    let mut img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::new(map.width() as u32, map.height() as u32);
    for y in 0..map.height() {
        for x in 0..map.width() {
            let v = map.get(x, y).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, Luma([(v * u16::MAX as f64).round() as u16]));
        }
    }
    save(path.as_ref(), &DynamicImage::ImageLuma16(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = BinaryMask::from_fn(9, 5, |x, y| (x + y) % 3 == 0);
        save_mask(&path, &mask).unwrap();
        assert_eq!(load_mask(&path).unwrap(), mask);
    }

    #[test]
    fn scalar_map_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        let map = ScalarMap::from_fn(7, 7, |x, y| (x as f64 * 7.0 + y as f64) / 49.0);
        save_scalar_map(&path, &map).unwrap();
        let back = load_scalar_map(&path).unwrap();
        for (a, b) in map.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1.0 / u16::MAX as f64);
        }
    }

    #[test]
    fn raster_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        let raster = Raster::from_fn(6, 4, |x, y| {
            [x as f64 / 5.0, y as f64 / 3.0, 0.25]
        })
        .unwrap();
        save_raster(&path, &raster).unwrap();
        let back = load_raster(&path).unwrap();
        for y in 0..4 {
            for x in 0..6 {
                for c in 0..3 {
                    assert!((raster.pixel(x, y)[c] - back.pixel(x, y)[c]).abs() < 1.0 / 254.0);
                }
            }
        }
    }
}
