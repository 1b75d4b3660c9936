//! 8-bit grayscale PNG codec for images and saliency maps. A stored byte `v`
//! encodes the value `v / 255`.

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn grid_from_gray(img: &GrayImage) -> Grid {
    let (w, h) = img.dimensions();
    Grid::from_fn(w as usize, h as usize, |x, y| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    })
}

pub fn gray_from_grid(grid: &Grid) -> GrayImage {
    GrayImage::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        Luma([quantize(grid.get(x as usize, y as usize))])
    })
}

/// Decodes a PNG held in memory. Multi-channel images are rejected.
pub fn decode_gray_png(bytes: &[u8]) -> Result<Grid> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    single_channel(img).map(|g| grid_from_gray(&g))
}

pub fn encode_gray_png(grid: &Grid) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    gray_from_grid(grid).write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_gray_png(path: &Path) -> Result<Grid> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?;
    single_channel(img).map(|g| grid_from_gray(&g))
}

pub fn save_gray_png(grid: &Grid, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    gray_from_grid(grid).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn single_channel(img: DynamicImage) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageLuma16(_) => Ok(img.to_luma8()),
        other => Err(Error::UnreadableMask(format!(
            "expected a single-channel image, got {:?}",
            other.color()
        ))),
    }
}
