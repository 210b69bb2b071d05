use std::path::Path;

use image::{ImageBuffer, Luma, RgbImage};

use super::IoError;
use crate::projection::DepthImage;

/// Depth is stored as 16-bit grayscale in millimetres; 0 means no return.
pub fn depth_to_png(img: &DepthImage) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let data = img
        .depth
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    ImageBuffer::from_raw(img.width, img.height, data).expect("buffer size matches image")
}

pub fn depth_from_png(png: &ImageBuffer<Luma<u16>, Vec<u16>>) -> DepthImage {
    DepthImage {
        width: png.width(),
        height: png.height(),
        depth: png.as_raw().iter().map(|&mm| mm as f64 / 1000.0).collect(),
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage, IoError> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => IoError::Io {
            path: path.display().to_string(),
            source,
        },
        e => image_err(path, e),
    })?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => Ok(depth_from_png(&buf)),
        other => Err(image_err(
            path,
            format!("expected 16-bit grayscale depth, got {:?}", other.color()),
        )),
    }
}

fn ensure_parent(path: &Path) -> Result<(), IoError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|source| IoError::Io {
                path: dir.display().to_string(),
                source,
            })
        }
        _ => Ok(()),
    }
}

pub fn write_depth_png(path: &Path, img: &DepthImage) -> Result<(), IoError> {
    ensure_parent(path)?;
    depth_to_png(img).save(path).map_err(|e| image_err(path, e))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_err(path, e))
}
