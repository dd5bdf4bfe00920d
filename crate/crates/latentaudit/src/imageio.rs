//! Image files to and from [`ImageTensor`].

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};
use latentaudit_core::image::{resize_area, u8_to_unit};
use latentaudit_core::ImageTensor;

use crate::error::{AuditError, IoContext, Result};

fn image_error(path: &Path, e: image::ImageError) -> AuditError {
    match e {
        image::ImageError::IoError(io) => AuditError::io(path, io),
        other => AuditError::corrupt(path, other),
    }
}

/// Loads any supported image as luminance, area-resized to
/// `target x target` and mapped to [-1, 1].
pub fn load_image(path: &Path, target: usize) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).at(path)?;
    let img = image::load_from_memory(&bytes).map_err(|e| image_error(path, e))?;
    decode(img, target).map_err(|e| match e {
        AuditError::Validation(msg) => AuditError::corrupt(path, msg),
        other => other,
    })
}

fn decode(img: DynamicImage, target: usize) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let unit: Vec<f32> = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) | DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            img.to_luma32f().into_raw().into_iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect()
        }
        _ => img.to_luma8().into_raw().into_iter().map(u8_to_unit).collect(),
    };
    let data = if w == target && h == target { unit } else { resize_area(&unit, w, h, target)? };
    let mut t = ImageTensor::new(target, data)?;
    t.pixels_mut().iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(t)
}

/// Writes an 8-bit grayscale PNG.
pub fn save_png(image: &ImageTensor, path: &Path) -> Result<()> {
    let size = image.size() as u32;
    let gray = GrayImage::from_raw(size, size, image.to_u8()).expect("buffer matches dimensions");
    gray.save_with_format(path, ImageFormat::Png).map_err(|e| image_error(path, e))
}
