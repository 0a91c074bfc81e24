use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use mimo_tensor::Tensor;

use crate::{CoreError, Result};

/// Maps an 8-bit RGB image to a `1 x 3 x H x W` tensor in `[0, 1]`.
pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 3, h as usize, w as usize], |_, c, y, x| {
        f32::from(img.get_pixel(x as u32, y as u32)[c]) / 255.0
    })
}

/// Quantizes a `1 x 3 x H x W` tensor: scale by 255, round half away from
/// zero, clamp to `[0, 255]`.
pub fn to_rgb8(t: &Tensor) -> Result<RgbImage> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(CoreError::Usage(format!("only single RGB images can be encoded, got {s}")));
    }
    let q = |v: f32| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    Ok(ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([q(t.at(0, 0, y, x)), q(t.at(0, 1, y, x)), q(t.at(0, 2, y, x))])
    }))
}

/// Reads any supported image file as RGB.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => CoreError::io(path, e),
        source => CoreError::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    Ok(from_rgb8(&img.to_rgb8()))
}

/// Writes an 8-bit RGB PNG.
pub fn encode_image(t: &Tensor, path: &Path) -> Result<()> {
    to_rgb8(t)?.save(path).map_err(|source| match source {
        image::ImageError::IoError(e) => CoreError::io(path, e),
        source => CoreError::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}
