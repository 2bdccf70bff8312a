//! Grayscale image ingestion and export.
//!
//! 8-bit binary PGM (P5) is the canonical format; PNG is accepted on input.
//! Colour input is reduced to luma with the Rec. 601 weights.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::{Image, Shape, Tensor};

/// Rec. 601 luma weights for (R, G, B).
pub const REC601: [f64; 3] = [0.299, 0.587, 0.114];

fn to_image(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(|v| v as f64)
            .collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| {
                let l: f64 = p.0.iter().zip(REC601).map(|(&c, k)| c as f64 * k).sum();
                l.clamp(0.0, 1.0)
            })
            .collect(),
    };
    Image::new(Tensor::from_vec(Shape::new(1, h, w), data)?)
}

/// Read a PGM or PNG file into a `[0, 1]` grayscale image.
pub fn read_image(path: &Path) -> Result<Image> {
    let format = ImageFormat::from_path(path)?;
    if !matches!(format, ImageFormat::Pnm | ImageFormat::Png) {
        return Err(Error::Format(format!(
            "{}: only PGM and PNG input is supported",
            path.display()
        )));
    }
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    to_image(reader.decode()?)
}

/// Decode PGM or PNG bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    to_image(image::load_from_memory(bytes)?)
}

/// Quantise to 8 bits after clamping to `[0, 1]`.
pub fn to_gray8(t: &Tensor<f64>) -> Result<GrayImage> {
    if t.channels() != 1 {
        return Err(Error::Dimension(format!("cannot export a {} tensor as an image", t.shape())));
    }
    let img = Image::from_clamped(t)?;
    let raw = img.tensor().data().iter().map(|v| (v * 255.0).round() as u8).collect();
    GrayImage::from_raw(t.width() as u32, t.height() as u32, raw)
        .ok_or_else(|| Error::Dimension("image buffer size mismatch".into()))
}

/// Binary PGM (P5) bytes of `t`, clamped and quantised.
pub fn encode_pgm(t: &Tensor<f64>) -> Result<Vec<u8>> {
    let g = to_gray8(t)?;
    let mut out = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    out.extend_from_slice(g.as_raw());
    Ok(out)
}

/// Write `t` as PGM, or as PNG when the path ends in `.png`.
pub fn write_image(path: &Path, t: &Tensor<f64>) -> Result<()> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        to_gray8(t)?.save_with_format(path, ImageFormat::Png)?;
    } else {
        crate::formats::write_atomic(path, &encode_pgm(t)?)?;
    }
    Ok(())
}
