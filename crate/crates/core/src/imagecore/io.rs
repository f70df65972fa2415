use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma};

use super::{MaskImage, RasterImage};
use crate::error::{Error, Result};

/// 8-bit view used when bytes must match exactly (checksums, PNG payloads).
pub struct RasterImage8 {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub bytes: Vec<u8>,
}

impl From<&RasterImage> for RasterImage8 {
    fn from(img: &RasterImage) -> Self {
        RasterImage8 {
            width: img.width() as u32,
            height: img.height() as u32,
            channels: img.channels() as u8,
            bytes: img.data().iter().map(|v| quantize(*v)).collect(),
        }
    }
}

#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads any PNG as RGB, RGBA or gray depending on its color type; 8-bit
/// values are divided by 255.
pub fn load_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let (channels, raw) = match dynimg.color() {
        image::ColorType::L8 | image::ColorType::L16 => (1, dynimg.to_luma8().into_raw()),
        image::ColorType::Rgba8 | image::ColorType::Rgba16 | image::ColorType::La8 => {
            (4, dynimg.to_rgba8().into_raw())
        }
        _ => (3, dynimg.to_rgb8().into_raw()),
    };
    RasterImage::new(w, h, channels, raw.iter().map(|b| *b as f32 / 255.0).collect())
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let q = RasterImage8::from(img);
    let mut out = Vec::new();
    let enc = image::codecs::png::PngEncoder::new(&mut out);
    let color = match q.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => image::ExtendedColorType::Rgba8,
    };
    image::ImageEncoder::write_image(enc, &q.bytes, q.width, q.height, color)?;
    Ok(out)
}

pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Masks are 8-bit grayscale with 0/255; anything above 127 counts as set.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<MaskImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask_png(&bytes)
}

pub fn decode_mask_png(bytes: &[u8]) -> Result<MaskImage> {
    let gray = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
    let (w, h) = gray.dimensions();
    MaskImage::from_bits(
        w as usize,
        h as usize,
        gray.into_raw().into_iter().map(|b| b > 127).collect(),
    )
}

pub fn encode_mask_png(mask: &MaskImage) -> Result<Vec<u8>> {
    let gray: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    let mut out = Vec::new();
    let enc = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        enc,
        gray.as_raw(),
        gray.width(),
        gray.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}

pub fn save_mask_png(mask: &MaskImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mask_png(mask)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let img = RasterImage::from_fn(7, 5, 3, |x, y, p| {
            p[0] = (x * 30) as f32 / 255.0;
            p[1] = (y * 40) as f32 / 255.0;
            p[2] = 1.0;
        });
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_round_trip() {
        let m = MaskImage::from_fn(9, 4, |x, y| (x + y) % 3 == 0);
        assert_eq!(decode_mask_png(&encode_mask_png(&m).unwrap()).unwrap(), m);
    }
}
