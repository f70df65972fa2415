use super::OrientationField;
use crate::error::{Error, Result};
use crate::imagecore::{check_extent, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LicParams {
    /// Samples taken on each side of the seed pixel.
    pub half_length: usize,
    /// Arc length between samples, in pixels.
    pub step: f32,
}

/// One midpoint step along the field from `p`, keeping the sign of `heading`.
/// Returns the new position and the heading at the end of the step.
#[inline]
pub(crate) fn midpoint_step(field: &OrientationField, p: [f32; 2], heading: [f32; 2], h: f32) -> ([f32; 2], [f32; 2]) {
    let d1 = field.direction_aligned(p[0], p[1], heading);
    let mid = [p[0] + 0.5 * h * d1[0], p[1] + 0.5 * h * d1[1]];
    let d2 = field.direction_aligned(mid[0], mid[1], d1);
    ([p[0] + h * d2[0], p[1] + h * d2[1]], d2)
}

/// Box-kernel line integral convolution: each output pixel is the mean of
/// `2L + 1` bilinear samples of `src` taken along the streamline through it.
pub fn lic_filter(src: &RasterImage, field: &OrientationField, params: LicParams) -> Result<RasterImage> {
    check_extent(src.extent(), field.extent(), "lic_filter")?;
    if !(params.step > 0.0) || !params.step.is_finite() {
        return Err(Error::InvalidArgument(format!("LIC step must be > 0, got {}", params.step)));
    }
    if params.half_length == 0 {
        return Ok(src.clone());
    }
    let channels = src.channels();
    let norm = 1.0 / (2 * params.half_length + 1) as f64;
    let mut acc = vec![0.0f64; channels];
    Ok(RasterImage::from_fn(src.width(), src.height(), channels, |x, y, out| {
        for (c, a) in acc.iter_mut().enumerate() {
            *a = src.get(x, y, c) as f64;
        }
        let seed = field.direction_at(x, y);
        for sign in [1.0f32, -1.0] {
            let mut p = [x as f32, y as f32];
            let mut heading = [sign * seed[0], sign * seed[1]];
            for _ in 0..params.half_length {
                let (next, h) = midpoint_step(field, p, heading, params.step);
                p = next;
                heading = h;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += src.sample_bilinear(p[0], p[1], c) as f64;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = (a * norm) as f32;
        }
    }))
}
