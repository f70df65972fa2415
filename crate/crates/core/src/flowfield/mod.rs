//! Orientation fields: structure-tensor extraction, line integral
//! convolution, brush editing, and a flat binary container.
//!
//! Orientations are equivalence classes `v ~ -v`. Every stored direction is
//! the canonical representative with nonnegative `y`; anything that blends or
//! integrates directions aligns signs first.

mod brush;
mod lic;
mod tensor;

pub use brush::{brush_color, brush_field, Falloff, FieldBrush};
pub use lic::{lic_filter, LicParams};
pub use tensor::{eigen_sym2, minimum_change_field, structure_tensor, Eigen2};

pub(crate) use lic::midpoint_step;
pub(crate) use tensor::canonical;

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{bilinear_taps, RasterImage};

/// Default extraction constants, also the config defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldParams {
    pub sigma_grad: f64,
    pub sigma_smooth: f64,
    pub coherence_threshold: f32,
    pub lic_step: f32,
    /// Half-length of the LIC kernel used to build stroke color fields.
    pub color_lic_half_length: usize,
}

impl Default for FieldParams {
    fn default() -> Self {
        Self {
            sigma_grad: 1.0,
            sigma_smooth: 2.0,
            coherence_threshold: 0.05,
            lic_step: 0.5,
            color_lic_half_length: 4,
        }
    }
}

/// Smoothed structure-tensor components, one plane each.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFieldStack {
    pub width: usize,
    pub height: usize,
    pub jxx: Vec<f32>,
    pub jxy: Vec<f32>,
    pub jyy: Vec<f32>,
}

/// Per-pixel direction of minimum intensity change plus coherence.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationField {
    width: usize,
    height: usize,
    direction: Vec<[f32; 2]>,
    coherence: Vec<f32>,
    threshold: f32,
}

impl OrientationField {
    /// Builds a field from a closure returning `(direction, coherence)`.
    /// Directions are normalized and canonicalized.
    pub fn from_fn(
        width: usize,
        height: usize,
        threshold: f32,
        mut f: impl FnMut(usize, usize) -> ([f32; 2], f32),
    ) -> Self {
        let mut direction = Vec::with_capacity(width * height);
        let mut coherence = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (d, c) = f(x, y);
                let n = (d[0] * d[0] + d[1] * d[1]).sqrt();
                let d = if n > 0.0 { [d[0] / n, d[1] / n] } else { [1.0, 0.0] };
                direction.push(canonical(d));
                coherence.push(c.clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            direction,
            coherence,
            threshold,
        }
    }

    /// Extracts the minimum-change field of `img` with `params`.
    pub fn from_image(img: &RasterImage, params: &FieldParams) -> Result<Self> {
        let st = structure_tensor(img, params.sigma_grad, params.sigma_smooth)?;
        minimum_change_field(&st, params.coherence_threshold)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn directions(&self) -> &[[f32; 2]] {
        &self.direction
    }

    pub fn coherences(&self) -> &[f32] {
        &self.coherence
    }

    #[inline]
    pub fn direction_at(&self, x: usize, y: usize) -> [f32; 2] {
        self.direction[y * self.width + x]
    }

    #[inline]
    pub fn coherence_at(&self, x: usize, y: usize) -> f32 {
        self.coherence[y * self.width + x]
    }

    #[inline]
    pub fn is_reliable(&self, x: usize, y: usize) -> bool {
        self.coherence_at(x, y) >= self.threshold && self.coherence_at(x, y) > 0.0
    }

    /// Coherence at the nearest pixel (edge-clamped).
    pub fn coherence_near(&self, x: f32, y: f32) -> f32 {
        let xi = x.round().clamp(0.0, (self.width - 1) as f32) as usize;
        let yi = y.round().clamp(0.0, (self.height - 1) as f32) as usize;
        self.coherence_at(xi, yi)
    }

    /// Bilinearly interpolated direction at a continuous position, with each
    /// corner's sign aligned to `reference` before blending. Returns the
    /// reference itself where the blend cancels.
    pub fn direction_aligned(&self, x: f32, y: f32, reference: [f32; 2]) -> [f32; 2] {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let mut acc = [0.0f32; 2];
        for (xi, yi, wgt) in [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ] {
            if wgt == 0.0 {
                continue;
            }
            let d = self.direction_at(xi, yi);
            let s = if d[0] * reference[0] + d[1] * reference[1] < 0.0 { -1.0 } else { 1.0 };
            acc[0] += wgt * s * d[0];
            acc[1] += wgt * s * d[1];
        }
        let n = (acc[0] * acc[0] + acc[1] * acc[1]).sqrt();
        if n < 1e-6 {
            reference
        } else {
            [acc[0] / n, acc[1] / n]
        }
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, dir: [f32; 2], coherence: f32) {
        let i = y * self.width + x;
        self.direction[i] = canonical(dir);
        self.coherence[i] = coherence.clamp(0.0, 1.0);
    }

    /// Writes the binary container: magic, version, width, height, coherence
    /// threshold, then little-endian f32 planes `dir_x`, `dir_y`, `coherence`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_u32::<LittleEndian>(FIELD_VERSION)?;
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_f32::<LittleEndian>(self.threshold)?;
        for d in &self.direction {
            w.write_f32::<LittleEndian>(d[0])?;
        }
        for d in &self.direction {
            w.write_f32::<LittleEndian>(d[1])?;
        }
        for c in &self.coherence {
            w.write_f32::<LittleEndian>(*c)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.direction.len() * 12);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: "<orientation field>".into(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != FIELD_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        if version != FIELD_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let width = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let height = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
        let threshold = r.read_f32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
        let n = width * height;
        let mut plane = || -> Result<Vec<f32>> {
            let mut v = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut v).map_err(|_| bad("truncated planes"))?;
            Ok(v)
        };
        let xs = plane()?;
        let ys = plane()?;
        let coherence = plane()?;
        if xs.iter().chain(&ys).chain(&coherence).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("orientation field planes"));
        }
        Ok(Self {
            width,
            height,
            direction: xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect(),
            coherence,
            threshold,
        })
    }

    /// Hue encodes orientation (a full hue turn per half-turn of direction),
    /// value encodes coherence.
    pub fn to_false_color(&self) -> RasterImage {
        RasterImage::from_fn(self.width, self.height, 3, |x, y, px| {
            let d = self.direction_at(x, y);
            let theta = d[1].atan2(d[0]).rem_euclid(std::f32::consts::PI);
            let hue = theta / std::f32::consts::PI * 6.0;
            let v = self.coherence_at(x, y);
            let f = hue - hue.floor();
            let (p, q, t) = (0.0, v * (1.0 - f), v * f);
            let rgb = match hue.floor() as i32 % 6 {
                0 => [v, t, p],
                1 => [q, v, p],
                2 => [p, v, t],
                3 => [p, q, v],
                4 => [t, p, v],
                _ => [v, p, q],
            };
            px.copy_from_slice(&rgb);
        })
    }
}

const FIELD_MAGIC: &[u8; 4] = b"HSOF";
const FIELD_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_container_round_trips() {
        let f = OrientationField::from_fn(5, 3, 0.1, |x, y| ([x as f32 - 2.0, y as f32 + 0.5], 0.25 * y as f32));
        let back = OrientationField::read_from(f.to_bytes().as_slice()).unwrap();
        assert_eq!(f, back);
        let bytes = f.to_bytes();
        assert_eq!(&bytes[..4], b"HSOF");
        assert_eq!(bytes.len(), 20 + 15 * 12);
    }

    #[test]
    fn rejects_corrupt_container() {
        let f = OrientationField::from_fn(4, 4, 0.1, |_, _| ([1.0, 0.0], 1.0));
        let mut bytes = f.to_bytes();
        assert!(OrientationField::read_from(&bytes[..30]).is_err());
        bytes[0] = b'X';
        assert!(OrientationField::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn directions_are_canonical() {
        let f = OrientationField::from_fn(3, 3, 0.0, |x, _| ([0.3, -1.0 + x as f32 * 0.1], 1.0));
        assert!(f.directions().iter().all(|d| d[1] >= 0.0));
        assert!(f.directions().iter().all(|d| ((d[0] * d[0] + d[1] * d[1]) - 1.0).abs() < 1e-6));
    }

    #[test]
    fn aligned_interpolation_respects_sign() {
        // neighbours hold nearly opposite representatives of similar orientations
        let f = OrientationField::from_fn(2, 1, 0.0, |x, _| if x == 0 { ([1.0, 0.01], 1.0) } else { ([-1.0, 0.01], 1.0) });
        let d = f.direction_aligned(0.5, 0.0, [1.0, 0.0]);
        assert!(d[0] > 0.99, "{d:?}");
    }
}
