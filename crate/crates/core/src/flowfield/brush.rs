use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use super::OrientationField;
use crate::error::{Error, Result};
use crate::imagecore::RasterImage;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Falloff {
    /// Full weight across the disk.
    Flat,
    /// `(1 - (d/r)^2)^2`.
    #[default]
    Smooth,
}

impl Falloff {
    fn weight(self, d: f32, radius: f32) -> f32 {
        match self {
            Falloff::Flat => 1.0,
            Falloff::Smooth => {
                let t = 1.0 - (d / radius).powi(2);
                t * t
            }
        }
    }
}

/// A disk-shaped edit applied to an orientation or color field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldBrush {
    pub center: [f32; 2],
    pub radius: f32,
    pub intensity: f32,
    #[serde(default)]
    pub falloff: Falloff,
}

impl FieldBrush {
    pub fn new(center: [f32; 2], radius: f32, intensity: f32, falloff: Falloff) -> Result<Self> {
        let b = Self {
            center,
            radius,
            intensity,
            falloff,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidArgument(format!("brush radius must be > 0, got {}", self.radius)));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::InvalidArgument(format!(
                "brush intensity must lie in [0, 1], got {}",
                self.intensity
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFinite("brush center"));
        }
        Ok(())
    }

    /// Whether pixel `(x, y)` is inside the disk.
    pub fn covers(&self, x: f32, y: f32) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Visits every pixel in the disk with its blend weight.
    fn for_each_pixel(&self, width: usize, height: usize, mut f: impl FnMut(usize, usize, f32)) {
        let [cx, cy] = self.center;
        let r = self.radius;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil()).min(width as f32 - 1.0);
        let y1 = ((cy + r).ceil()).min(height as f32 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            return;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                if d <= r {
                    f(x, y, self.intensity * self.falloff.weight(d, r));
                }
            }
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
fn wrap_pi(a: f32) -> f32 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Blends the field toward orientation `angle` (radians, `dir = (cos, sin)`)
/// inside the disk. Interpolation happens on the doubled angle so `v` and
/// `-v` are the same target; exactly opposite doubled angles resolve
/// counter-clockwise. Coherence becomes `max(coherence, weight)`.
pub fn brush_field(field: &OrientationField, brush: &FieldBrush, angle: f32) -> Result<OrientationField> {
    brush.validate()?;
    if !angle.is_finite() {
        return Err(Error::NonFinite("brush angle"));
    }
    let mut out = field.clone();
    let target = [angle.cos(), angle.sin()];
    let doubled_target = 2.0 * angle;
    brush.for_each_pixel(field.width(), field.height(), |x, y, w| {
        if w <= 0.0 {
            return;
        }
        let coh = field.coherence_at(x, y).max(w);
        if w >= 1.0 {
            out.set(x, y, target, coh);
            return;
        }
        let d = field.direction_at(x, y);
        let doubled = 2.0 * d[1].atan2(d[0]);
        let blended = doubled + w * wrap_pi(doubled_target - doubled);
        let half = 0.5 * blended;
        out.set(x, y, [half.cos(), half.sin()], coh);
    });
    Ok(out)
}

/// Blends RGB toward `color` inside the disk with weight
/// `intensity * falloff`.
pub fn brush_color(img: &RasterImage, brush: &FieldBrush, color: [f32; 3]) -> Result<RasterImage> {
    brush.validate()?;
    if img.channels() < 3 {
        return Err(Error::InvalidArgument("color brush needs an RGB(A) image".into()));
    }
    let mut out = img.clone();
    brush.for_each_pixel(img.width(), img.height(), |x, y, w| {
        for (c, target) in color.iter().enumerate() {
            let v = img.get(x, y, c);
            out.set(x, y, c, v + w * (target - v));
        }
    });
    Ok(out)
}
