//! Guide strokes: seeding, streamline tracing, colorization, rasterization
//! into the RGBA conditioning image, and automatic extraction from images.

mod raster;
mod trace;

pub use raster::rasterize_strokes;
pub use trace::{colorize_stroke, sample_seeds, seed_min_distance, trace_stroke, TraceLimits};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{lic_filter, FieldParams, LicParams, OrientationField};
use crate::imagecore::{check_extent, MaskImage, RasterImage};

pub const STROKE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideStroke {
    pub points: Vec<[f32; 2]>,
    /// Straight (not premultiplied) RGBA.
    pub color: [f32; 4],
    pub width: f32,
}

impl GuideStroke {
    pub fn new(points: Vec<[f32; 2]>, color: [f32; 4], width: f32) -> Result<Self> {
        let s = Self { points, color, width };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidArgument("a stroke needs at least two points".into()));
        }
        if !(self.color[3] > 0.0 && self.color[3] <= 1.0) {
            return Err(Error::InvalidArgument(format!("stroke alpha must lie in (0, 1], got {}", self.color[3])));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::InvalidArgument(format!("stroke width must be > 0, got {}", self.width)));
        }
        if self.points.iter().flatten().chain(&self.color).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("stroke"));
        }
        Ok(())
    }

    pub fn length(&self) -> f32 {
        self.points
            .windows(2)
            .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
            .sum()
    }

    /// Segment orientations in degrees, `[0, 180)`.
    pub fn segment_angles(&self) -> impl Iterator<Item = f32> + '_ {
        self.points
            .windows(2)
            .map(|w| (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]).to_degrees().rem_euclid(180.0))
    }

    pub fn passes_within(&self, center: [f32; 2], radius: f32) -> bool {
        self.points
            .iter()
            .any(|p| (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2) <= radius * radius)
    }
}

/// Strokes over an image extent, drawn in order (later over earlier).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeSet {
    pub version: u32,
    pub width: usize,
    pub height: usize,
    pub strokes: Vec<GuideStroke>,
}

impl StrokeSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            version: STROKE_FORMAT_VERSION,
            width,
            height,
            strokes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn push(&mut self, stroke: GuideStroke) -> Result<()> {
        stroke.validate()?;
        if !self.contains_all(&stroke) {
            return Err(Error::InvalidArgument("stroke leaves the image extent".into()));
        }
        self.strokes.push(stroke);
        Ok(())
    }

    fn contains_all(&self, s: &GuideStroke) -> bool {
        s.points.iter().all(|p| {
            p[0] >= -0.5 && p[1] >= -0.5 && p[0] <= self.width as f32 - 0.5 && p[1] <= self.height as f32 - 0.5
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != STROKE_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported stroke set version {}", self.version)));
        }
        for s in &self.strokes {
            s.validate()?;
            if !self.contains_all(s) {
                return Err(Error::InvalidArgument("stroke leaves the image extent".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stroke sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: StrokeSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Annotation statistics. None of these are published; they were tuned so a
/// rasterized set covers roughly 10-30% of a typical mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeParams {
    /// Seeds per 1000 masked pixels.
    pub density: f32,
    pub width: f32,
    pub alpha: f32,
    pub min_length: f32,
    pub max_length: f32,
    pub step: f32,
}

impl Default for StrokeParams {
    fn default() -> Self {
        Self {
            density: 4.0,
            width: 2.0,
            alpha: 0.9,
            min_length: 15.0,
            max_length: 60.0,
            step: 0.5,
        }
    }
}

/// Everything stroke extraction derives from an image.
#[derive(Clone, Debug)]
pub struct Annotation {
    pub field: OrientationField,
    pub color_field: RasterImage,
    pub strokes: StrokeSet,
}

/// The color field strokes sample from: the image smoothed along its own
/// orientation field.
pub fn color_field(img: &RasterImage, field: &OrientationField, fp: &FieldParams) -> Result<RasterImage> {
    lic_filter(
        &img.to_rgb(),
        field,
        LicParams {
            half_length: fp.color_lic_half_length,
            step: fp.lic_step,
        },
    )
}

/// Automatic annotation: orientation field, LIC color field, seeds inside the
/// mask, bidirectional tracing, colorization. Seeds whose trace degenerates
/// are skipped.
pub fn extract_guide_strokes(
    img: &RasterImage,
    mask: &MaskImage,
    params: &StrokeParams,
    field_params: &FieldParams,
    rng_seed: u64,
) -> Result<StrokeSet> {
    Ok(annotate(img, mask, params, field_params, rng_seed)?.strokes)
}

pub fn annotate(
    img: &RasterImage,
    mask: &MaskImage,
    params: &StrokeParams,
    field_params: &FieldParams,
    rng_seed: u64,
) -> Result<Annotation> {
    check_extent(img.extent(), mask.extent(), "extract_guide_strokes")?;
    if mask.is_empty() {
        return Err(Error::EmptyMask("extract_guide_strokes"));
    }
    let field = OrientationField::from_image(img, field_params)?;
    let color_field = color_field(img, &field, field_params)?;
    let strokes = strokes_from_fields(&field, &color_field, mask, params, rng_seed, None)?;
    Ok(Annotation {
        field,
        color_field,
        strokes,
    })
}

/// Seeds, traces and colors strokes over `mask`, optionally restricted to a
/// disk `(center, radius)`.
pub fn strokes_from_fields(
    field: &OrientationField,
    color_field: &RasterImage,
    mask: &MaskImage,
    params: &StrokeParams,
    rng_seed: u64,
    region: Option<([f32; 2], f32)>,
) -> Result<StrokeSet> {
    check_extent(field.extent(), mask.extent(), "strokes_from_fields")?;
    check_extent(color_field.extent(), mask.extent(), "strokes_from_fields")?;
    let seed_mask = match region {
        Some((c, r)) => mask.and(&MaskImage::from_fn(mask.width(), mask.height(), |x, y| {
            (x as f32 - c[0]).powi(2) + (y as f32 - c[1]).powi(2) <= r * r
        })),
        None => mask.clone(),
    };
    let seeds = sample_seeds(&seed_mask, params.density, rng_seed)?;
    let mut len_rng = ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5eed_1e57_u64);
    let mut set = StrokeSet::new(mask.width(), mask.height());
    for seed in seeds {
        let max_len = if params.max_length > params.min_length {
            len_rng.random_range(params.min_length..params.max_length)
        } else {
            params.min_length
        };
        let limits = TraceLimits {
            max_length: max_len,
            step: params.step,
        };
        let stroke = match trace_stroke(field, seed, mask, limits) {
            Ok(s) => s,
            Err(Error::DegenerateStroke { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut stroke = colorize_stroke(&stroke, color_field, params.alpha)?;
        stroke.width = params.width;
        set.strokes.push(stroke);
    }
    Ok(set)
}

/// Replaces every stroke passing within `radius + max_length` of `center`
/// with strokes re-traced from the current fields.
pub fn repopulate(
    set: &StrokeSet,
    field: &OrientationField,
    color_field: &RasterImage,
    mask: &MaskImage,
    center: [f32; 2],
    radius: f32,
    params: &StrokeParams,
    rng_seed: u64,
) -> Result<StrokeSet> {
    let reach = radius + params.max_length;
    let mut out = StrokeSet::new(set.width, set.height);
    out.strokes = set
        .strokes
        .iter()
        .filter(|s| !s.passes_within(center, reach))
        .cloned()
        .collect();
    if mask.is_empty() {
        return Ok(out);
    }
    let fresh = strokes_from_fields(field, color_field, mask, params, rng_seed, Some((center, reach)))?;
    out.strokes.extend(fresh.strokes);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{brush_field, Falloff, FieldBrush};

    /// Horizontal fibers: rows modulated with a slow horizontal drift.
    pub(crate) fn fiber_image(size: usize) -> RasterImage {
        RasterImage::from_fn(size, size, 3, |x, y, p| {
            let v = 0.5 + 0.4 * (y as f32 * 1.3 + (x as f32 * 0.05).sin()).sin();
            p.copy_from_slice(&[v, 0.7 * v, 0.4 * v]);
        })
    }

    fn angle_diff(a: f32, b: f32) -> f32 {
        let d = (a - b).rem_euclid(180.0);
        d.min(180.0 - d)
    }

    #[test]
    fn horizontal_fibers_give_horizontal_strokes() {
        let img = fiber_image(64);
        let mask = MaskImage::from_fn(64, 64, |x, y| (8..56).contains(&x) && (8..56).contains(&y));
        let set = extract_guide_strokes(&img, &mask, &StrokeParams::default(), &FieldParams::default(), 42).unwrap();
        assert!(set.len() >= 5);
        let angles: Vec<f32> = set.strokes.iter().flat_map(|s| s.segment_angles().collect::<Vec<_>>()).collect();
        let ok = angles.iter().filter(|a| angle_diff(**a, 0.0) <= 10.0).count();
        assert!(ok as f32 >= 0.9 * angles.len() as f32, "{ok}/{}", angles.len());
        for s in &set.strokes {
            assert!(s.points.iter().all(|p| mask.contains_point(p[0], p[1])));
        }
    }

    #[test]
    fn constant_region_yields_no_strokes() {
        let img = RasterImage::filled(48, 48, 3, &[0.4, 0.3, 0.2]);
        let mask = MaskImage::from_fn(48, 48, |x, y| (10..40).contains(&x) && (10..40).contains(&y));
        let set = extract_guide_strokes(&img, &mask, &StrokeParams::default(), &FieldParams::default(), 1).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn extraction_is_deterministic() {
        let img = fiber_image(48);
        let mask = MaskImage::from_fn(48, 48, |x, y| (x + y) > 20 && x < 44);
        let p = StrokeParams::default();
        let a = extract_guide_strokes(&img, &mask, &p, &FieldParams::default(), 9).unwrap();
        let b = extract_guide_strokes(&img, &mask, &p, &FieldParams::default(), 9).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn extraction_requires_a_mask() {
        let img = fiber_image(16);
        let r = extract_guide_strokes(&img, &MaskImage::new(16, 16), &StrokeParams::default(), &FieldParams::default(), 0);
        assert!(matches!(r, Err(Error::EmptyMask(_))));
    }

    #[test]
    fn rasterized_extraction_stays_in_mask_and_matches_colors() {
        let img = fiber_image(64);
        let mask = MaskImage::from_fn(64, 64, |x, y| ((x as f32 - 32.0).powi(2) + (y as f32 - 36.0).powi(2)) < 500.0);
        let set = extract_guide_strokes(&img, &mask, &StrokeParams::default(), &FieldParams::default(), 5).unwrap();
        let raster = rasterize_strokes(&set, &mask).unwrap();
        let mut covered = 0usize;
        for y in 0..64 {
            for x in 0..64 {
                if raster.get(x, y, 3) > 0.0 {
                    assert!(mask.get(x, y));
                    covered += 1;
                }
            }
        }
        let frac = covered as f32 / mask.count() as f32;
        assert!(frac > 0.05, "coverage {frac}");
        // mean stroke color vs mean image color over the stroke footprint
        let footprint = MaskImage::from_fn(64, 64, |x, y| raster.get(x, y, 3) > 0.5);
        let img_mean = img.mean_over(&footprint).unwrap();
        let stroke_mean = raster.to_rgb().mean_over(&footprint).unwrap();
        for c in 0..3 {
            assert!((img_mean[c] - stroke_mean[c]).abs() < 0.1, "{img_mean:?} vs {stroke_mean:?}");
        }
    }

    #[test]
    fn repopulation_follows_brushed_orientation() {
        let img = fiber_image(64);
        let mask = MaskImage::from_fn(64, 64, |x, y| (4..60).contains(&x) && (4..60).contains(&y));
        let p = StrokeParams::default();
        let fp = FieldParams::default();
        let ann = annotate(&img, &mask, &p, &fp, 3).unwrap();
        let center = [32.0, 32.0];
        let brush = FieldBrush::new(center, 14.0, 1.0, Falloff::Flat).unwrap();
        let target = 60f32;
        let field = brush_field(&ann.field, &brush, target.to_radians()).unwrap();
        let set = repopulate(&ann.strokes, &field, &ann.color_field, &mask, center, 14.0, &p, 4).unwrap();
        let mut total = 0;
        let mut ok = 0;
        for s in set.strokes.iter().filter(|s| s.passes_within(center, 14.0)) {
            for w in s.points.windows(2) {
                let mid = [(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0];
                if brush.covers(mid[0], mid[1]) {
                    total += 1;
                    let a = (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]).to_degrees().rem_euclid(180.0);
                    if angle_diff(a, target) <= 15.0 {
                        ok += 1;
                    }
                }
            }
        }
        assert!(total > 10);
        assert!(ok as f32 >= 0.8 * total as f32, "{ok}/{total}");
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mut set = StrokeSet::new(10, 10);
        set.push(GuideStroke::new(vec![[1.0, 1.0], [3.0, 2.0]], [1.0, 0.0, 0.0, 0.5], 2.0).unwrap()).unwrap();
        assert_eq!(StrokeSet::from_json(&set.to_json()).unwrap(), set);
        assert!(set.push(GuideStroke::new(vec![[1.0, 1.0], [30.0, 2.0]], [1.0; 4], 1.0).unwrap()).is_err());
        assert!(GuideStroke::new(vec![[1.0, 1.0]], [1.0; 4], 1.0).is_err());
        assert!(GuideStroke::new(vec![[1.0, 1.0], [2.0, 2.0]], [1.0, 1.0, 1.0, 0.0], 1.0).is_err());
    }
}
