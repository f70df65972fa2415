use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GuideStroke;
use crate::error::{Error, Result};
use crate::flowfield::{midpoint_step, OrientationField};
use crate::imagecore::{check_extent, MaskImage, RasterImage};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceLimits {
    /// Total arc length; each direction from the seed gets half.
    pub max_length: f32,
    pub step: f32,
}

fn seed_target(masked: usize, density: f32) -> usize {
    ((density * masked as f32 / 1000.0).round() as usize).max(1)
}

/// Minimum spacing enforced between seeds: half the mean spacing of
/// `density` seeds spread over `masked` pixels.
pub fn seed_min_distance(masked: usize, density: f32) -> f32 {
    0.5 * (masked as f32 / seed_target(masked, density) as f32).sqrt()
}

/// Dart-throwing Poisson-disk seeds inside `mask`, about `density` per 1000
/// masked pixels. Positions are jittered within their pixel so they always
/// round back into the mask.
pub fn sample_seeds(mask: &MaskImage, density: f32, rng_seed: u64) -> Result<Vec<[f32; 2]>> {
    if !(density >= 0.0) || !density.is_finite() {
        return Err(Error::InvalidArgument(format!("seed density must be >= 0, got {density}")));
    }
    let pixels: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    if pixels.is_empty() || density == 0.0 {
        return Ok(Vec::new());
    }
    let target = seed_target(pixels.len(), density);
    let min_dist = seed_min_distance(pixels.len(), density);
    let min_d2 = min_dist * min_dist;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seeds: Vec<[f32; 2]> = Vec::with_capacity(target);
    let mut attempts = 0;
    while seeds.len() < target && attempts < 30 * target {
        attempts += 1;
        let (x, y) = pixels[rng.random_range(0..pixels.len())];
        let p = [
            x as f32 + rng.random_range(-0.49f32..0.49),
            y as f32 + rng.random_range(-0.49f32..0.49),
        ];
        if seeds.iter().all(|s| (s[0] - p[0]).powi(2) + (s[1] - p[1]).powi(2) >= min_d2) {
            seeds.push(p);
        }
    }
    Ok(seeds)
}

/// Traces a streamline through `seed` in both directions with midpoint steps.
/// Each half stops on leaving the mask, entering low coherence, reaching half
/// the length budget, or coming back within half a step of earlier points.
pub fn trace_stroke(
    field: &OrientationField,
    seed: [f32; 2],
    mask: &MaskImage,
    limits: TraceLimits,
) -> Result<GuideStroke> {
    check_extent(field.extent(), mask.extent(), "trace_stroke")?;
    if !(limits.step > 0.0) || !(limits.max_length >= 0.0) {
        return Err(Error::InvalidArgument("trace step must be > 0 and length >= 0".into()));
    }
    let degenerate = || Error::DegenerateStroke { x: seed[0], y: seed[1] };
    if !mask.contains_point(seed[0], seed[1]) {
        return Err(Error::InvalidArgument(format!("seed ({}, {}) is outside the mask", seed[0], seed[1])));
    }
    let reliable = |p: [f32; 2]| {
        let c = field.coherence_near(p[0], p[1]);
        c > 0.0 && c >= field.threshold()
    };
    if !reliable(seed) {
        return Err(degenerate());
    }
    let xi = seed[0].round() as usize;
    let yi = seed[1].round() as usize;
    let d0 = field.direction_aligned(seed[0], seed[1], field.direction_at(xi, yi));

    let half = 0.5 * limits.max_length;
    let h = limits.step;
    let mut forward: Vec<[f32; 2]> = Vec::new();
    let mut backward: Vec<[f32; 2]> = Vec::new();
    for sign in [1.0f32, -1.0] {
        let mut p = seed;
        let mut heading = [sign * d0[0], sign * d0[1]];
        let mut len = 0.0f32;
        loop {
            if len + h > half + 1e-4 {
                break;
            }
            let (next, hd) = midpoint_step(field, p, heading, h);
            if !mask.contains_point(next[0], next[1]) || !reliable(next) {
                break;
            }
            let near = |q: &[f32; 2]| (q[0] - next[0]).powi(2) + (q[1] - next[1]).powi(2) < 0.25 * h * h;
            let own = if sign > 0.0 { &forward } else { &backward };
            let other = if sign > 0.0 { &backward } else { &forward };
            let recent = own.len().saturating_sub(3);
            if own[..recent].iter().any(near) || other.iter().any(near) || (own.len() > 3 && near(&seed)) {
                break;
            }
            if sign > 0.0 {
                forward.push(next);
            } else {
                backward.push(next);
            }
            p = next;
            heading = hd;
            len += h;
        }
    }
    let mut points: Vec<[f32; 2]> = backward.into_iter().rev().collect();
    points.push(seed);
    points.extend(forward);
    if points.len() < 2 {
        return Err(degenerate());
    }
    Ok(GuideStroke {
        points,
        color: [0.0, 0.0, 0.0, 1.0],
        width: 1.0,
    })
}

/// Arc-length-weighted mean color of `color_field` along the stroke.
pub fn colorize_stroke(stroke: &GuideStroke, color_field: &RasterImage, alpha: f32) -> Result<GuideStroke> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("stroke alpha must lie in (0, 1], got {alpha}")));
    }
    if color_field.channels() < 3 {
        return Err(Error::InvalidArgument("color field must be RGB(A)".into()));
    }
    if stroke.points.len() < 2 {
        return Err(Error::InvalidArgument("a stroke needs at least two points".into()));
    }
    let mut acc = [0.0f64; 3];
    let mut total = 0.0f64;
    for w in stroke.points.windows(2) {
        let seg = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt() as f64;
        let mid = [(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0];
        for (c, a) in acc.iter_mut().enumerate() {
            *a += seg * color_field.sample_bilinear(mid[0], mid[1], c) as f64;
        }
        total += seg;
    }
    let mut out = stroke.clone();
    if total > 0.0 {
        for c in 0..3 {
            out.color[c] = (acc[c] / total) as f32;
        }
    } else {
        let p = stroke.points[0];
        for c in 0..3 {
            out.color[c] = color_field.sample_bilinear(p[0], p[1], c);
        }
    }
    out.color[3] = alpha;
    Ok(out)
}
