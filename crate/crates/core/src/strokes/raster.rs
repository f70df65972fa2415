use super::StrokeSet;
use crate::error::Result;
use crate::imagecore::{check_extent, MaskImage, RasterImage};

fn segment_distance(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Draws strokes in order into a straight-alpha RGBA image. Coverage is
/// `clamp(w/2 + 0.5 - d, 0, 1)` with `d` the distance to the polyline;
/// everything outside `mask` is transparent black.
pub fn rasterize_strokes(set: &StrokeSet, mask: &MaskImage) -> Result<RasterImage> {
    check_extent((set.width, set.height), mask.extent(), "rasterize_strokes")?;
    let (w, h) = (set.width, set.height);
    let mut premul = vec![[0.0f32; 4]; w * h];
    for s in &set.strokes {
        if s.points.is_empty() {
            continue;
        }
        let pad = s.width / 2.0 + 1.0;
        let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
        for p in &s.points {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        let xa = (x0 - pad).floor().max(0.0) as usize;
        let ya = (y0 - pad).floor().max(0.0) as usize;
        let xb = ((x1 + pad).ceil().max(0.0) as usize).min(w - 1);
        let yb = ((y1 + pad).ceil().max(0.0) as usize).min(h - 1);
        for y in ya..=yb {
            for x in xa..=xb {
                if !mask.get(x, y) {
                    continue;
                }
                let p = [x as f32, y as f32];
                let d = if s.points.len() == 1 {
                    segment_distance(p, s.points[0], s.points[0])
                } else {
                    s.points.windows(2).map(|seg| segment_distance(p, seg[0], seg[1])).fold(f32::MAX, f32::min)
                };
                let cov = (s.width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
                if cov <= 0.0 {
                    continue;
                }
                let a = s.color[3] * cov;
                let px = &mut premul[y * w + x];
                for c in 0..3 {
                    px[c] = s.color[c] * a + px[c] * (1.0 - a);
                }
                px[3] = a + px[3] * (1.0 - a);
            }
        }
    }
    Ok(RasterImage::from_fn(w, h, 4, |x, y, out| {
        let px = premul[y * w + x];
        if px[3] > 0.0 {
            for c in 0..3 {
                out[c] = px[c] / px[3];
            }
            out[3] = px[3];
        }
    }))
}
