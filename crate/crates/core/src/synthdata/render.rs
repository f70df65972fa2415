//! Procedural facial-hair renderer.
//!
//! Fibers are rooted on a vertical cylinder standing in for the lower face,
//! generated in mirror pairs so the canonical layout is left/right symmetric,
//! and projected with the cylinder turned by the yaw angle. Rendering yaw `+a`
//! and `-a` therefore gives mirror images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Domain, StyleParams};
use crate::error::{Error, Result};
use crate::imagecore::{dilate, MaskImage, RasterImage};

pub const PALETTE_NAMES: [&str; 8] = ["black", "dark-brown", "brown", "auburn", "red", "blond", "gray", "white"];

pub const PALETTES: [[f32; 3]; 8] = [
    [0.08, 0.07, 0.07],
    [0.23, 0.15, 0.10],
    [0.42, 0.28, 0.17],
    [0.55, 0.25, 0.13],
    [0.72, 0.33, 0.16],
    [0.85, 0.72, 0.48],
    [0.55, 0.55, 0.55],
    [0.92, 0.91, 0.88],
];

const SKIN_TONES: [[f32; 3]; 5] = [
    [0.93, 0.78, 0.66],
    [0.85, 0.66, 0.52],
    [0.72, 0.53, 0.40],
    [0.55, 0.38, 0.27],
    [0.38, 0.26, 0.19],
];

/// Widest visible angle of the face cylinder, radians.
const PHI_MAX: f32 = 80.0 * std::f32::consts::PI / 180.0;

/// One rendered fiber: a quadratic Bezier in image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fiber {
    pub p0: [f32; 2],
    pub p1: [f32; 2],
    pub p2: [f32; 2],
    pub color: [f32; 3],
    pub width: f32,
}

impl Fiber {
    pub fn point(&self, t: f32) -> [f32; 2] {
        let u = 1.0 - t;
        [
            u * u * self.p0[0] + 2.0 * u * t * self.p1[0] + t * t * self.p2[0],
            u * u * self.p0[1] + 2.0 * u * t * self.p1[1] + t * t * self.p2[1],
        ]
    }

    /// Polyline approximation with roughly half-pixel segments.
    pub fn polyline(&self) -> Vec<[f32; 2]> {
        let chord = dist(self.p0, self.p1) + dist(self.p1, self.p2);
        let n = ((chord / 0.5).ceil() as usize).clamp(1, 4096);
        (0..=n).map(|i| self.point(i as f32 / n as f32)).collect()
    }

    pub fn length(&self) -> f32 {
        self.polyline().windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Largest distance of the curve from its chord.
    pub fn sag(&self) -> f32 {
        self.polyline()
            .iter()
            .map(|p| point_segment_distance(*p, self.p0, self.p2))
            .fold(0.0, f32::max)
    }
}

fn dist(a: [f32; 2], b: [f32; 2]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn point_segment_distance(p: [f32; 2], a: [f32; 2], b: [f32; 2]) -> f32 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * abx, a[1] + t * aby])
}

/// Region template of one of the 50 styles, in normalized face coordinates
/// `u` in [-1, 1] (left/right, symmetric) and `v` in [0, 1] (top/bottom).
#[derive(Clone, Copy, Debug)]
struct Template {
    mustache: Option<(f32, f32, f32)>,
    chin: Option<(f32, f32, f32)>,
    jaw: Option<(f32, f32)>,
    flare: f32,
}

impl Template {
    fn for_style(style_id: u32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x57_71e0 + style_id as u64);
        let kind = style_id % 5;
        let mustache = (kind != 3).then(|| (rng.random_range(0.25..0.5), rng.random_range(0.08..0.16), rng.random_range(0.18..0.28)));
        let chin = (kind != 4).then(|| (rng.random_range(0.2..0.45), rng.random_range(0.62..0.75), rng.random_range(0.18..0.3)));
        let jaw = matches!(kind, 0 | 3 | 4).then(|| (rng.random_range(0.15..0.35), rng.random_range(0.2..0.5)));
        Self {
            mustache,
            chin,
            jaw,
            flare: rng.random_range(0.0..0.6),
        }
    }

    fn contains(&self, u: f32, v: f32) -> bool {
        let au = u.abs();
        if let Some((half_w, v0, v1)) = self.mustache {
            if au <= half_w && (v0..=v1).contains(&v) {
                return true;
            }
        }
        if let Some((rx, cy, ry)) = self.chin {
            if (au / rx).powi(2) + ((v - cy) / ry).powi(2) <= 1.0 {
                return true;
            }
        }
        if let Some((band, v_top)) = self.jaw {
            // cheeks and jaw: outer band widening toward the chin
            let inner = 1.0 - band - 0.6 * (v - v_top).max(0.0);
            if v >= v_top && v <= 0.95 && au >= inner.max(0.0) {
                return true;
            }
        }
        false
    }

    /// Fraction of the `(u, v)` square inside the template.
    fn coverage(&self) -> f32 {
        let n = 64;
        let mut hit = 0;
        for j in 0..n {
            for i in 0..n {
                let u = -1.0 + 2.0 * (i as f32 + 0.5) / n as f32;
                let v = (j as f32 + 0.5) / n as f32;
                hit += self.contains(u, v) as usize;
            }
        }
        hit as f32 / (n * n) as f32
    }
}

/// Style-dependent defaults for fiber density (fibers per masked pixel) and
/// curliness.
pub(crate) fn style_defaults(style_id: u32) -> (f32, f32) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xde75_0000 + style_id as u64);
    let density = rng.random_range(0.12..0.22);
    let curliness = if style_id % 7 == 0 { 0.0 } else { rng.random_range(0.0..0.6) };
    (density, curliness)
}

struct Geometry {
    size: f32,
    cx: f32,
    radius: f32,
    y_top: f32,
    y_bottom: f32,
}

impl Geometry {
    fn new(size: usize) -> Self {
        let s = size as f32;
        Self {
            size: s,
            cx: (s - 1.0) / 2.0,
            radius: 0.42 * s,
            y_top: 0.35 * s,
            y_bottom: 0.95 * s,
        }
    }

    /// Cylinder surface point `(phi, y)` to image coordinates; `None` when it
    /// faces away from the camera.
    fn project(&self, phi: f32, y: f32, yaw: f32) -> Option<[f32; 2]> {
        let a = phi - yaw;
        (a.cos() > 0.05).then(|| [self.cx + self.radius * a.sin(), y])
    }
}

/// Deterministic fiber layout for `p` at `size`, in draw order.
pub fn fiber_layout(p: &StyleParams, size: usize, domain: Domain) -> Vec<Fiber> {
    let g = Geometry::new(size);
    let t = Template::for_style(p.style_id);
    let yaw = (p.yaw_deg as f32).to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let region_area = t.coverage() * 2.0 * g.radius * PHI_MAX.sin() * (g.y_bottom - g.y_top);
    let pairs = (p.density.max(0.0) * region_area / 2.0).round() as usize;
    let base_len = 0.06 * g.size;
    let width_scale = if domain == Domain::Shifted { 1.3 } else { 1.0 };
    let width = (0.9 * g.size / 64.0).max(0.8) * width_scale;
    let palette = PALETTES[p.palette_id as usize % PALETTES.len()];
    let jitter = Normal::new(0.0f32, if domain == Domain::Shifted { 0.06 } else { 0.035 }).unwrap();
    let unit = Normal::new(0.0f32, 1.0).unwrap();
    let mut fibers = Vec::with_capacity(2 * pairs);
    let mut made = 0;
    let mut attempts = 0;
    while made < pairs && attempts < 50 * pairs.max(1) {
        attempts += 1;
        let u: f32 = rng.random_range(0.0..1.0);
        let v: f32 = rng.random_range(0.0..1.0);
        if !t.contains(u, v) {
            continue;
        }
        made += 1;
        let len = base_len * (1.0 + p.length_level as f32) * rng.random_range(0.7..1.3);
        let angle = t.flare * u + 0.15 * unit.sample(&mut rng);
        let curl = p.curliness * len * 0.5 * unit.sample(&mut rng).clamp(-2.0, 2.0);
        let shade = rng.random_range(0.8f32..1.15);
        let color = [0, 1, 2].map(|c| (palette[c] * shade + jitter.sample(&mut rng)).clamp(0.0, 1.0));
        for mirror in [1.0f32, -1.0] {
            let phi_root = mirror * u * PHI_MAX;
            let y_root = g.y_top + v * (g.y_bottom - g.y_top);
            let a = mirror * angle;
            let phi_tip = phi_root + len * a.sin() / g.radius;
            let y_tip = y_root + len * a.cos();
            let (Some(p0), Some(p2)) = (g.project(phi_root, y_root, yaw), g.project(phi_tip, y_tip, yaw)) else {
                continue;
            };
            let chord = dist(p0, p2).max(1e-6);
            let perp = [-(p2[1] - p0[1]) / chord, (p2[0] - p0[0]) / chord];
            let s = mirror * curl;
            let p1 = [
                0.5 * (p0[0] + p2[0]) + s * perp[0],
                0.5 * (p0[1] + p2[1]) + s * perp[1],
            ];
            fibers.push(Fiber {
                p0,
                p1,
                p2,
                color,
                width,
            });
        }
    }
    fibers
}

/// Skin-toned gradient the fibers are drawn over, symmetric left/right.
pub fn render_background(p: &StyleParams, size: usize, domain: Domain) -> RasterImage {
    let g = Geometry::new(size);
    let tone = SKIN_TONES[(p.rng_seed % SKIN_TONES.len() as u64) as usize];
    let mut noise_rng = ChaCha8Rng::seed_from_u64(p.rng_seed ^ 0xbac6_9000);
    let noise = Normal::new(0.0f32, 0.02).unwrap();
    RasterImage::from_fn(size, size, 3, |x, y, px| {
        let fy = y as f32 / g.size;
        let fx = (x as f32 - g.cx) / g.cx.max(1.0);
        let mut light = (0.85 + 0.2 * (1.0 - fy)) * (1.0 - 0.15 * fx * fx);
        if domain == Domain::Shifted {
            light *= 0.9 + 0.15 * fx + 0.05 * (0.3 * x as f32).sin() * (0.21 * y as f32).cos();
        }
        for c in 0..3 {
            let mut v = tone[c] * light;
            if domain == Domain::Shifted {
                v += noise.sample(&mut noise_rng);
            }
            px[c] = v;
        }
    })
}

/// Renders the image and its segmentation mask.
pub fn render_sample(p: &StyleParams, size: usize) -> Result<(RasterImage, MaskImage)> {
    render_sample_in(p, size, Domain::Synthetic)
}

pub fn render_sample_in(p: &StyleParams, size: usize, domain: Domain) -> Result<(RasterImage, MaskImage)> {
    p.validate()?;
    if size < 32 {
        return Err(Error::InvalidArgument(format!("render size must be >= 32, got {size}")));
    }
    if !(p.density > 0.0) {
        return Err(Error::EmptyMask("render_sample: zero fiber density"));
    }
    let fibers = fiber_layout(p, size, domain);
    let mut img = render_background(p, size, domain);
    let mut core = MaskImage::new(size, size);
    for f in &fibers {
        draw_fiber(&mut img, &mut core, f);
    }
    let mask = dilate(&core, 3)?;
    if mask.is_empty() {
        return Err(Error::EmptyMask("render_sample: no visible fibers"));
    }
    Ok((img, mask))
}

fn draw_fiber(img: &mut RasterImage, core: &mut MaskImage, f: &Fiber) {
    let pts = f.polyline();
    let halo = f.width / 2.0 + 2.0;
    let pad = halo + 1.0;
    let (w, h) = img.extent();
    let (mut x0, mut y0, mut x1, mut y1) = (f32::MAX, f32::MAX, f32::MIN, f32::MIN);
    for p in &pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    if x1 + pad < 0.0 || y1 + pad < 0.0 || x0 - pad > (w - 1) as f32 || y0 - pad > (h - 1) as f32 {
        return;
    }
    let xa = (x0 - pad).floor().max(0.0) as usize;
    let ya = (y0 - pad).floor().max(0.0) as usize;
    let xb = ((x1 + pad).ceil() as usize).min(w - 1);
    let yb = ((y1 + pad).ceil() as usize).min(h - 1);
    let nseg = (pts.len() - 1).max(1) as f32;
    for y in ya..=yb {
        for x in xa..=xb {
            let p = [x as f32, y as f32];
            let (mut d, mut t) = (f32::MAX, 0.0);
            for (i, s) in pts.windows(2).enumerate() {
                let di = point_segment_distance(p, s[0], s[1]);
                if di < d {
                    d = di;
                    t = i as f32 / nseg;
                }
            }
            let shadow = (halo + 0.5 - d).clamp(0.0, 1.0);
            if shadow <= 0.0 {
                continue;
            }
            let cov = (f.width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
            if cov >= 0.5 {
                core.set(x, y, true);
            }
            let px = img.pixel_mut(x, y);
            let tip = 0.85 + 0.3 * t;
            for c in 0..3 {
                let shaded = px[c] * (1.0 - 0.25 * shadow);
                let a = 0.95 * cov;
                px[c] = (a * (f.color[c] * tip).min(1.0) + (1.0 - a) * shaded).clamp(0.0, 1.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(style: u32, length: u32, palette: u32, yaw: i32, seed: u64) -> StyleParams {
        StyleParams::from_grid(style, length, palette, yaw, seed).unwrap()
    }

    #[test]
    fn straight_fibers_without_curl() {
        let mut p = params(3, 2, 1, 20, 11);
        p.curliness = 0.0;
        let fibers = fiber_layout(&p, 64, Domain::Synthetic);
        assert!(!fibers.is_empty());
        assert!(fibers.iter().all(|f| f.sag() <= 0.5));
        p.curliness = 0.6;
        assert!(fiber_layout(&p, 64, Domain::Synthetic).iter().any(|f| f.sag() > 0.5));
    }

    #[test]
    fn longer_levels_give_longer_fibers() {
        let mean = |level: u32| {
            let mut total = 0.0;
            let mut n = 0;
            for i in 0..100u64 {
                let p = params((i % 50) as u32, level, 0, 0, 1000 + i);
                for f in fiber_layout(&p, 64, Domain::Synthetic) {
                    total += f.length();
                    n += 1;
                }
            }
            total / n as f32
        };
        let (short, long) = (mean(0), mean(3));
        assert!(long >= 2.0 * short, "{short} vs {long}");
    }

    #[test]
    fn opposite_yaws_are_mirror_images() {
        for (style, yaw) in [(0, 90), (7, 40), (23, 10)] {
            let (_, a) = render_sample(&params(style, 1, 2, yaw, 5), 64).unwrap();
            let (_, b) = render_sample(&params(style, 1, 2, -yaw, 5), 64).unwrap();
            let same = (0..64)
                .flat_map(|y| (0..64).map(move |x| (x, y)))
                .filter(|&(x, y)| a.get(x, y) == b.get(63 - x, y))
                .count();
            assert!(same as f32 >= 0.99 * 4096.0, "style {style} yaw {yaw}: {same}");
        }
    }

    #[test]
    fn mask_pixels_differ_from_background() {
        for seed in 0..5u64 {
            let p = params((seed * 9) as u32 % 50, (seed % 4) as u32, (seed % 8) as u32, 0, seed);
            let (img, mask) = render_sample(&p, 64).unwrap();
            let bg = render_background(&p, 64, Domain::Synthetic);
            let differ = (0..64)
                .flat_map(|y| (0..64).map(move |x| (x, y)))
                .filter(|&(x, y)| mask.get(x, y) && img.pixel(x, y) != bg.pixel(x, y))
                .count();
            assert!(differ as f32 >= 0.99 * mask.count() as f32);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = params(12, 2, 4, -30, 77);
        assert_eq!(render_sample(&p, 48).unwrap(), render_sample(&p, 48).unwrap());
        let q = StyleParams { rng_seed: 78, ..p };
        assert_ne!(render_sample(&p, 48).unwrap().1, render_sample(&q, 48).unwrap().1);
    }

    #[test]
    fn zero_density_is_an_error() {
        let mut p = params(1, 1, 1, 0, 1);
        p.density = 0.0;
        assert!(matches!(render_sample(&p, 64), Err(Error::EmptyMask(_))));
        assert!(render_sample(&params(1, 1, 1, 0, 1), 16).is_err());
    }

    #[test]
    fn shifted_domain_differs() {
        let p = params(4, 1, 3, 0, 8);
        let (a, _) = render_sample_in(&p, 64, Domain::Synthetic).unwrap();
        let (b, _) = render_sample_in(&p, 64, Domain::Shifted).unwrap();
        assert_ne!(a, b);
    }
}
