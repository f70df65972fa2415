//! Gaussian-derivative structure tensor and its closed-form 2x2 eigensystem.

use super::{OrientationField, ScalarFieldStack};
use crate::error::{Error, Result};
use crate::imagecore::RasterImage;

/// Below this trace the tensor carries no usable orientation.
const ENERGY_FLOOR: f64 = 1e-12;
const COHERENCE_EPS: f64 = 1e-9;

/// Sampled, normalized Gaussian on `-r..=r` with `r = ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    k
}

/// First-derivative-of-Gaussian taps for correlation, scaled so that a unit
/// ramp yields exactly 1.
pub(crate) fn gaussian_derivative_kernel(sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma);
    let r = (g.len() / 2) as i64;
    let mut d: Vec<f64> = (-r..=r).zip(&g).map(|(i, gi)| i as f64 * gi).collect();
    let norm: f64 = (-r..=r).zip(&d).map(|(i, di)| i as f64 * di).sum();
    d.iter_mut().for_each(|v| *v /= norm);
    d
}

/// Correlates each row (`horizontal`) or column with `k`, edge-clamped.
fn correlate_1d(src: &[f64], w: usize, h: usize, k: &[f64], horizontal: bool) -> Vec<f64> {
    if k.len() == 1 {
        return src.iter().map(|v| v * k[0]).collect();
    }
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let o = t as isize - r;
                let (xx, yy) = if horizontal {
                    ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                } else {
                    (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                };
                acc += src[yy * w + xx] * kv;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Luminance gradients at `sigma_grad`, outer products smoothed at
/// `sigma_smooth` (0 disables smoothing).
pub fn structure_tensor(img: &RasterImage, sigma_grad: f64, sigma_smooth: f64) -> Result<ScalarFieldStack> {
    if sigma_grad < 0.5 || !sigma_grad.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_grad must be >= 0.5, got {sigma_grad}")));
    }
    if sigma_smooth < 0.0 || !sigma_smooth.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_smooth must be >= 0, got {sigma_smooth}")));
    }
    let lum: Vec<f64> = img.luminance().into_iter().map(f64::from).collect();
    if lum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("structure tensor input"));
    }
    let (w, h) = img.extent();
    let g = gaussian_kernel(sigma_grad);
    let d = gaussian_derivative_kernel(sigma_grad);
    let gx = correlate_1d(&correlate_1d(&lum, w, h, &d, true), w, h, &g, false);
    let gy = correlate_1d(&correlate_1d(&lum, w, h, &g, true), w, h, &d, false);

    let s = gaussian_kernel(sigma_smooth);
    let smooth = |v: Vec<f64>| -> Vec<f32> {
        correlate_1d(&correlate_1d(&v, w, h, &s, true), w, h, &s, false)
            .into_iter()
            .map(|x| x as f32)
            .collect()
    };
    let jxx = smooth(gx.iter().map(|a| a * a).collect());
    let jxy = smooth(gx.iter().zip(&gy).map(|(a, b)| a * b).collect());
    let jyy = smooth(gy.iter().map(|b| b * b).collect());
    Ok(ScalarFieldStack { width: w, height: h, jxx, jxy, jyy })
}

/// Eigensystem of the symmetric matrix `[[a, b], [b, c]]`, `lambda1 >= lambda2`.
#[derive(Clone, Copy, Debug)]
pub struct Eigen2 {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Unit eigenvector of `lambda1` (direction of maximum change).
    pub major: [f64; 2],
    /// Unit eigenvector of `lambda2` (direction of minimum change).
    pub minor: [f64; 2],
}

pub fn eigen_sym2(a: f64, b: f64, c: f64) -> Eigen2 {
    let mean = 0.5 * (a + c);
    let half_diff = 0.5 * (a - c);
    let rad = (half_diff * half_diff + b * b).sqrt();
    let phi = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = phi.sin_cos();
    Eigen2 {
        lambda1: mean + rad,
        lambda2: mean - rad,
        major: [co, s],
        minor: [-s, co],
    }
}

/// Canonical representative of an orientation: `y > 0`, or `y == 0, x >= 0`.
#[inline]
pub(crate) fn canonical(v: [f32; 2]) -> [f32; 2] {
    if v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// Per pixel, the eigenvector of the smaller eigenvalue and the normalized
/// eigenvalue gap. Pixels under `coherence_threshold` keep their direction but
/// report as unreliable.
pub fn minimum_change_field(stack: &ScalarFieldStack, coherence_threshold: f32) -> Result<OrientationField> {
    if !(0.0..1.0).contains(&coherence_threshold) {
        return Err(Error::InvalidArgument(format!(
            "coherence threshold must lie in [0, 1), got {coherence_threshold}"
        )));
    }
    let n = stack.width * stack.height;
    let mut direction = Vec::with_capacity(n);
    let mut coherence = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b, c) = (stack.jxx[i] as f64, stack.jxy[i] as f64, stack.jyy[i] as f64);
        let e = eigen_sym2(a, b, c);
        let trace = e.lambda1 + e.lambda2;
        let coh = if trace <= ENERGY_FLOOR {
            0.0
        } else {
            ((e.lambda1 - e.lambda2) / (trace + COHERENCE_EPS)).clamp(0.0, 1.0)
        };
        direction.push(canonical([e.minor[0] as f32, e.minor[1] as f32]));
        coherence.push(coh as f32);
    }
    Ok(OrientationField {
        width: stack.width,
        height: stack.height,
        direction,
        coherence,
        threshold: coherence_threshold,
    })
}
