use crate::error::{Error, Result};
use crate::imagecore::RasterImage;

pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let d = i as f64 - SSIM_RADIUS as f64;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" Gaussian filter: output is `(w - 10) x (h - 10)`.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `w x h` grayscale planes in `[0, 1]` over every full
/// 11x11 Gaussian window.
pub fn ssim_gray(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64> {
    let n = 2 * SSIM_RADIUS + 1;
    if w < n || h < n {
        return Err(Error::InvalidArgument(format!("ssim needs at least {n}x{n} pixels, got {w}x{h}")));
    }
    if a.len() != w * h || b.len() != w * h {
        return Err(Error::Shape("ssim plane length".into()));
    }
    let k = window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter(a, w, h, &k);
    let mu_b = filter(b, w, h, &k);
    let aa = filter(&prod(&|x, _| x * x), w, h, &k);
    let bb = filter(&prod(&|_, y| y * y), w, h, &k);
    let ab = filter(&prod(&|x, y| x * y), w, h, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// SSIM on luminance.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    crate::imagecore::check_extent(a.extent(), b.extent(), "ssim operands")?;
    let la: Vec<f64> = a.luminance().into_iter().map(f64::from).collect();
    let lb: Vec<f64> = b.luminance().into_iter().map(f64::from).collect();
    ssim_gray(&la, &lb, a.width(), a.height())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn plane(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random()).collect()
    }

    /// Direct per-window statistics with a 2-D Gaussian.
    fn naive(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
        let r = SSIM_RADIUS as isize;
        let mut wts = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                wts.push((-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
            }
        }
        let s: f64 = wts.iter().sum();
        let (mut total, mut count) = (0.0, 0);
        for cy in SSIM_RADIUS..h - SSIM_RADIUS {
            for cx in SSIM_RADIUS..w - SSIM_RADIUS {
                let (mut ma, mut mb) = (0.0, 0.0);
                let mut idx = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let p = (cy as isize + dy) as usize * w + (cx as isize + dx) as usize;
                        ma += wts[idx] / s * a[p];
                        mb += wts[idx] / s * b[p];
                        idx += 1;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                idx = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let p = (cy as isize + dy) as usize * w + (cx as isize + dx) as usize;
                        let wt = wts[idx] / s;
                        va += wt * (a[p] - ma) * (a[p] - ma);
                        vb += wt * (b[p] - mb) * (b[p] - mb);
                        cov += wt * (a[p] - ma) * (b[p] - mb);
                        idx += 1;
                    }
                }
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn identical_is_one() {
        let a = plane(1, 32 * 32);
        assert!((ssim_gray(&a, &a, 32, 32).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_window_oracle_and_is_symmetric() {
        let a = plane(2, 32 * 32);
        let mut b = plane(3, 32 * 32);
        for (x, y) in b.iter_mut().zip(&a) {
            *x = 0.6 * *y + 0.4 * *x;
        }
        let fast = ssim_gray(&a, &b, 32, 32).unwrap();
        assert!((fast - naive(&a, &b, 32, 32)).abs() < 1e-6);
        assert!((fast - ssim_gray(&b, &a, 32, 32).unwrap()).abs() < 1e-12);
        assert!(fast < 1.0 && fast > 0.0);
    }

    #[test]
    fn too_small() {
        let a = plane(4, 100);
        assert!(ssim_gray(&a, &a, 10, 10).is_err());
        let img = RasterImage::zeros(8, 8, 3);
        assert!(ssim(&img, &img).is_err());
    }
}
