//! Square-window binary morphology with zero padding.
//!
//! A `k`x`k` window covers offsets `-(k/2) ..= (k-1)/2` on each axis, so odd
//! kernels are centered and even kernels lean one pixel toward the origin.
//! Both filters are separable (row pass, then column pass), computed with
//! running counts so cost is independent of `k`.

use super::MaskImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Min,
    Max,
}

fn validate(mask: &MaskImage, k: usize) -> Result<()> {
    if k == 0 || (k > mask.width() && k > mask.height()) {
        return Err(Error::DegenerateKernel {
            k,
            width: mask.width(),
            height: mask.height(),
        });
    }
    Ok(())
}

/// Output pixel is set iff every pixel of its `k`x`k` window is set;
/// out-of-image pixels count as unset.
pub fn erode(mask: &MaskImage, k: usize) -> Result<MaskImage> {
    validate(mask, k)?;
    Ok(filter(mask, k, Reduce::Min, false))
}

/// Output pixel is set iff any pixel of its `k`x`k` window is set.
pub fn dilate(mask: &MaskImage, k: usize) -> Result<MaskImage> {
    validate(mask, k)?;
    Ok(filter(mask, k, Reduce::Max, false))
}

/// `dilate(mask, k) AND NOT erode(mask, k)`: a ring straddling the mask edge.
pub fn boundary_band(mask: &MaskImage, k: usize) -> Result<MaskImage> {
    let grown = dilate(mask, k)?;
    let shrunk = erode(mask, k)?;
    Ok(grown.and_not(&shrunk))
}

#[cfg(test)]
pub(crate) fn filter_with_padding(mask: &MaskImage, k: usize, min: bool, pad: bool) -> MaskImage {
    filter(mask, k, if min { Reduce::Min } else { Reduce::Max }, pad)
}

fn filter(mask: &MaskImage, k: usize, op: Reduce, pad: bool) -> MaskImage {
    let (w, h) = mask.extent();
    let lo = (k / 2) as isize;
    let hi = ((k - 1) / 2) as isize;
    let mut rows = vec![false; w * h];
    let mut line = Vec::with_capacity(w.max(h));
    let mut out_line = Vec::with_capacity(w.max(h));
    for y in 0..h {
        line.clear();
        line.extend((0..w).map(|x| mask.get(x, y)));
        reduce_line(&line, lo, hi, op, pad, &mut out_line);
        rows[y * w..(y + 1) * w].copy_from_slice(&out_line);
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| rows[y * w + x]));
        reduce_line(&line, lo, hi, op, pad, &mut out_line);
        for (y, v) in out_line.iter().enumerate() {
            out[y * w + x] = *v;
        }
    }
    MaskImage::from_bits(w, h, out).expect("extent preserved")
}

/// 1-D window reduction over `i - lo ..= i + hi` using a prefix count of set
/// bits. Padding contributes `pad` for every out-of-range tap.
fn reduce_line(src: &[bool], lo: isize, hi: isize, op: Reduce, pad: bool, dst: &mut Vec<bool>) {
    let n = src.len() as isize;
    let mut prefix = Vec::with_capacity(src.len() + 1);
    prefix.push(0usize);
    for b in src {
        prefix.push(prefix.last().unwrap() + *b as usize);
    }
    let span = (lo + hi + 1) as usize;
    dst.clear();
    for i in 0..n {
        let a = i - lo;
        let b = i + hi;
        let ca = a.max(0);
        let cb = b.min(n - 1);
        let inside = if cb >= ca { (cb - ca + 1) as usize } else { 0 };
        let ones_inside = if cb >= ca {
            prefix[cb as usize + 1] - prefix[ca as usize]
        } else {
            0
        };
        let outside = span - inside;
        let ones = ones_inside + if pad { outside } else { 0 };
        dst.push(match op {
            Reduce::Min => ones == span,
            Reduce::Max => ones > 0,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive sliding-window oracle, independent of the separable path.
    fn brute(mask: &MaskImage, k: usize, min: bool, pad: bool) -> MaskImage {
        let lo = (k / 2) as isize;
        let hi = ((k - 1) / 2) as isize;
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        MaskImage::from_fn(mask.width(), mask.height(), |x, y| {
            let mut all = true;
            let mut any = false;
            for dy in -lo..=hi {
                for dx in -lo..=hi {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    let v = if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        pad
                    } else {
                        mask.get(xx as usize, yy as usize)
                    };
                    all &= v;
                    any |= v;
                }
            }
            if min {
                all
            } else {
                any
            }
        })
    }

    fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> MaskImage {
        MaskImage::from_fn(w, h, |_, _| rng.random_bool(p))
    }

    #[test]
    fn erode_full_mask_zero_pads_the_border() {
        let m = MaskImage::full(20, 20);
        let e = erode(&m, 3).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                let ring = x == 0 || y == 0 || x == 19 || y == 19;
                assert_eq!(e.get(x, y), !ring, "({x},{y})");
            }
        }
    }

    #[test]
    fn erode_single_pixel_vanishes() {
        let mut m = MaskImage::new(12, 12);
        m.set(5, 5, true);
        assert!(erode(&m, 3).unwrap().is_empty());
    }

    #[test]
    fn dilate_single_pixel_is_block() {
        let mut m = MaskImage::new(12, 12);
        m.set(5, 5, true);
        let d = dilate(&m, 3).unwrap();
        assert_eq!(d.count(), 9);
        for y in 4..=6 {
            for x in 4..=6 {
                assert!(d.get(x, y));
            }
        }
        assert!(dilate(&MaskImage::new(8, 8), 3).unwrap().is_empty());
    }

    #[test]
    fn random_masks_match_brute_force_k10() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 32, 32, 0.7);
            assert_eq!(erode(&m, 10).unwrap(), brute(&m, 10, true, false));
            let m = random_mask(&mut rng, 32, 32, 0.05);
            assert_eq!(dilate(&m, 10).unwrap(), brute(&m, 10, false, false));
        }
    }

    #[test]
    fn band_of_centered_square() {
        let m = MaskImage::from_fn(64, 64, |x, y| (24..40).contains(&x) && (24..40).contains(&y));
        let band = boundary_band(&m, 10).unwrap();
        let oracle = brute(&m, 10, false, false).and_not(&brute(&m, 10, true, false));
        assert_eq!(band, oracle);
        // 9 pixels across each vertical edge on the center row: dilation reaches
        // x in [20, 44], erosion keeps [29, 35].
        let row: usize = (0..64).filter(|&x| band.get(x, 32)).count();
        assert_eq!(row, 18);
    }

    #[test]
    fn band_of_full_mask_hugs_border() {
        let band = boundary_band(&MaskImage::full(30, 30), 10).unwrap();
        assert!(band.get(0, 0) && band.get(29, 15) && band.get(4, 15));
        assert!(!band.get(15, 15));
        assert!(boundary_band(&MaskImage::new(30, 30), 10).unwrap().is_empty());
    }

    #[test]
    fn degenerate_kernels_are_rejected() {
        let m = MaskImage::new(8, 6);
        assert!(matches!(erode(&m, 0), Err(Error::DegenerateKernel { .. })));
        assert!(matches!(dilate(&m, 9), Err(Error::DegenerateKernel { .. })));
        assert!(dilate(&m, 8).is_ok());
    }

    #[test]
    fn duality_exhaustive_16() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 1..=7 {
            for _ in 0..10 {
                let m = random_mask(&mut rng, 16, 16, 0.6);
                let e = erode(&m, k).unwrap();
                let dual = filter_with_padding(&m.not(), k, false, true).not();
                assert_eq!(e, dual, "k={k}");
            }
        }
    }

    fn set_boundary(m: &MaskImage) -> MaskImage {
        let (w, h) = m.extent();
        MaskImage::from_fn(w, h, |x, y| {
            let v = m.get(x, y);
            let mut differs = false;
            for (dx, dy) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                let (xx, yy) = (x as i32 + dx, y as i32 + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    differs |= m.get(xx as usize, yy as usize) != v;
                }
            }
            differs
        })
    }

    fn mask_strategy() -> impl Strategy<Value = MaskImage> {
        proptest::collection::vec(any::<bool>(), 16 * 16)
            .prop_map(|bits| MaskImage::from_bits(16, 16, bits).unwrap())
    }

    proptest! {
        #[test]
        fn monotone_in_the_mask(a in mask_strategy(), b in mask_strategy(), k in 1usize..8) {
            let small = a.and(&b);
            prop_assert!(dilate(&small, k).unwrap().is_subset_of(&dilate(&a, k).unwrap()));
            prop_assert!(erode(&small, k).unwrap().is_subset_of(&erode(&a, k).unwrap()));
        }

        #[test]
        fn band_covers_set_boundary(m in mask_strategy(), k in 3usize..11) {
            prop_assume!(!m.is_empty() && m.count() < 256);
            let band = boundary_band(&m, k).unwrap();
            prop_assert!(set_boundary(&m).is_subset_of(&band));
        }

        #[test]
        fn separable_equals_brute(m in mask_strategy(), k in 1usize..12, pad in any::<bool>()) {
            prop_assert_eq!(filter_with_padding(&m, k, true, pad), brute(&m, k, true, pad));
            prop_assert_eq!(filter_with_padding(&m, k, false, pad), brute(&m, k, false, pad));
        }
    }
}
