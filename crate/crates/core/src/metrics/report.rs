use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{fid::feature_vectors, fid_from_features, l1, mse, perceptual, psnr_from_mse, ssim};
use crate::error::{Error, Result};
use crate::imagecore::RasterImage;
use crate::neuralnet::PerceptualNet;

pub const METRIC_COLUMNS: [&str; 6] = ["L1", "Perceptual", "MSE", "PSNR", "SSIM", "FID"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Each metric computed per image, then averaged.
    PerImage,
    /// Squared and absolute errors pooled over every pixel of the set first;
    /// PSNR then follows from the pooled MSE.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub averaging: Averaging,
    pub l1: f64,
    pub perceptual: f64,
    /// 8-bit scale; divide by 255² for unit scale.
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub fid_proxy: f64,
}

impl MetricRow {
    pub fn values(&self) -> [f64; 6] {
        [self.l1, self.perceptual, self.mse, self.psnr_db, self.ssim, self.fid_proxy]
    }

    /// Per column, whether `self` is strictly better than `other`.
    pub fn beats(&self, other: &MetricRow) -> [bool; 6] {
        let (a, b) = (self.values(), other.values());
        let higher_better = [false, false, false, true, true, false];
        std::array::from_fn(|i| if higher_better[i] { a[i] > b[i] } else { a[i] < b[i] })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub seed: u64,
    pub samples: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self {
            seed,
            samples,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, pair: (MetricRow, MetricRow)) {
        self.rows.push(pair.0);
        self.rows.push(pair.1);
    }

    pub fn rows_with(&self, averaging: Averaging) -> Vec<&MetricRow> {
        self.rows.iter().filter(|r| r.averaging == averaging).collect()
    }

    pub fn row(&self, variant: &str, averaging: Averaging) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.variant == variant && r.averaging == averaging)
    }

    /// Variants x metric columns of the per-image table.
    pub fn table_shape(&self) -> (usize, usize) {
        (self.rows_with(Averaging::PerImage).len(), METRIC_COLUMNS.len())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,averaging,l1,perceptual,mse,mse_unit,psnr_db,ssim,fid_proxy,samples,seed\n");
        for r in &self.rows {
            let avg = match r.averaging {
                Averaging::PerImage => "per_image",
                Averaging::Pooled => "pooled",
            };
            writeln!(
                s,
                "{},{avg},{:.6},{:.6},{:.4},{:.8},{:.4},{:.6},{:.6},{},{}",
                r.variant,
                r.l1,
                r.perceptual,
                r.mse,
                r.mse / (255.0 * 255.0),
                r.psnr_db,
                r.ssim,
                r.fid_proxy,
                self.samples,
                self.seed
            )
            .unwrap();
        }
        s
    }

    /// Aligned text table, one block per averaging convention.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        for (avg, title) in [(Averaging::PerImage, "per-image averaging"), (Averaging::Pooled, "pooled averaging")] {
            writeln!(s, "# {title} ({} samples, seed {})", self.samples, self.seed).unwrap();
            write!(s, "{:width$}", "").unwrap();
            for c in METRIC_COLUMNS {
                write!(s, " {c:>11}").unwrap();
            }
            s.push('\n');
            for r in self.rows_with(avg) {
                write!(s, "{:width$}", r.variant).unwrap();
                for v in r.values() {
                    write!(s, " {v:>11.4}").unwrap();
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Scores `predict` on `(input, ground truth)` pairs. Returns the per-image
/// and the pooled rows; the Fréchet term is a set statistic and is shared.
pub fn evaluate<S>(
    variant: &str,
    net: &PerceptualNet,
    samples: &[S],
    ground_truth: impl Fn(&S) -> &RasterImage,
    mut predict: impl FnMut(&S) -> Result<RasterImage>,
) -> Result<(MetricRow, MetricRow)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate"));
    }
    let n = samples.len() as f64;
    let (mut l1s, mut pers, mut mses, mut psnrs, mut ssims) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut abs_sum, mut sq_sum, mut count) = (0.0, 0.0, 0usize);
    let (mut preds, mut gts) = (Vec::new(), Vec::new());
    for s in samples {
        let gt = ground_truth(s).to_rgb();
        let out = predict(s)?.to_rgb();
        let (e1, e2) = (l1(&out, &gt)?, mse(&out, &gt)?);
        let k = gt.data().len();
        abs_sum += e1 * k as f64;
        sq_sum += e2 * k as f64;
        count += k;
        l1s += e1;
        mses += e2;
        psnrs += psnr_from_mse(e2);
        pers += perceptual(net, &out, &gt)?;
        ssims += ssim(&out, &gt)?;
        preds.push(out);
        gts.push(gt);
    }
    let fid = if samples.len() >= 2 {
        fid_from_features(&feature_vectors(net, &preds)?, &feature_vectors(net, &gts)?)?
    } else {
        f64::NAN
    };
    let per_image = MetricRow {
        variant: variant.to_string(),
        averaging: Averaging::PerImage,
        l1: l1s / n,
        perceptual: pers / n,
        mse: mses / n,
        psnr_db: psnrs / n,
        ssim: ssims / n,
        fid_proxy: fid,
    };
    let pooled_mse = sq_sum / count as f64;
    let pooled = MetricRow {
        averaging: Averaging::Pooled,
        l1: abs_sum / count as f64,
        mse: pooled_mse,
        psnr_db: psnr_from_mse(pooled_mse),
        ..per_image.clone()
    };
    Ok((per_image, pooled))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PSNR_CAP;

    fn images() -> Vec<RasterImage> {
        (0..4)
            .map(|i| RasterImage::from_fn(16, 16, 3, |x, y, px| px.iter_mut().enumerate().for_each(|(c, v)| *v = ((x * (i + 1) + y * 3 + c * 5) % 17) as f32 / 16.0)))
            .collect()
    }

    #[test]
    fn perfect_model() {
        let imgs = images();
        let net = PerceptualNet::new();
        let (row, pooled) = evaluate("oracle", &net, &imgs, |s| s, |s| Ok(s.clone())).unwrap();
        assert_eq!((row.l1, row.mse, row.perceptual), (0.0, 0.0, 0.0));
        assert_eq!(row.psnr_db, PSNR_CAP);
        assert!((row.ssim - 1.0).abs() < 1e-9);
        assert!(row.fid_proxy.abs() < 1e-6);
        assert_eq!(pooled.psnr_db, PSNR_CAP);
    }

    #[test]
    fn averaging_conventions_differ_on_uneven_errors() {
        let imgs = images();
        let net = PerceptualNet::new();
        let mut k = 0;
        let (per, pooled) = evaluate("noisy", &net, &imgs, |s| s, |s| {
            k += 1;
            let shift = if k == 1 { 0.2 } else { 0.01 };
            Ok(RasterImage::from_fn(16, 16, 3, |x, y, px| {
                for (c, v) in px.iter_mut().enumerate() {
                    *v = (s.get(x, y, c) + shift).min(1.0);
                }
            }))
        })
        .unwrap();
        assert!((per.mse - pooled.mse).abs() < 1e-9 * per.mse);
        assert!(pooled.psnr_db < per.psnr_db);
        let mut rep = MetricReport::new(7, imgs.len());
        rep.push((per, pooled));
        assert_eq!(rep.table_shape(), (1, 6));
        assert_eq!(rep.to_csv().lines().count(), 3);
        assert!(rep.to_table().contains("pooled averaging"));
    }

    #[test]
    fn permutation_invariant() {
        let imgs = images();
        let net = PerceptualNet::new();
        let pred = |s: &RasterImage| Ok(RasterImage::from_fn(16, 16, 3, |x, y, px| px.iter_mut().enumerate().for_each(|(c, v)| *v = s.get(x, y, c) * 0.8)));
        let (a, _) = evaluate("a", &net, &imgs, |s| s, pred).unwrap();
        let rev: Vec<RasterImage> = imgs.iter().rev().cloned().collect();
        let (b, _) = evaluate("a", &net, &rev, |s| s, pred).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-6 * x.abs().max(1.0));
        }
    }

    #[test]
    fn empty_set() {
        let net = PerceptualNet::new();
        let none: Vec<RasterImage> = Vec::new();
        assert!(evaluate("x", &net, &none, |s| s, |s| Ok(s.clone())).is_err());
    }
}
