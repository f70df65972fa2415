//! Image-quality metrics for ablation reports: L1, perceptual feature
//! distance, MSE, PSNR, SSIM and a Fréchet distance over the frozen feature
//! network.

mod fid;
mod report;
mod ssim;

pub use fid::{feature_vectors, fid_from_features, fid_proxy, FID_STAGE};
pub use report::{evaluate, Averaging, MetricReport, MetricRow, METRIC_COLUMNS};
pub use ssim::{ssim, ssim_gray, SSIM_RADIUS, SSIM_SIGMA};

use crate::error::Result;
use crate::imagecore::{check_extent, RasterImage};
use crate::neuralnet::loss::perceptual_distance;
use crate::neuralnet::{Graph, PerceptualNet, Tensor};

/// PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check(a: &RasterImage, b: &RasterImage) -> Result<()> {
    check_extent(a.extent(), b.extent(), "metric operands")?;
    if a.channels() != b.channels() {
        return Err(crate::Error::Shape(format!("{} vs {} channels", a.channels(), b.channels())));
    }
    Ok(())
}

/// Mean absolute difference in `[0, 1]` units.
pub fn l1(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.data().len() as f64)
}

/// Mean squared difference on the 8-bit scale (values times 255).
pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x as f64 - *y as f64) * 255.0;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64)
}

/// PSNR in dB of an 8-bit-scale MSE, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Perceptual feature distance between two RGB images.
pub fn perceptual(net: &PerceptualNet, a: &RasterImage, b: &RasterImage) -> Result<f64> {
    check(a, b)?;
    let mut g = Graph::<f32>::new();
    let p = g.bind(&net.params.tensors, false);
    let av = g.constant(Tensor::from_image(&a.to_rgb()));
    let bv = g.constant(Tensor::from_image(&b.to_rgb()));
    let d = perceptual_distance(&mut g, net, &p, av, bv)?;
    Ok(g.value(d).item() as f64)
}
