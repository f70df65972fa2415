//! Network inputs and targets built from dataset samples.

use crate::error::{Error, Result};
use crate::imagecore::{MaskImage, RasterImage};
use crate::neuralnet::loss::{l1_weight_map, LossConfig, Stage};
use crate::neuralnet::Tensor;
use crate::strokes::{rasterize_strokes, StrokeSet};
use crate::synthdata::DatasetSample;

pub const STAGE1_CHANNELS: usize = 5;
pub const STAGE2_CHANNELS: usize = 7;
/// Mask, strokes and masked photo for the single-network ablations.
pub const SINGLE_CHANNELS: usize = 8;
const _: () = assert!(STAGE1_CHANNELS == 1 + 4 && STAGE2_CHANNELS == 3 + 1 + 3 && SINGLE_CHANNELS == 1 + 4 + 3);

/// Mask and RGBA stroke image as a `(1, 5, H, W)` tensor.
pub fn stage1_input(mask: &MaskImage, strokes_rgba: &RasterImage) -> Result<Tensor<f32>> {
    if strokes_rgba.channels() != 4 || strokes_rgba.extent() != mask.extent() {
        return Err(Error::Shape("stroke image must be RGBA with the mask's extent".into()));
    }
    Tensor::concat(&Tensor::from_mask(mask), &Tensor::from_image(strokes_rgba))
}

/// Constant `color` with full opacity inside the mask: the stroke channels of
/// the initialization network.
pub fn fill_strokes(mask: &MaskImage, color: [f32; 3]) -> RasterImage {
    RasterImage::from_fn(mask.width(), mask.height(), 4, |x, y, px| {
        if mask.get(x, y) {
            px.copy_from_slice(&[color[0], color[1], color[2], 1.0]);
        }
    })
}

/// The photo with the masked region blanked to black.
pub fn masked_photo(image: &RasterImage, mask: &MaskImage) -> Result<RasterImage> {
    image.to_rgb().masked(mask, true)
}

/// Mask and masked photo, `(1, 4, H, W)`: the stage-2 input minus the
/// stage-1 output.
pub fn stage2_context(image: &RasterImage, mask: &MaskImage) -> Result<Tensor<f32>> {
    Tensor::concat(&Tensor::from_mask(mask), &Tensor::from_image(&masked_photo(image, mask)?))
}

/// Mean colour of the photo inside the mask.
pub fn region_mean(image: &RasterImage, mask: &MaskImage) -> Result<[f32; 3]> {
    let m = image.to_rgb().mean_over(mask)?;
    Ok([m[0], m[1], m[2]])
}

/// Every tensor a training step may need for one sample.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub x1: Tensor<f32>,
    pub x1_init: Tensor<f32>,
    pub ctx2: Tensor<f32>,
    pub x_single: Tensor<f32>,
    /// Photo with zeros outside the mask.
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
    pub w1: Tensor<f32>,
    pub w2: Tensor<f32>,
}

impl Prepared {
    pub fn new(image: &RasterImage, mask: &MaskImage, strokes: &StrokeSet, loss: &LossConfig) -> Result<Self> {
        let rgba = rasterize_strokes(strokes, mask)?;
        let x1 = stage1_input(mask, &rgba)?;
        let x1_init = stage1_input(mask, &fill_strokes(mask, region_mean(image, mask)?))?;
        let ctx2 = stage2_context(image, mask)?;
        let rgb = image.to_rgb();
        let x_single = Tensor::concat(&x1, &Tensor::from_image(&masked_photo(&rgb, mask)?))?;
        Ok(Self {
            x1,
            x1_init,
            ctx2,
            x_single,
            t1: Tensor::from_image(&rgb.masked(mask, false)?),
            t2: Tensor::from_image(&rgb),
            w1: l1_weight_map::<f32>(mask, Stage::Synthesis, loss)?.repeat_channels(3),
            w2: l1_weight_map::<f32>(mask, Stage::Compositing, loss)?.repeat_channels(3),
        })
    }

    pub fn from_sample(s: &DatasetSample, loss: &LossConfig) -> Result<Self> {
        Self::new(&s.image, &s.mask, &s.strokes, loss)
    }
}

/// Stacked tensors of a minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x1: Tensor<f32>,
    pub x1_init: Tensor<f32>,
    pub ctx2: Tensor<f32>,
    pub x_single: Tensor<f32>,
    pub t1: Tensor<f32>,
    pub t2: Tensor<f32>,
    pub w1: Tensor<f32>,
    pub w2: Tensor<f32>,
}

impl Batch {
    pub fn new(items: &[&Prepared]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyDataset("empty batch"));
        }
        let stack = |f: fn(&Prepared) -> &Tensor<f32>| Tensor::stack(&items.iter().map(|p| f(p).clone()).collect::<Vec<_>>());
        Ok(Self {
            x1: stack(|p| &p.x1)?,
            x1_init: stack(|p| &p.x1_init)?,
            ctx2: stack(|p| &p.ctx2)?,
            x_single: stack(|p| &p.x_single)?,
            t1: stack(|p| &p.t1)?,
            t2: stack(|p| &p.t2)?,
            w1: stack(|p| &p.w1)?,
            w2: stack(|p| &p.w2)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_samples, AnnotationConfig, Domain};

    #[test]
    fn channel_layout() {
        let s = &generate_samples(1, 32, 3, Domain::Synthetic, &AnnotationConfig::default()).unwrap()[0];
        let p = Prepared::from_sample(s, &LossConfig::default()).unwrap();
        assert_eq!(p.x1.shape, [1, STAGE1_CHANNELS, 32, 32]);
        assert_eq!(p.ctx2.shape[1] + 3, STAGE2_CHANNELS);
        assert_eq!(p.x_single.shape[1], SINGLE_CHANNELS);
        let plane = 32 * 32;
        for (i, inside) in s.mask.bits().iter().enumerate() {
            // mask channel, stroke alpha and target fill
            assert_eq!(p.x1.data[i], if *inside { 1.0 } else { -1.0 });
            if !inside {
                assert_eq!(p.x1.data[4 * plane + i], -1.0);
                assert_eq!(p.t1.data[i], -1.0);
                assert_eq!(p.w1.data[i], 0.0);
            } else {
                assert_eq!(p.x1_init.data[4 * plane + i], 1.0);
                assert_eq!(p.ctx2.data[plane + i], -1.0);
            }
        }
        let b = Batch::new(&[&p, &p]).unwrap();
        assert_eq!(b.x1.shape[0], 2);
    }
}
