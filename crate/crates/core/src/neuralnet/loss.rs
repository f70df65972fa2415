use serde::{Deserialize, Serialize};

use super::graph::{Bound, Graph, Var};
use super::models::{Discriminator, PerceptualNet};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::imagecore::{boundary_band, check_extent, MaskImage};

/// Logits are clipped to this magnitude inside the cross-entropy.
pub const LOGIT_CLIP: f64 = 30.0;

/// Feature stages compared by the perceptual loss.
pub const PERCEPTUAL_STAGES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w_l1: f64,
    pub w_adv: f64,
    pub w_per: f64,
    /// Stage-2 L1 multiplier inside the mask.
    pub mask_gain: f64,
    /// Further multiplier on the boundary band.
    pub boundary_gain: f64,
    pub morph_k: usize,
    #[serde(default = "yes")]
    pub use_adv: bool,
    #[serde(default = "yes")]
    pub use_per: bool,
}

fn yes() -> bool {
    true
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w_l1: 50.0,
            w_adv: 1.0,
            w_per: 0.1,
            mask_gain: 1.5,
            boundary_gain: 1.5,
            morph_k: 10,
            use_adv: true,
            use_per: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.w_l1, self.w_adv, self.w_per, self.mask_gain, self.boundary_gain].iter().any(|w| !(*w > 0.0)) || self.morph_k == 0 {
            return Err(Error::InvalidArgument(format!("loss weights must be > 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Supervise only inside the mask.
    Synthesis,
    /// Whole image, up-weighted in the mask and again on its boundary band.
    Compositing,
}

/// Per-pixel L1 weights as a `(1, 1, H, W)` tensor.
pub fn l1_weight_map<T: Scalar>(mask: &MaskImage, stage: Stage, cfg: &LossConfig) -> Result<Tensor<T>> {
    match stage {
        Stage::Synthesis => {
            if mask.is_empty() {
                return Err(Error::EmptyMask("stage-1 L1 has no supervised pixels"));
            }
            Ok(Tensor::mask_weights(mask))
        }
        Stage::Compositing => {
            let band = boundary_band(mask, cfg.morph_k)?;
            let (m, b) = (T::lit(cfg.mask_gain), T::lit(cfg.mask_gain * cfg.boundary_gain));
            let data = mask
                .bits()
                .iter()
                .zip(band.bits())
                .map(|(&in_mask, &in_band)| {
                    if in_band {
                        b
                    } else if in_mask {
                        m
                    } else {
                        T::one()
                    }
                })
                .collect();
            Tensor::new([1, 1, mask.height(), mask.width()], data)
        }
    }
}

/// Stacks per-sample weight maps and repeats them over `channels`.
pub fn batch_weights<T: Scalar>(maps: &[Tensor<T>], channels: usize) -> Result<Tensor<T>> {
    let reps: Vec<Tensor<T>> = maps.iter().map(|m| m.repeat_channels(channels)).collect();
    Tensor::stack(&reps)
}

/// `mean(w * |out - gt|)` over every element.
pub fn weighted_l1<T: Scalar>(g: &mut Graph<T>, out: Var, gt: Var, weights: Var) -> Result<Var> {
    let d = g.sub(out, gt)?;
    let a = g.abs(d);
    let w = g.mul(a, weights)?;
    Ok(g.mean(w))
}

/// Weighted L1 between two images in `[0, 1]`, without a graph.
pub fn weighted_l1_value(out: &[f64], gt: &[f64], weights: &[f64]) -> Result<f64> {
    if out.len() != gt.len() || out.len() != weights.len() || out.is_empty() {
        return Err(Error::Shape("weighted_l1_value operands differ in length".into()));
    }
    Ok(out.iter().zip(gt).zip(weights).map(|((o, t), w)| w * (o - t).abs()).sum::<f64>() / out.len() as f64)
}

/// Discriminator and generator cross-entropy losses on patch logits.
/// `loss_d` sees the fake through a detached copy so it only trains D.
pub struct Adversarial {
    pub loss_d: Var,
    pub loss_g: Var,
}

pub fn adversarial_losses<T: Scalar>(
    g: &mut Graph<T>,
    d: &Discriminator,
    dp: &Bound,
    cond: Var,
    real: Var,
    fake: Var,
) -> Result<Adversarial> {
    let real_logits = d.forward(g, dp, cond, real)?;
    let fake_const = g.detach(fake);
    let fake_logits_d = d.forward(g, dp, cond, fake_const)?;
    let lr = g.bce_with_logits(real_logits, 1.0, LOGIT_CLIP);
    let lf = g.bce_with_logits(fake_logits_d, 0.0, LOGIT_CLIP);
    let sum = g.add(lr, lf)?;
    let loss_d = g.scale(sum, 0.5);
    let fake_logits_g = d.forward(g, dp, cond, fake)?;
    let loss_g = g.bce_with_logits(fake_logits_g, 1.0, LOGIT_CLIP);
    Ok(Adversarial { loss_d, loss_g })
}

/// Sum over the first three feature stages of the mean squared feature
/// difference.
pub fn perceptual_distance<T: Scalar>(g: &mut Graph<T>, net: &PerceptualNet, np: &Bound, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::Shape(format!("perceptual_distance {:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    let fa = net.features(g, np, a, PERCEPTUAL_STAGES)?;
    let fb = net.features(g, np, b, PERCEPTUAL_STAGES)?;
    let mut total: Option<Var> = None;
    for (x, y) in fa.into_iter().zip(fb) {
        let d = g.sub(x, y)?;
        let s = g.square(d);
        let m = g.mean(s);
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("at least one stage"))
}

/// Loss terms of one generator, with the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub l1: Var,
    pub adv: Option<Var>,
    pub per: Option<Var>,
    pub total: Var,
}

/// `w_l1 * L1 + w_adv * L_adv + w_per * L_per`, omitting disabled terms.
pub fn total_loss<T: Scalar>(g: &mut Graph<T>, l1: Var, adv: Option<Var>, per: Option<Var>, cfg: &LossConfig) -> Result<GeneratorLoss> {
    let mut total = g.scale(l1, cfg.w_l1);
    if let Some(a) = adv {
        let s = g.scale(a, cfg.w_adv);
        total = g.add(total, s)?;
    }
    if let Some(p) = per {
        let s = g.scale(p, cfg.w_per);
        total = g.add(total, s)?;
    }
    Ok(GeneratorLoss { l1, adv, per, total })
}

/// Checks masks against an image extent before building weights.
pub fn check_mask(mask: &MaskImage, extent: (usize, usize)) -> Result<()> {
    check_extent(mask.extent(), extent, "loss mask")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::models::{DiscriminatorConfig, GeneratorConfig};

    #[test]
    fn hand_weighted_example() {
        // |diff| = 0.1 at four pixels weighted 1, 1.5, 2.25, 1
        let v = weighted_l1_value(&[0.1, 0.2, 0.3, 0.4], &[0.0, 0.3, 0.2, 0.5], &[1.0, 1.5, 2.25, 1.0]).unwrap();
        assert!((v - 0.14375).abs() < 1e-12);
        let mut g = Graph::<f64>::new();
        let o = g.constant(Tensor::new([1, 1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let t = g.constant(Tensor::new([1, 1, 2, 2], vec![0.0, 0.3, 0.2, 0.5]).unwrap());
        let w = g.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 1.5, 2.25, 1.0]).unwrap());
        let l = weighted_l1(&mut g, o, t, w).unwrap();
        assert!((g.value(l).item() - 0.14375).abs() < 1e-12);
    }

    #[test]
    fn weight_maps() {
        let mut mask = MaskImage::new(32, 32);
        mask.paint_disk(16.0, 16.0, 8.0, true);
        let cfg = LossConfig::default();
        let w1 = l1_weight_map::<f64>(&mask, Stage::Synthesis, &cfg).unwrap();
        assert_eq!(w1.data.iter().filter(|v| **v == 1.0).count(), mask.count());
        let w2 = l1_weight_map::<f64>(&mask, Stage::Compositing, &cfg).unwrap();
        assert_eq!(w2.data[0], 1.0);
        assert_eq!(w2.data[16 * 32 + 16], 1.5);
        assert_eq!(w2.data[16 * 32 + 8], 2.25);
        assert!(matches!(l1_weight_map::<f64>(&MaskImage::new(4, 4), Stage::Synthesis, &cfg), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn identical_images_have_zero_l1_and_perceptual() {
        let net = PerceptualNet::new();
        let mut g = Graph::<f64>::new();
        let np = g.bind(&net.params.cast(), false);
        let a = g.constant(Tensor::full([1, 3, 16, 16], 0.2));
        let b = g.constant(Tensor::full([1, 3, 16, 16], 0.2));
        let w = g.constant(Tensor::full([1, 3, 16, 16], 1.0));
        let l1 = weighted_l1(&mut g, a, b, w).unwrap();
        let p = perceptual_distance(&mut g, &net, &np, a, b).unwrap();
        assert_eq!(g.value(l1).item(), 0.0);
        assert_eq!(g.value(p).item(), 0.0);
    }

    #[test]
    fn perceptual_is_symmetric() {
        use rand::SeedableRng;
        let net = PerceptualNet::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let ta = Tensor::<f64>::randn([1, 3, 16, 16], 0.5, &mut rng);
        let tb = Tensor::<f64>::randn([1, 3, 16, 16], 0.5, &mut rng);
        let run = |x: &Tensor<f64>, y: &Tensor<f64>| {
            let mut g = Graph::<f64>::new();
            let np = g.bind(&net.params.cast(), false);
            let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
            let p = perceptual_distance(&mut g, &net, &np, a, b).unwrap();
            g.value(p).item()
        };
        let (ab, ba) = (run(&ta, &tb), run(&tb, &ta));
        assert!(ab > 0.0);
        assert!((ab - ba).abs() < 1e-12 * ab);
    }

    #[test]
    fn adversarial_closed_forms() {
        // zeroed discriminator weights give logits 0 everywhere
        let mut d = Discriminator::new(DiscriminatorConfig::for_generator(&GeneratorConfig::stage1()), 0).unwrap();
        for t in &mut d.params.tensors {
            t.data.fill(0.0);
        }
        let mut g = Graph::<f64>::new();
        let dp = g.bind(&d.params.cast(), true);
        let cond = g.constant(Tensor::full([1, 5, 32, 32], 0.3));
        let real = g.constant(Tensor::full([1, 3, 32, 32], 0.5));
        let fake = g.leaf(Tensor::full([1, 3, 32, 32], -0.5), true);
        let adv = adversarial_losses(&mut g, &d, &dp, cond, real, fake).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((g.value(adv.loss_d).item() - ln2).abs() < 1e-12);
        assert!((g.value(adv.loss_g).item() - ln2).abs() < 1e-12);
        // total with identical images: only the adversarial term remains
        let w = g.constant(Tensor::full([1, 3, 32, 32], 1.0));
        let l1 = weighted_l1(&mut g, real, real, w).unwrap();
        let t = total_loss(&mut g, l1, Some(adv.loss_g), None, &LossConfig::default()).unwrap();
        assert!((g.value(t.total).item() - ln2).abs() < 1e-12);
    }

    #[test]
    fn saturated_discriminator() {
        let mut g = Graph::<f64>::new();
        let real = g.constant(Tensor::full([1, 1, 4, 4], 1e6));
        let fake = g.constant(Tensor::full([1, 1, 4, 4], -1e6));
        let lr = g.bce_with_logits(real, 1.0, LOGIT_CLIP);
        let lf = g.bce_with_logits(fake, 0.0, LOGIT_CLIP);
        let lg = g.bce_with_logits(fake, 1.0, LOGIT_CLIP);
        assert!(g.value(lr).item() < 1e-12 && g.value(lf).item() < 1e-12);
        assert!((g.value(lg).item() - 30.0).abs() < 1e-9);
    }
}
