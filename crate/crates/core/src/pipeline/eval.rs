//! Held-out measurements of a trained pipeline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{objective, region_mean, PipelineState, Prepared};
use crate::error::{Error, Result};
use crate::imagecore::dilate;
use crate::neuralnet::loss::Stage;
use crate::neuralnet::{Graph, Tensor};
use crate::synthdata::DatasetSample;

fn nonempty<T>(s: &[T]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptyDataset("evaluation set is empty"));
    }
    Ok(())
}

/// Mean absolute stage-1 error over mask pixels, in `[0, 1]` units, of the
/// stroke-driven generator or (with `init`) the initialization generator.
pub fn stage1_masked_l1(state: &PipelineState, samples: &[DatasetSample], init: bool) -> Result<f64> {
    nonempty(samples)?;
    let g1 = if init { &state.init_g1 } else { &state.g1 };
    let mut total = 0.0;
    for s in samples {
        let p = Prepared::from_sample(s, &state.cfg.loss)?;
        let out = g1.infer(if init { &p.x1_init } else { &p.x1 })?;
        let (mut err, mut n) = (0.0f64, 0.0f64);
        for ((o, t), w) in out.data.iter().zip(&p.t1.data).zip(&p.w1.data) {
            err += (*w * (o - t).abs()) as f64;
            n += *w as f64;
        }
        total += err / n / 2.0;
    }
    Ok(total / samples.len() as f64)
}

/// Mean absolute difference between output and photo outside the dilated
/// mask, averaged over samples.
pub fn compositing_deviation(state: &PipelineState, samples: &[DatasetSample]) -> Result<f64> {
    nonempty(samples)?;
    let mut total = 0.0;
    for s in samples {
        let out = state.synthesize(&s.image, &s.mask, &s.strokes)?;
        let outside = dilate(&s.mask, state.cfg.loss.morph_k)?.not();
        let rgb = s.image.to_rgb();
        let (mut err, mut n) = (0.0f64, 0usize);
        for y in 0..rgb.height() {
            for x in 0..rgb.width() {
                if outside.get(x, y) {
                    for c in 0..3 {
                        err += (out.get(x, y, c) - rgb.get(x, y, c)).abs() as f64;
                    }
                    n += 3;
                }
            }
        }
        total += if n == 0 { 0.0 } else { err / n as f64 };
    }
    Ok(total / samples.len() as f64)
}

/// Mean absolute full-image error of the two-stage output.
pub fn full_image_l1(state: &PipelineState, samples: &[DatasetSample]) -> Result<f64> {
    nonempty(samples)?;
    let mut total = 0.0;
    for s in samples {
        let out = state.synthesize(&s.image, &s.mask, &s.strokes)?;
        total += crate::metrics::l1(&out, &s.image.to_rgb())?;
    }
    Ok(total / samples.len() as f64)
}

/// For each sample, the largest per-channel gap between the conditioning
/// colour (the true hair mean) and the mean of the synthesized region.
pub fn init_color_errors(state: &PipelineState, samples: &[DatasetSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let cond = region_mean(&s.image, &s.mask)?;
            let out = state.synthesize_init(&s.image, &s.mask, cond)?;
            let got = region_mean(&out, &s.mask)?;
            Ok(cond.iter().zip(got).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max))
        })
        .collect()
}

/// Gradient of the complete stage-1 objective with respect to the generator
/// output, split by mask membership.
#[derive(Clone, Copy, Debug)]
pub struct MaskProbe {
    /// Largest |gradient| outside the mask (expected exactly 0).
    pub max_grad_outside: f64,
    pub max_grad_inside: f64,
    /// Largest loss change from perturbing single outside pixels.
    pub max_outside_change: f64,
    /// Loss change from perturbing one inside pixel.
    pub inside_change: f64,
}

/// Probes the stage-1 objective (weighted L1, adversarial and perceptual
/// terms) in double precision on one sample.
pub fn stage1_mask_probe(state: &PipelineState, sample: &DatasetSample, seed: u64) -> Result<MaskProbe> {
    let p = Prepared::from_sample(sample, &state.cfg.loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Tensor<f64> = Tensor::randn(p.t1.shape, 0.5, &mut rng);
    let d_params = state.d1.params.cast::<f64>();
    let p_params = state.perceptual_net().params.cast::<f64>();
    let eval = |out: &Tensor<f64>, grad: bool| -> Result<(f64, Option<Tensor<f64>>)> {
        let mut g = Graph::<f64>::new();
        let dp = g.bind(&d_params, false);
        let pp = g.bind(&p_params, false);
        let o = g.leaf(out.clone(), grad);
        let x = g.constant(p.x1.cast());
        let t = g.constant(p.t1.cast());
        let w = g.constant(p.w1.cast());
        let obj = objective(&mut g, Stage::Synthesis, x, o, t, w, Some((&state.d1, &dp)), Some((state.perceptual_net(), &pp)), &state.cfg.loss)?;
        let v = g.value(obj.total).item();
        if grad {
            g.backward(obj.total)?;
            return Ok((v, g.grad(o).cloned()));
        }
        Ok((v, None))
    };
    let (base, grad) = eval(&start, true)?;
    let grad = grad.ok_or(Error::NonFinite("probe gradient"))?;
    let plane = sample.mask.width() * sample.mask.height();
    let (mut out_max, mut in_max) = (0.0f64, 0.0f64);
    for (i, gv) in grad.data.iter().enumerate() {
        if sample.mask.bits()[i % plane] {
            in_max = in_max.max(gv.abs());
        } else {
            out_max = out_max.max(gv.abs());
        }
    }
    let outside: Vec<usize> = (0..plane).filter(|i| !sample.mask.bits()[*i]).collect();
    let inside = (0..plane).find(|i| sample.mask.bits()[*i]).ok_or(Error::EmptyMask("probe sample"))?;
    let mut max_change = 0.0f64;
    for &i in outside.iter().step_by((outside.len() / 8).max(1)).take(8) {
        let mut t = start.clone();
        t.data[i] += 0.25;
        max_change = max_change.max((eval(&t, false)?.0 - base).abs());
    }
    let mut t = start.clone();
    t.data[inside] += 0.25;
    let inside_change = (eval(&t, false)?.0 - base).abs();
    Ok(MaskProbe {
        max_grad_outside: out_max,
        max_grad_inside: in_max,
        max_outside_change: max_change,
        inside_change,
    })
}

/// Norm of the stage-1 generator gradient produced by the stage-2 objective
/// alone, on one batch.
pub fn stage2_to_stage1_gradient(state: &PipelineState, samples: &[DatasetSample]) -> Result<f64> {
    nonempty(samples)?;
    let prepared: Vec<Prepared> = samples.iter().map(|s| Prepared::from_sample(s, &state.cfg.loss)).collect::<Result<_>>()?;
    let batch = super::Batch::new(&prepared.iter().collect::<Vec<_>>())?;
    let mut g = Graph::<f32>::new();
    let g1p = g.bind(&state.g1.params.tensors, true);
    let g2p = g.bind(&state.g2.params.tensors, false);
    let d2p = g.bind(&state.d2.params.tensors, false);
    let pp = g.bind(&state.perceptual_net().params.tensors, false);
    let x1 = g.constant(batch.x1.clone());
    let out1 = state.g1.forward(&mut g, &g1p, x1)?;
    let ctx = g.constant(batch.ctx2.clone());
    let x2 = g.concat(out1, ctx)?;
    let out2 = state.g2.forward(&mut g, &g2p, x2)?;
    let (t2, w2) = (g.constant(batch.t2.clone()), g.constant(batch.w2.clone()));
    let o2 = objective(&mut g, Stage::Compositing, x2, out2, t2, w2, Some((&state.d2, &d2p)), Some((state.perceptual_net(), &pp)), &state.cfg.loss)?;
    g.backward(o2.total)?;
    Ok(g.grads_of(&g1p).iter().flat_map(|t| t.data.iter()).map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt())
}
