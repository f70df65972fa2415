//! Ablation harness: trains each architecture/training variant under the
//! same budget and scores it on held-out photos.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::{run_epochs, single_step, Feed, Trainee};
use super::{PipelineState, Prepared, TrainingConfig, SINGLE_CHANNELS};
use crate::error::Result;
use crate::imagecore::RasterImage;
use crate::metrics::{evaluate, MetricReport, MetricRow};
use crate::neuralnet::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, PerceptualNet};
use crate::synthdata::DatasetSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// One plain U-Net from all inputs to the composited image, L1 + GAN.
    Baseline,
    /// One network with the full loss and refinement head.
    SingleNetwork,
    NoGan,
    NoPerceptual,
    /// All phases on photos only.
    NoSynthetic,
    /// All phases on procedural data only.
    SyntheticOnly,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::SingleNetwork,
        Variant::NoGan,
        Variant::NoPerceptual,
        Variant::NoSynthetic,
        Variant::SyntheticOnly,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::SingleNetwork => "single network",
            Variant::NoGan => "w/o GAN",
            Variant::NoPerceptual => "w/o perceptual",
            Variant::NoSynthetic => "w/o synthetic",
            Variant::SyntheticOnly => "only synthetic",
            Variant::Full => "full",
        }
    }
}

pub struct AblationData<'a> {
    pub synthetic: &'a [DatasetSample],
    pub real: &'a [DatasetSample],
    pub eval: &'a [DatasetSample],
}

pub struct AblationOutcome {
    pub report: MetricReport,
    /// Per-image and pooled rows of an untrained two-stage pipeline.
    pub untrained: (MetricRow, MetricRow),
    /// Training seconds per variant.
    pub seconds: Vec<(Variant, f64)>,
}

struct SingleModel {
    gen: Generator,
    disc: Discriminator,
}

impl SingleModel {
    fn new(cfg: &TrainingConfig, baseline: bool) -> Result<Self> {
        let gc = GeneratorConfig {
            in_channels: SINGLE_CHANNELS,
            base_width: cfg.base_width,
            depth: cfg.depth,
            final_conv: !baseline,
            input_skip: !baseline,
        };
        Ok(Self {
            gen: Generator::new(gc, cfg.seed ^ 0x51)?,
            disc: Discriminator::new(DiscriminatorConfig::for_generator(&gc), cfg.seed ^ 0x52)?,
        })
    }

    /// Procedural epochs of both stages, then photo epochs of refinement and
    /// end-to-end training, so the step budget matches the two-stage run.
    fn train(&mut self, cfg: &TrainingConfig, synthetic: &[Prepared], real: &[Prepared]) -> Result<()> {
        let per = PerceptualNet::new();
        let mut log = Vec::new();
        let phases = [
            (&cfg.stage1, synthetic, 21),
            (&cfg.stage2, synthetic, 22),
            (&cfg.refine, real, 23),
            (&cfg.end_to_end, real, 24),
        ];
        for (sched, data, tag) in phases {
            if sched.epochs == 0 {
                continue;
            }
            let mut t = Trainee::new(&mut self.gen, &mut self.disc, sched);
            run_epochs("single", sched, cfg.batch, data, cfg.seed ^ tag, &mut log, |b, lr| {
                t.set_lr(lr);
                Ok(vec![single_step(&mut t, Feed::Single, None, b, &per, &cfg.loss)?])
            })?;
        }
        Ok(())
    }

    fn predict(&self, s: &DatasetSample, cfg: &TrainingConfig) -> Result<RasterImage> {
        let p = Prepared::from_sample(s, &cfg.loss)?;
        Ok(self.gen.infer(&p.x_single)?.to_image(0))
    }
}

fn variant_config(base: &TrainingConfig, v: Variant) -> TrainingConfig {
    let mut cfg = base.clone();
    match v {
        Variant::NoGan => cfg.loss.use_adv = false,
        Variant::NoPerceptual => cfg.loss.use_per = false,
        Variant::Baseline => {
            cfg.loss.use_per = false;
            cfg.loss.mask_gain = 1.0;
            cfg.loss.boundary_gain = 1.0;
        }
        _ => {}
    }
    cfg
}

fn train_two_stage(cfg: TrainingConfig, first: &[DatasetSample], second: &[DatasetSample]) -> Result<PipelineState> {
    let mut s = PipelineState::new(cfg)?;
    s.pretrain(first)?;
    if s.cfg.refine.epochs > 0 {
        s.refine_real(second)?;
    }
    s.train_end_to_end(second)?;
    Ok(s)
}

fn gt(s: &DatasetSample) -> &RasterImage {
    &s.image
}

/// Trains and scores `variants` on `data.eval`.
pub fn ablation_variants(base: &TrainingConfig, data: &AblationData<'_>, variants: &[Variant]) -> Result<AblationOutcome> {
    let net = PerceptualNet::new();
    let mut report = MetricReport::new(base.seed, data.eval.len());
    let mut seconds = Vec::new();
    for &v in variants {
        let cfg = variant_config(base, v);
        let start = Instant::now();
        log::info!("ablation: training {}", v.label());
        let pair = match v {
            Variant::Baseline | Variant::SingleNetwork => {
                let prep = |d: &[DatasetSample]| d.iter().map(|s| Prepared::from_sample(s, &cfg.loss)).collect::<Result<Vec<_>>>();
                let mut m = SingleModel::new(&cfg, v == Variant::Baseline)?;
                m.train(&cfg, &prep(data.synthetic)?, &prep(data.real)?)?;
                seconds.push((v, start.elapsed().as_secs_f64()));
                evaluate(v.label(), &net, data.eval, gt, |s| m.predict(s, &cfg))?
            }
            _ => {
                let (first, second) = match v {
                    Variant::NoSynthetic => (data.real, data.real),
                    Variant::SyntheticOnly => (data.synthetic, data.synthetic),
                    _ => (data.synthetic, data.real),
                };
                let s = train_two_stage(cfg, first, second)?;
                seconds.push((v, start.elapsed().as_secs_f64()));
                evaluate(v.label(), &net, data.eval, gt, |x| Ok(s.synthesize(&x.image, &x.mask, &x.strokes)?))?
            }
        };
        log::info!("ablation: {} l1 {:.4} fid {:.4}", v.label(), pair.0.l1, pair.0.fid_proxy);
        report.push(pair);
    }
    let untrained = PipelineState::new(base.clone())?;
    let untrained = evaluate("untrained", &net, data.eval, gt, |x| {
        Ok(untrained.synthesize_unchecked(&x.image, &x.mask, &x.strokes)?.image)
    })?;
    Ok(AblationOutcome {
        report,
        untrained,
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Averaging;
    use crate::pipeline::Schedule;
    use crate::synthdata::{generate_samples, AnnotationConfig, Domain};

    #[test]
    fn report_layout() {
        let cfg = TrainingConfig {
            size: 32,
            base_width: 4,
            depth: 3,
            batch: 2,
            stage1: Schedule::stage(1),
            stage2: Schedule::stage(1),
            refine: Schedule::stage(0),
            end_to_end: Schedule::end_to_end(1),
            init: Schedule::stage(1),
            ..TrainingConfig::desk()
        };
        let a = AnnotationConfig::default();
        let syn = generate_samples(2, 32, 1, Domain::Synthetic, &a).unwrap();
        let real = generate_samples(2, 32, 2, Domain::Shifted, &a).unwrap();
        let eval = generate_samples(2, 32, 3, Domain::Shifted, &a).unwrap();
        let out = ablation_variants(&cfg, &AblationData { synthetic: &syn, real: &real, eval: &eval }, &Variant::ALL).unwrap();
        assert_eq!(out.report.table_shape(), (7, 6));
        assert_eq!(out.report.rows_with(Averaging::Pooled).len(), 7);
        let labels: Vec<&str> = out.report.rows_with(Averaging::PerImage).iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(labels, Variant::ALL.map(Variant::label));
        assert!(out.report.to_csv().lines().all(|l| l.ends_with(&format!(",{}", cfg.seed)) || l.starts_with("variant")));
    }
}
