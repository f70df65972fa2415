//! The two-stage synthesis pipeline: stroke-conditioned hair synthesis
//! followed by refinement and compositing into the photo, the stroke-free
//! initialization network, and the phased training procedure.

pub mod ablation;
mod config;
mod data;
pub mod eval;
mod ledger;
mod train;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{Schedule, TrainingConfig};
pub use data::{
    fill_strokes, masked_photo, region_mean, stage1_input, stage2_context, Batch, Prepared, SINGLE_CHANNELS,
    STAGE1_CHANNELS, STAGE2_CHANNELS,
};
pub use ledger::RunLedger;
pub use train::{objective, LossRecord, Objective};

use crate::error::{Error, Result};
use crate::imagecore::{check_extent, MaskImage, RasterImage};
use crate::neuralnet::{Adam, Checkpoint, Discriminator, DiscriminatorConfig, Generator, PerceptualNet, Tensor};
use crate::strokes::{rasterize_strokes, StrokeSet};
use crate::synthdata::DatasetSample;
use train::{joint_step, run_epochs, single_step, Feed, Trainee};

/// Training phases, in the only order they may run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Untrained,
    /// Stage 1 trained on procedural data.
    Stage1,
    /// Both stages trained separately on procedural data.
    PretrainSynthetic,
    /// Stage 1 fine-tuned on photos.
    RefineReal,
    EndToEnd,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Untrained => "untrained",
            Phase::Stage1 => "stage1",
            Phase::PretrainSynthetic => "pretrain-synthetic",
            Phase::RefineReal => "refine-real",
            Phase::EndToEnd => "end-to-end",
        };
        f.write_str(s)
    }
}

/// Completed phase with the parameter digest it left behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub steps: usize,
    pub digest: String,
}

/// Wall-clock milliseconds per stage of one synthesis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub prepare_ms: f64,
    pub stage1_ms: f64,
    pub stage2_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub image: RasterImage,
    /// Raw stage-1 output.
    pub stage1: RasterImage,
    pub timings: StageTimings,
}

/// Serialized part of the state other than tensors.
#[derive(Serialize, Deserialize)]
struct StateHeader {
    cfg: TrainingConfig,
    phase: Phase,
    init_trained: bool,
    history: Vec<PhaseRecord>,
    optimizers: Vec<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    name: String,
    cfg: crate::neuralnet::AdamConfig,
    t: u64,
}

const NETS: [&str; 6] = ["g1", "d1", "g2", "d2", "ig1", "id1"];

/// Networks, training phase and optimizer state of a pipeline.
#[derive(Clone, Debug)]
pub struct PipelineState {
    pub cfg: TrainingConfig,
    pub g1: Generator,
    pub d1: Discriminator,
    pub g2: Generator,
    pub d2: Discriminator,
    /// Stroke-free stage 1 used for initialization; stage 2 is shared since
    /// its inputs carry no strokes.
    pub init_g1: Generator,
    pub init_d1: Discriminator,
    pub phase: Phase,
    pub init_trained: bool,
    pub history: Vec<PhaseRecord>,
    /// Optimizers of the most recent phase, by network name.
    pub optimizers: Vec<(String, Adam<f32>)>,
    /// Loss curve of every phase run in this process.
    pub log: Vec<LossRecord>,
    perceptual: PerceptualNet,
}

impl PipelineState {
    pub fn new(cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let (c1, c2) = (cfg.stage1_generator(), cfg.stage2_generator());
        let s = cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d);
        Ok(Self {
            g1: Generator::new(c1, s ^ 1)?,
            d1: Discriminator::new(DiscriminatorConfig::for_generator(&c1), s ^ 2)?,
            g2: Generator::new(c2, s ^ 3)?,
            d2: Discriminator::new(DiscriminatorConfig::for_generator(&c2), s ^ 4)?,
            init_g1: Generator::new(c1, s ^ 5)?,
            init_d1: Discriminator::new(DiscriminatorConfig::for_generator(&c1), s ^ 6)?,
            phase: Phase::Untrained,
            init_trained: false,
            history: Vec::new(),
            optimizers: Vec::new(),
            log: Vec::new(),
            perceptual: PerceptualNet::new(),
            cfg,
        })
    }

    pub fn perceptual_net(&self) -> &PerceptualNet {
        &self.perceptual
    }

    fn nets(&self) -> [(&str, &crate::neuralnet::ParamSet); 6] {
        [
            ("g1", &self.g1.params),
            ("d1", &self.d1.params),
            ("g2", &self.g2.params),
            ("d2", &self.d2.params),
            ("ig1", &self.init_g1.params),
            ("id1", &self.init_d1.params),
        ]
    }

    /// SHA-256 over every parameter tensor, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.nets() {
            h.update(name.as_bytes());
            for t in &p.tensors {
                for d in t.shape {
                    h.update((d as u32).to_le_bytes());
                }
                for v in &t.data {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Refuses to continue unless `required` has been reached and the
    /// parameters still match the digest recorded when the last phase ended.
    fn require(&self, required: Phase, next: Phase) -> Result<()> {
        if self.phase < required || self.phase >= next {
            return Err(Error::PhaseViolation(format!("{next} needs phase {required} (currently {})", self.phase)));
        }
        if let Some(last) = self.history.last() {
            if last.digest != self.digest() {
                return Err(Error::PhaseViolation(format!("parameters changed since phase {} ended", last.phase)));
            }
        }
        Ok(())
    }

    fn finish(&mut self, phase: Phase, steps: usize) {
        self.phase = phase;
        let digest = self.digest();
        log::info!("phase {phase} finished after {steps} steps, digest {}", &digest[..12]);
        self.history.push(PhaseRecord { phase, steps, digest });
    }

    fn prepare(&self, data: &[DatasetSample]) -> Result<Vec<Prepared>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("training set is empty"));
        }
        data.iter()
            .map(|s| {
                check_extent(s.image.extent(), (self.cfg.size, self.cfg.size), "training sample")?;
                Prepared::from_sample(s, &self.cfg.loss)
            })
            .collect()
    }

    fn phase_seed(&self, tag: u64) -> u64 {
        self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag
    }

    /// Stage 1 alone, L1 restricted to the mask.
    pub fn train_stage1(&mut self, data: &[DatasetSample]) -> Result<()> {
        self.require(Phase::Untrained, Phase::Stage1)?;
        let prepared = self.prepare(data)?;
        let sched = self.cfg.stage1.clone();
        let steps = self.fit_single("stage1", Feed::Stage1, &sched, &prepared, 11)?;
        self.finish(Phase::Stage1, steps);
        Ok(())
    }

    /// Stage 2 alone on frozen stage-1 outputs.
    pub fn train_stage2(&mut self, data: &[DatasetSample]) -> Result<()> {
        self.require(Phase::Stage1, Phase::PretrainSynthetic)?;
        let prepared = self.prepare(data)?;
        let sched = self.cfg.stage2.clone();
        let steps = self.fit_single("stage2", Feed::Stage2, &sched, &prepared, 12)?;
        self.finish(Phase::PretrainSynthetic, steps);
        Ok(())
    }

    /// Both stages separately on procedural data.
    pub fn pretrain(&mut self, synthetic: &[DatasetSample]) -> Result<()> {
        self.train_stage1(synthetic)?;
        self.train_stage2(synthetic)
    }

    /// Fine-tunes stage 1 on photos.
    pub fn refine_real(&mut self, real: &[DatasetSample]) -> Result<()> {
        self.require(Phase::PretrainSynthetic, Phase::RefineReal)?;
        let prepared = self.prepare(real)?;
        let sched = self.cfg.refine.clone();
        let steps = self.fit_single("refine", Feed::Stage1, &sched, &prepared, 13)?;
        self.finish(Phase::RefineReal, steps);
        Ok(())
    }

    /// Joint training of both stages with both objectives.
    pub fn train_end_to_end(&mut self, real: &[DatasetSample]) -> Result<()> {
        self.require(Phase::PretrainSynthetic, Phase::EndToEnd)?;
        let prepared = self.prepare(real)?;
        let sched = self.cfg.end_to_end.clone();
        let seed = self.phase_seed(14);
        let (loss, batch) = (self.cfg.loss, self.cfg.batch);
        let (stage1_loss, update_d1) = (self.cfg.e2e_stage1_loss, self.cfg.retrain_d1);
        let mut log = std::mem::take(&mut self.log);
        let per = self.perceptual.clone();
        let mut s1 = Trainee::new(&mut self.g1, &mut self.d1, &sched);
        let mut s2 = Trainee::new(&mut self.g2, &mut self.d2, &sched);
        let steps = run_epochs("end-to-end", &sched, batch, &prepared, seed, &mut log, |b, lr| {
            s1.set_lr(lr);
            s2.set_lr(lr);
            Ok(joint_step(&mut s1, &mut s2, b, &per, &loss, stage1_loss, update_d1)?.to_vec())
        });
        let opts = vec![
            ("g1".to_string(), s1.opt_g),
            ("d1".to_string(), s1.opt_d),
            ("g2".to_string(), s2.opt_g),
            ("d2".to_string(), s2.opt_d),
        ];
        self.log = log;
        let steps = steps?;
        self.optimizers = opts;
        self.finish(Phase::EndToEnd, steps);
        Ok(())
    }

    /// Stroke-free stage 1 conditioned on a flat mean-colour fill.
    pub fn train_init(&mut self, data: &[DatasetSample]) -> Result<()> {
        let prepared = self.prepare(data)?;
        let sched = self.cfg.init.clone();
        self.fit_single("init", Feed::Init, &sched, &prepared, 15)?;
        self.init_trained = true;
        Ok(())
    }

    /// The whole procedure: procedural pretraining of both stages, stage-1
    /// refinement on photos, end-to-end training on photos, and the
    /// initialization network on procedural data.
    pub fn train_all(&mut self, synthetic: &[DatasetSample], real: &[DatasetSample]) -> Result<()> {
        self.pretrain(synthetic)?;
        if self.cfg.refine.epochs > 0 {
            self.refine_real(real)?;
        }
        self.train_end_to_end(real)?;
        self.train_init(synthetic)
    }

    fn fit_single(&mut self, phase: &str, feed: Feed, sched: &Schedule, data: &[Prepared], tag: u64) -> Result<usize> {
        let seed = self.phase_seed(tag);
        let (loss, batch) = (self.cfg.loss, self.cfg.batch);
        let mut log = std::mem::take(&mut self.log);
        let per = self.perceptual.clone();
        let (gen, disc, frozen, names) = match feed {
            Feed::Stage1 => (&mut self.g1, &mut self.d1, None, ("g1", "d1")),
            Feed::Init => (&mut self.init_g1, &mut self.init_d1, None, ("ig1", "id1")),
            Feed::Stage2 => (&mut self.g2, &mut self.d2, Some(&self.g1), ("g2", "d2")),
            Feed::Single => unreachable!("single-network variants train outside the pipeline state"),
        };
        let mut t = Trainee::new(gen, disc, sched);
        let steps = run_epochs(phase, sched, batch, data, seed, &mut log, |b, lr| {
            t.set_lr(lr);
            Ok(vec![single_step(&mut t, feed, frozen, b, &per, &loss)?])
        });
        let opts = vec![(names.0.to_string(), t.opt_g), (names.1.to_string(), t.opt_d)];
        self.log = log;
        let steps = steps?;
        self.optimizers = opts;
        Ok(steps)
    }

    fn check_inputs(&self, image: &RasterImage, mask: &MaskImage) -> Result<()> {
        check_extent(image.extent(), mask.extent(), "synthesis inputs")?;
        if mask.is_empty() {
            return Err(Error::EmptyMask("nothing to synthesize"));
        }
        self.g1.check_input([1, STAGE1_CHANNELS, image.height(), image.width()])
    }

    fn run(&self, g1: &Generator, x1: Tensor<f32>, image: &RasterImage, mask: &MaskImage, start: Instant) -> Result<Synthesis> {
        let prepare_ms = start.elapsed().as_secs_f64() * 1e3;
        let y1 = g1.infer(&x1)?;
        let t1 = start.elapsed().as_secs_f64() * 1e3;
        let x2 = Tensor::concat(&y1, &stage2_context(image, mask)?)?;
        let y2 = self.g2.infer(&x2)?;
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Synthesis {
            image: y2.to_image(0),
            stage1: y1.to_image(0),
            timings: StageTimings {
                prepare_ms,
                stage1_ms: t1 - prepare_ms,
                stage2_ms: total_ms - t1,
                total_ms,
            },
        })
    }

    /// Hair synthesized from `strokes` inside `mask` and composited into
    /// `image`, with per-stage timings.
    pub fn synthesize_timed(&self, image: &RasterImage, mask: &MaskImage, strokes: &StrokeSet) -> Result<Synthesis> {
        if self.phase < Phase::PretrainSynthetic {
            return Err(Error::Untrained("synthesis needs both stages trained"));
        }
        self.synthesize_unchecked(image, mask, strokes)
    }

    pub(crate) fn synthesize_unchecked(&self, image: &RasterImage, mask: &MaskImage, strokes: &StrokeSet) -> Result<Synthesis> {
        let start = Instant::now();
        self.check_inputs(image, mask)?;
        let x1 = stage1_input(mask, &rasterize_strokes(strokes, mask)?)?;
        self.run(&self.g1, x1, image, mask, start)
    }

    pub fn synthesize(&self, image: &RasterImage, mask: &MaskImage, strokes: &StrokeSet) -> Result<RasterImage> {
        Ok(self.synthesize_timed(image, mask, strokes)?.image)
    }

    /// Conditional inpainting from the mask and a single colour.
    pub fn synthesize_init_timed(&self, image: &RasterImage, mask: &MaskImage, mean_color: [f32; 3]) -> Result<Synthesis> {
        if !self.init_trained || self.phase < Phase::PretrainSynthetic {
            return Err(Error::Untrained("initialization needs the init network and stage 2 trained"));
        }
        let start = Instant::now();
        self.check_inputs(image, mask)?;
        let x1 = stage1_input(mask, &fill_strokes(mask, mean_color))?;
        self.run(&self.init_g1, x1, image, mask, start)
    }

    pub fn synthesize_init(&self, image: &RasterImage, mask: &MaskImage, mean_color: [f32; 3]) -> Result<RasterImage> {
        Ok(self.synthesize_init_timed(image, mask, mean_color)?.image)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = StateHeader {
            cfg: self.cfg.clone(),
            phase: self.phase,
            init_trained: self.init_trained,
            history: self.history.clone(),
            optimizers: self
                .optimizers
                .iter()
                .map(|(n, a)| OptimizerHeader {
                    name: n.clone(),
                    cfg: a.cfg,
                    t: a.t,
                })
                .collect(),
        };
        let mut ck = Checkpoint::new(serde_json::to_string(&header).expect("header serializes"));
        for (net, p) in self.nets() {
            for (name, t) in p.names.iter().zip(&p.tensors) {
                ck.push(format!("{net}.{name}"), t.clone());
            }
        }
        for (net, opt) in &self.optimizers {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ck.push(format!("opt.{net}.m.{i}"), m.clone());
                ck.push(format!("opt.{net}.v.{i}"), v.clone());
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let header: StateHeader = serde_json::from_str(&ck.config)?;
        let mut s = Self::new(header.cfg)?;
        for net in NETS {
            let group = ck.group(net);
            let params = match net {
                "g1" => &mut s.g1.params,
                "d1" => &mut s.d1.params,
                "g2" => &mut s.g2.params,
                "d2" => &mut s.d2.params,
                "ig1" => &mut s.init_g1.params,
                _ => &mut s.init_d1.params,
            };
            if group.len() != params.tensors.len() {
                return Err(Error::Shape(format!("checkpoint has {} tensors for {net}, expected {}", group.len(), params.tensors.len())));
            }
            for ((name, t), (want, slot)) in group.into_iter().zip(params.names.iter().zip(params.tensors.iter_mut())) {
                if name != want || t.shape != slot.shape {
                    return Err(Error::Shape(format!("checkpoint tensor {net}.{name} {:?} does not fit {want} {:?}", t.shape, slot.shape)));
                }
                *slot = t.clone();
            }
        }
        for oh in header.optimizers {
            let shapes: Vec<Tensor<f32>> = match oh.name.as_str() {
                "g1" => s.g1.params.tensors.clone(),
                "d1" => s.d1.params.tensors.clone(),
                "g2" => s.g2.params.tensors.clone(),
                "d2" => s.d2.params.tensors.clone(),
                "ig1" => s.init_g1.params.tensors.clone(),
                "id1" => s.init_d1.params.tensors.clone(),
                other => return Err(Error::Shape(format!("unknown optimizer {other}"))),
            };
            let mut opt = Adam::new(oh.cfg, &shapes);
            opt.t = oh.t;
            for i in 0..shapes.len() {
                let get = |k: &str| {
                    ck.get(&format!("opt.{}.{k}.{i}", oh.name))
                        .cloned()
                        .ok_or_else(|| Error::Shape(format!("missing optimizer state {}.{k}.{i}", oh.name)))
                };
                opt.m[i] = get("m")?;
                opt.v[i] = get("v")?;
            }
            s.optimizers.push((oh.name, opt));
        }
        s.phase = header.phase;
        s.init_trained = header.init_trained;
        s.history = header.history;
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
