//! Loss assembly and the optimisation loop shared by every phase.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Schedule;
use super::data::{Batch, Prepared};
use crate::error::{Error, Result};
use crate::neuralnet::loss::{adversarial_losses, perceptual_distance, total_loss, weighted_l1, LossConfig, Stage};
use crate::neuralnet::{Adam, Bound, Discriminator, Generator, Graph, PerceptualNet, Scalar, Tensor, Var};

/// Graph handles of one generator objective.
#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub l1: Var,
    pub adv: Option<Var>,
    pub per: Option<Var>,
    pub total: Var,
    /// Discriminator loss, on a detached copy of the output.
    pub loss_d: Option<Var>,
}

/// Builds the weighted L1 + adversarial + perceptual objective for `out`.
///
/// In the synthesis stage every term sees the output only through the mask:
/// pixels with weight 0 are replaced by the target's fill value first, so the
/// loss is exactly independent of them.
#[allow(clippy::too_many_arguments)]
pub fn objective<T: Scalar>(
    g: &mut Graph<T>,
    stage: Stage,
    cond: Var,
    out: Var,
    target: Var,
    weights: Var,
    disc: Option<(&Discriminator, &Bound)>,
    per: Option<(&PerceptualNet, &Bound)>,
    cfg: &LossConfig,
) -> Result<Objective> {
    let out = match stage {
        Stage::Synthesis => {
            let fill = g.value(weights).data.iter().map(|w| *w - T::one()).collect();
            let fill = g.constant(Tensor::new(g.shape(weights), fill)?);
            let kept = g.mul(out, weights)?;
            g.add(kept, fill)?
        }
        Stage::Compositing => out,
    };
    let l1 = weighted_l1(g, out, target, weights)?;
    let (adv, loss_d) = match disc {
        Some((d, dp)) if cfg.use_adv => {
            let a = adversarial_losses(g, d, dp, cond, target, out)?;
            (Some(a.loss_g), Some(a.loss_d))
        }
        _ => (None, None),
    };
    let per = match per {
        Some((net, np)) if cfg.use_per => Some(perceptual_distance(g, net, np, out, target)?),
        _ => None,
    };
    let t = total_loss(g, l1, adv, per, cfg)?;
    Ok(Objective {
        l1,
        adv,
        per,
        total: t.total,
        loss_d,
    })
}

/// One row of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub phase: String,
    pub stage: u8,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub l1: f64,
    pub adv: f64,
    pub per: f64,
    pub loss_d: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "phase,stage,epoch,step,lr,l1,adv,per,loss_d,total,w_l1,w_adv,w_per";

    /// CSV row including the weighted terms, so the relative scale of each
    /// loss component can be inspected.
    pub fn csv_row(&self, cfg: &LossConfig) -> String {
        format!(
            "{},{},{},{},{:e},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.phase,
            self.stage,
            self.epoch,
            self.step,
            self.lr,
            self.l1,
            self.adv,
            self.per,
            self.loss_d,
            self.total,
            cfg.w_l1 * self.l1,
            cfg.w_adv * self.adv,
            cfg.w_per * self.per
        )
    }
}

pub(crate) fn read<T: Scalar>(g: &Graph<T>, v: Option<Var>) -> f64 {
    v.map(|v| g.value(v).item().f64()).unwrap_or(0.0)
}

/// A generator and its discriminator with their optimizers.
pub(crate) struct Trainee<'a> {
    pub gen: &'a mut Generator,
    pub disc: &'a mut Discriminator,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
}

impl<'a> Trainee<'a> {
    pub fn new(gen: &'a mut Generator, disc: &'a mut Discriminator, sched: &Schedule) -> Self {
        let opt_g = Adam::new(sched.adam(), &gen.params.tensors);
        let opt_d = Adam::new(sched.adam(), &disc.params.tensors);
        Self { gen, disc, opt_g, opt_d }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt_g.set_lr(lr);
        self.opt_d.set_lr(lr);
    }
}

/// Which tensors of a batch feed a single-generator step.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Feed {
    Stage1,
    Init,
    /// Stage 2 fed by a frozen stage-1 generator.
    Stage2,
    Single,
}

/// One update of a single generator/discriminator pair.
pub(crate) fn single_step(
    t: &mut Trainee<'_>,
    feed: Feed,
    frozen_g1: Option<&Generator>,
    batch: &Batch,
    per: &PerceptualNet,
    cfg: &LossConfig,
) -> Result<LossRecord> {
    let mut g = Graph::<f32>::new();
    let gp = g.bind(&t.gen.params.tensors, true);
    let dp = g.bind(&t.disc.params.tensors, true);
    let pp = g.bind(&per.params.tensors, false);
    let (x, target, w, stage) = match feed {
        Feed::Stage1 => (g.constant(batch.x1.clone()), &batch.t1, &batch.w1, Stage::Synthesis),
        Feed::Init => (g.constant(batch.x1_init.clone()), &batch.t1, &batch.w1, Stage::Synthesis),
        Feed::Single => (g.constant(batch.x_single.clone()), &batch.t2, &batch.w2, Stage::Compositing),
        Feed::Stage2 => {
            let g1 = frozen_g1.ok_or(Error::Untrained("stage 2 needs a stage-1 generator"))?;
            let y1 = g1.infer(&batch.x1)?;
            (g.constant(Tensor::concat(&y1, &batch.ctx2)?), &batch.t2, &batch.w2, Stage::Compositing)
        }
    };
    let y = g.constant(target.clone());
    let wv = g.constant(w.clone());
    let out = t.gen.forward(&mut g, &gp, x)?;
    let obj = objective(&mut g, stage, x, out, y, wv, Some((&*t.disc, &dp)), Some((per, &pp)), cfg)?;
    g.backward(obj.total)?;
    let grads_g = g.grads_of(&gp);
    t.opt_g.step(&mut t.gen.params.tensors, &grads_g)?;
    if let Some(ld) = obj.loss_d {
        g.backward(ld)?;
        let grads_d = g.grads_of(&dp);
        t.opt_d.step(&mut t.disc.params.tensors, &grads_d)?;
    }
    Ok(LossRecord {
        phase: String::new(),
        stage: if matches!(stage, Stage::Synthesis) { 1 } else { 2 },
        epoch: 0,
        step: 0,
        lr: t.opt_g.cfg.lr,
        l1: read(&g, Some(obj.l1)),
        adv: read(&g, obj.adv),
        per: read(&g, obj.per),
        loss_d: read(&g, obj.loss_d),
        total: read(&g, Some(obj.total)),
    })
}

/// Joint update of both stages; the stage-2 loss reaches G1 through its
/// output.
#[allow(clippy::too_many_arguments)]
pub(crate) fn joint_step(
    s1: &mut Trainee<'_>,
    s2: &mut Trainee<'_>,
    batch: &Batch,
    per: &PerceptualNet,
    cfg: &LossConfig,
    stage1_loss: bool,
    update_d1: bool,
) -> Result<[LossRecord; 2]> {
    let mut g = Graph::<f32>::new();
    let g1p = g.bind(&s1.gen.params.tensors, true);
    let g2p = g.bind(&s2.gen.params.tensors, true);
    let d1p = g.bind(&s1.disc.params.tensors, update_d1);
    let d2p = g.bind(&s2.disc.params.tensors, true);
    let pp = g.bind(&per.params.tensors, false);
    let x1 = g.constant(batch.x1.clone());
    let out1 = s1.gen.forward(&mut g, &g1p, x1)?;
    let ctx = g.constant(batch.ctx2.clone());
    let x2 = g.concat(out1, ctx)?;
    let out2 = s2.gen.forward(&mut g, &g2p, x2)?;
    let (t2, w2) = (g.constant(batch.t2.clone()), g.constant(batch.w2.clone()));
    let o2 = objective(&mut g, Stage::Compositing, x2, out2, t2, w2, Some((&*s2.disc, &d2p)), Some((per, &pp)), cfg)?;
    let o1 = if stage1_loss {
        let (t1, w1) = (g.constant(batch.t1.clone()), g.constant(batch.w1.clone()));
        Some(objective(&mut g, Stage::Synthesis, x1, out1, t1, w1, Some((&*s1.disc, &d1p)), Some((per, &pp)), cfg)?)
    } else {
        None
    };
    let total = match o1 {
        Some(o) => g.add(o.total, o2.total)?,
        None => o2.total,
    };
    g.backward(total)?;
    let (gr1, gr2) = (g.grads_of(&g1p), g.grads_of(&g2p));
    s1.opt_g.step(&mut s1.gen.params.tensors, &gr1)?;
    s2.opt_g.step(&mut s2.gen.params.tensors, &gr2)?;
    if let Some(ld2) = o2.loss_d {
        g.backward(ld2)?;
        let gr = g.grads_of(&d2p);
        s2.opt_d.step(&mut s2.disc.params.tensors, &gr)?;
    }
    if let Some(ld1) = o1.and_then(|o| o.loss_d).filter(|_| update_d1) {
        g.backward(ld1)?;
        let gr = g.grads_of(&d1p);
        s1.opt_d.step(&mut s1.disc.params.tensors, &gr)?;
    }
    let record = |stage: u8, o: &Objective, lr: f64| LossRecord {
        phase: String::new(),
        stage,
        epoch: 0,
        step: 0,
        lr,
        l1: read(&g, Some(o.l1)),
        adv: read(&g, o.adv),
        per: read(&g, o.per),
        loss_d: read(&g, o.loss_d),
        total: read(&g, Some(o.total)),
    };
    let r2 = record(2, &o2, s2.opt_g.cfg.lr);
    let r1 = match &o1 {
        Some(o) => record(1, o, s1.opt_g.cfg.lr),
        None => LossRecord { stage: 1, l1: 0.0, adv: 0.0, per: 0.0, loss_d: 0.0, total: 0.0, ..r2.clone() },
    };
    Ok([r1, r2])
}

/// Runs `sched.epochs` shuffled passes over `data`, calling `step` with each
/// minibatch and the epoch's learning rate.
pub(crate) fn run_epochs(
    phase: &str,
    sched: &Schedule,
    batch: usize,
    data: &[Prepared],
    seed: u64,
    log: &mut Vec<LossRecord>,
    mut step: impl FnMut(&Batch, f64) -> Result<Vec<LossRecord>>,
) -> Result<usize> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no training samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for epoch in 0..sched.epochs {
        order.shuffle(&mut rng);
        let lr = sched.lr_at(epoch);
        for chunk in order.chunks(batch.max(1)) {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &data[i]).collect();
            let b = Batch::new(&items)?;
            for mut r in step(&b, lr)? {
                if !r.total.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                r.phase = phase.to_string();
                r.epoch = epoch;
                r.step = steps;
                log.push(r);
            }
            steps += 1;
        }
        log::debug!("{phase}: epoch {epoch} done ({steps} steps)");
    }
    Ok(steps)
}
