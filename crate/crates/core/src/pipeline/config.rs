use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::loss::LossConfig;
use crate::neuralnet::{AdamConfig, GeneratorConfig};
use crate::synthdata::AnnotationConfig;

/// Learning-rate schedule of one training phase: constant `lr`, halved at
/// each fraction of the run listed in `halve_at`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr: f64,
    pub beta1: f64,
    pub epochs: usize,
    #[serde(default = "default_halvings")]
    pub halve_at: Vec<f64>,
}

fn default_halvings() -> Vec<f64> {
    vec![0.5, 0.75]
}

impl Schedule {
    /// Separate training of either stage.
    pub fn stage(epochs: usize) -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            epochs,
            halve_at: default_halvings(),
        }
    }

    pub fn end_to_end(epochs: usize) -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.75,
            epochs,
            halve_at: default_halvings(),
        }
    }

    /// Rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let progress = epoch as f64 / self.epochs.max(1) as f64;
        let halvings = self.halve_at.iter().filter(|f| progress >= **f).count();
        self.lr * 0.5f64.powi(halvings as i32)
    }

    /// Rate of the last epoch, or after all halvings for an empty run.
    pub fn final_lr(&self) -> f64 {
        if self.epochs == 0 {
            return self.lr * 0.5f64.powi(self.halve_at.len() as i32);
        }
        self.lr_at(self.epochs - 1)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.beta1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || self.halve_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument(format!("bad schedule {self:?}")));
        }
        Ok(())
    }
}

/// Everything a training run needs, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub size: usize,
    pub batch: usize,
    pub seed: u64,
    pub base_width: usize,
    pub depth: usize,
    /// Procedural training samples per domain.
    pub samples: usize,
    #[serde(default)]
    pub loss: LossConfig,
    pub stage1: Schedule,
    pub stage2: Schedule,
    /// Stage-1 fine-tuning on the photo (or shifted) domain.
    pub refine: Schedule,
    pub end_to_end: Schedule,
    /// Stroke-free initialization network.
    pub init: Schedule,
    /// Update the stage-1 discriminator during end-to-end training.
    #[serde(default = "yes")]
    pub retrain_d1: bool,
    /// Keep the stage-1 loss active during end-to-end training.
    #[serde(default = "yes")]
    pub e2e_stage1_loss: bool,
    #[serde(default)]
    pub annotation: AnnotationConfig,
}

fn yes() -> bool {
    true
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    /// 64 px, 200 samples per domain, five epochs per phase.
    pub fn desk() -> Self {
        Self {
            size: 64,
            batch: 4,
            seed: 7,
            base_width: 16,
            depth: 4,
            samples: 200,
            loss: LossConfig::default(),
            stage1: Schedule::stage(5),
            stage2: Schedule::stage(5),
            refine: Schedule::stage(5),
            end_to_end: Schedule::end_to_end(5),
            init: Schedule::stage(5),
            retrain_d1: true,
            e2e_stage1_loss: true,
            annotation: AnnotationConfig::default(),
        }
    }

    /// Full-resolution preset: 512 px, 50 epochs per stage, 25 on photos.
    pub fn full_scale() -> Self {
        Self {
            size: 512,
            batch: 1,
            depth: 8,
            base_width: 64,
            samples: 30_400,
            stage1: Schedule::stage(50),
            stage2: Schedule::stage(50),
            refine: Schedule::stage(25),
            end_to_end: Schedule::end_to_end(25),
            init: Schedule::stage(50),
            ..Self::desk()
        }
    }

    pub fn stage1_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_width: self.base_width,
            depth: self.depth,
            ..GeneratorConfig::stage1()
        }
    }

    pub fn stage2_generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_width: self.base_width,
            depth: self.depth,
            ..GeneratorConfig::stage2()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.samples == 0 {
            return Err(Error::InvalidArgument("batch and samples must be >= 1".into()));
        }
        if !self.size.is_power_of_two() || self.size < 1 << self.depth || self.size < 32 {
            return Err(Error::InvalidArgument(format!(
                "size {} must be a power of two >= max(32, 2^depth = {})",
                self.size,
                1usize << self.depth
            )));
        }
        self.loss.validate()?;
        self.stage1_generator().validate()?;
        for s in [&self.stage1, &self.stage2, &self.refine, &self.end_to_end, &self.init] {
            s.validate()?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format {
            path: "<config>".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }
}
