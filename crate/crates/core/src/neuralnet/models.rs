use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Bound, Graph, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors of one network, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
}

impl ParamSet {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<f32>) {
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|t| t.cast()).collect()
    }
}

fn conv_weight(rng: &mut ChaCha8Rng, shape: [usize; 4], std: f64) -> Tensor<f32> {
    Tensor::randn(shape, std, rng)
}

fn width(base: usize, level: usize) -> usize {
    base << level.min(3)
}

const INIT_STD: f64 = 0.02;
const LEAK: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    /// Refining 3x3 stride-1 convolution after the decoder.
    #[serde(default = "yes")]
    pub final_conv: bool,
    /// Feed the raw input to the refining convolution alongside the decoder
    /// output (only with `final_conv`).
    #[serde(default = "yes")]
    pub input_skip: bool,
}

fn yes() -> bool {
    true
}

impl GeneratorConfig {
    pub fn stage1() -> Self {
        Self {
            in_channels: 5,
            base_width: 16,
            depth: 4,
            final_conv: true,
            input_skip: true,
        }
    }

    pub fn stage2() -> Self {
        Self {
            in_channels: 7,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument(format!("generator needs depth >= 3 and nonzero widths: {self:?}")));
        }
        Ok(())
    }
}

/// U-Net generator: stride-2 4x4 convolutions down, transposed convolutions
/// up with skip concatenation at every level, optional 3x3 refinement, tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let b = cfg.base_width;
        for l in 0..cfg.depth {
            let cin = if l == 0 { cfg.in_channels } else { width(b, l - 1) };
            let cout = width(b, l);
            p.push(format!("enc{l}.w"), conv_weight(&mut rng, [cout, cin, 4, 4], INIT_STD));
            p.push(format!("enc{l}.b"), Tensor::zeros([1, 1, 1, cout]));
        }
        for l in (0..cfg.depth).rev() {
            let cin = if l == cfg.depth - 1 { width(b, l) } else { 2 * width(b, l) };
            let cout = if l > 0 {
                width(b, l - 1)
            } else if cfg.final_conv {
                b
            } else {
                3
            };
            p.push(format!("dec{l}.w"), conv_weight(&mut rng, [cin, cout, 4, 4], INIT_STD));
            p.push(format!("dec{l}.b"), Tensor::zeros([1, 1, 1, cout]));
        }
        if cfg.final_conv {
            let cin = b + if cfg.input_skip { cfg.in_channels } else { 0 };
            p.push("final.w".into(), conv_weight(&mut rng, [3, cin, 3, 3], INIT_STD));
            p.push("final.b".into(), Tensor::zeros([1, 1, 1, 3]));
        }
        Ok(Self { cfg, params: p })
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let m = 1 << self.cfg.depth;
        if c != self.cfg.in_channels || h != w || h < m || !h.is_power_of_two() {
            return Err(Error::Shape(format!(
                "generator expects (n, {}, H, H) with H a power of two >= {m}, got {shape:?}",
                self.cfg.in_channels
            )));
        }
        Ok(())
    }

    /// Output in `[-1, 1]`, shape `(n, 3, H, W)`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let d = self.cfg.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x;
        for l in 0..d {
            h = g.conv2d(h, p.get(2 * l), Some(p.get(2 * l + 1)), 2, 1)?;
            if l > 0 && l < d - 1 {
                h = g.instance_norm(h);
            }
            h = if l == d - 1 { g.relu(h) } else { g.leaky_relu(h, LEAK) };
            skips.push(h);
        }
        for (j, l) in (0..d).rev().enumerate() {
            let base = 2 * d + 2 * j;
            if l < d - 1 {
                h = g.concat(h, skips[l])?;
            }
            h = g.conv_transpose2d(h, p.get(base), Some(p.get(base + 1)), 2, 1)?;
            if l > 0 || self.cfg.final_conv {
                h = g.instance_norm(h);
                h = g.relu(h);
            }
        }
        if self.cfg.final_conv {
            if self.cfg.input_skip {
                h = g.concat(h, x)?;
            }
            h = g.conv2d(h, p.get(4 * d), Some(p.get(4 * d + 1)), 1, 1)?;
        }
        Ok(g.tanh(h))
    }

    /// Forward pass without gradients.
    pub fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = g.bind(&self.params.tensors, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &p, xv)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Channels of the conditioning input (the generator's input).
    pub cond_channels: usize,
    pub base_width: usize,
    /// Number of stride-2 layers; the logit map is `H / 2^layers`.
    pub layers: usize,
}

impl DiscriminatorConfig {
    pub fn for_generator(g: &GeneratorConfig) -> Self {
        Self {
            cond_channels: g.in_channels,
            base_width: g.base_width,
            layers: 4,
        }
    }
}

/// Conditional PatchGAN: condition and image concatenated, `layers` stride-2
/// 4x4 convolutions, then a 3x3 convolution to one logit per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.base_width == 0 {
            return Err(Error::InvalidArgument(format!("bad discriminator config {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut cin = cfg.cond_channels + 3;
        for l in 0..cfg.layers {
            let cout = width(cfg.base_width, l);
            p.push(format!("conv{l}.w"), conv_weight(&mut rng, [cout, cin, 4, 4], INIT_STD));
            p.push(format!("conv{l}.b"), Tensor::zeros([1, 1, 1, cout]));
            cin = cout;
        }
        p.push("out.w".into(), conv_weight(&mut rng, [1, cin, 3, 3], INIT_STD));
        p.push("out.b".into(), Tensor::zeros([1, 1, 1, 1]));
        Ok(Self { cfg, params: p })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, cond: Var, img: Var) -> Result<Var> {
        let (cs, is) = (g.shape(cond), g.shape(img));
        if cs[1] != self.cfg.cond_channels || is[1] != 3 {
            return Err(Error::Shape(format!(
                "discriminator expects {} condition channels and 3 image channels, got {cs:?} and {is:?}",
                self.cfg.cond_channels
            )));
        }
        let mut h = g.concat(cond, img)?;
        for l in 0..self.cfg.layers {
            h = g.conv2d(h, p.get(2 * l), Some(p.get(2 * l + 1)), 2, 1)?;
            if l > 0 {
                h = g.instance_norm(h);
            }
            h = g.leaky_relu(h, LEAK);
        }
        let l = self.cfg.layers;
        g.conv2d(h, p.get(2 * l), Some(p.get(2 * l + 1)), 1, 1)
    }
}

/// Frozen feature network standing in for a pretrained classifier: four
/// stages of two 3x3 convolutions + ReLU (8, 16, 32, 64 channels) with 2x2
/// average pooling between stages, He-initialized from a fixed seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualNet {
    pub params: ParamSet,
}

pub const PERCEPTUAL_SEED: u64 = 0x9e11_cea1;
pub const PERCEPTUAL_WIDTHS: [usize; 4] = [8, 16, 32, 64];

impl PerceptualNet {
    pub fn new() -> Self {
        Self::with_seed(PERCEPTUAL_SEED)
    }

    pub fn with_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut cin = 3;
        for (s, &cout) in PERCEPTUAL_WIDTHS.iter().enumerate() {
            for j in 0..2 {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                p.push(format!("s{s}c{j}.w"), conv_weight(&mut rng, [cout, cin, 3, 3], std));
                p.push(format!("s{s}c{j}.b"), Tensor::zeros([1, 1, 1, cout]));
                cin = cout;
            }
        }
        Self { params: p }
    }

    /// Activations after each of the first `stages` stages.
    pub fn features<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, stages: usize) -> Result<Vec<Var>> {
        if g.shape(x)[1] != 3 {
            return Err(Error::Shape(format!("perceptual net expects 3 channels, got {:?}", g.shape(x))));
        }
        let mut out = Vec::with_capacity(stages);
        let mut h = x;
        for s in 0..stages.min(PERCEPTUAL_WIDTHS.len()) {
            if s > 0 {
                h = g.avg_pool2(h)?;
            }
            for j in 0..2 {
                let i = 2 * (2 * s + j);
                h = g.conv2d(h, p.get(i), Some(p.get(i + 1)), 1, 1)?;
                h = g.relu(h);
            }
            out.push(h);
        }
        Ok(out)
    }
}

impl Default for PerceptualNet {
    fn default() -> Self {
        Self::new()
    }
}
