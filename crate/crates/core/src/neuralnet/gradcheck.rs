//! Central finite-difference checks of graph gradients.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub h: f64,
    /// Elements probed per input; larger inputs are probed at an even stride.
    pub max_probes: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { h: 1e-6, max_probes: 64 }
    }
}

/// Result of one check: `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// over all probed elements.
#[derive(Clone, Copy, Debug)]
pub struct GradReport {
    pub rel_error: f64,
    pub probes: usize,
    pub analytic_norm: f64,
}

impl GradCheck {
    /// `f` builds a scalar loss from leaves bound to `inputs`.
    pub fn run<F>(&self, inputs: &[Tensor<f64>], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars)?;
            Ok(g.value(out).item())
        };
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Shape("gradcheck needs a scalar loss".into()));
        }
        g.backward(out)?;

        let (mut diff2, mut a2, mut n2, mut probes) = (0.0, 0.0, 0.0, 0);
        let mut work = inputs.to_vec();
        for (k, v) in vars.iter().enumerate() {
            let analytic = g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape));
            let len = inputs[k].len();
            let stride = len.div_ceil(self.max_probes.max(1)).max(1);
            for i in (0..len).step_by(stride) {
                let x0 = work[k].data[i];
                work[k].data[i] = x0 + self.h;
                let up = eval(&work)?;
                work[k].data[i] = x0 - self.h;
                let down = eval(&work)?;
                work[k].data[i] = x0;
                let num = (up - down) / (2.0 * self.h);
                let a = analytic.data[i];
                diff2 += (a - num) * (a - num);
                a2 += a * a;
                n2 += num * num;
                probes += 1;
            }
        }
        let denom = a2.sqrt().max(n2.sqrt());
        let rel_error = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
        Ok(GradReport {
            rel_error,
            probes,
            analytic_norm: a2.sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::neuralnet::loss::{perceptual_distance, weighted_l1, LOGIT_CLIP};
    use crate::neuralnet::models::{
        Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, PerceptualNet,
    };

    const TOL: f64 = 1e-4;

    fn rnd(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn check<F>(inputs: &[Tensor<f64>], f: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let r = GradCheck::default().run(inputs, f).unwrap();
        assert!(r.analytic_norm > 0.0, "no gradient flowed");
        assert!(r.rel_error < TOL, "relative error {:.3e} over {} probes", r.rel_error, r.probes);
    }

    /// Projects onto a fixed random direction so every output element matters.
    fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
        let r = g.constant(rnd(g.shape(y), seed));
        let p = g.mul(y, r)?;
        Ok(g.sum(p))
    }

    #[test]
    fn conv2d() {
        check(&[rnd([2, 3, 7, 6], 1), rnd([4, 3, 3, 3], 2), rnd([1, 1, 1, 4], 3)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(g, y, 9)
        });
    }

    #[test]
    fn conv_transpose2d() {
        check(&[rnd([2, 3, 4, 5], 1), rnd([3, 2, 4, 4], 2), rnd([1, 1, 1, 2], 3)], |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(g, y, 9)
        });
    }

    #[test]
    fn instance_norm() {
        check(&[rnd([2, 3, 4, 4], 4)], |g, v| {
            let y = g.instance_norm(v[0]);
            project(g, y, 9)
        });
    }

    #[test]
    fn activations() {
        // keep inputs away from the kinks of leaky relu and abs
        let mut x = rnd([1, 2, 5, 5], 5);
        for v in &mut x.data {
            if v.abs() < 0.05 {
                *v += 0.2;
            }
        }
        check(std::slice::from_ref(&x), |g, v| {
            let a = g.leaky_relu(v[0], 0.2);
            let b = g.tanh(a);
            let c = g.relu(v[0]);
            let d = g.abs(v[0]);
            let e = g.square(v[0]);
            let s = g.scale(e, 0.3);
            let t = g.add(b, c)?;
            let t = g.add(t, d)?;
            let t = g.add(t, s)?;
            project(g, t, 9)
        });
    }

    #[test]
    fn structural_ops() {
        check(&[rnd([2, 2, 4, 6], 6), rnd([2, 3, 4, 6], 7)], |g, v| {
            let c = g.concat(v[0], v[1])?;
            let p = g.avg_pool2(c)?;
            let q = g.global_avg_pool(c);
            let a = project(g, p, 9)?;
            let b = project(g, q, 10)?;
            g.add(a, b)
        });
        check(&[rnd([1, 2, 3, 3], 6), rnd([1, 2, 3, 3], 7)], |g, v| {
            let s = g.sub(v[0], v[1])?;
            let m = g.mul(s, v[0])?;
            Ok(g.mean(m))
        });
    }

    #[test]
    fn bce_with_logits() {
        check(&[rnd([1, 1, 4, 4], 8)], |g, v| {
            let a = g.bce_with_logits(v[0], 1.0, LOGIT_CLIP);
            let b = g.bce_with_logits(v[0], 0.0, LOGIT_CLIP);
            let b = g.scale(b, 0.7);
            g.add(a, b)
        });
    }

    #[test]
    fn weighted_l1_loss() {
        let mut out = rnd([1, 3, 4, 4], 11);
        let gt = rnd([1, 3, 4, 4], 12);
        for (o, t) in out.data.iter_mut().zip(&gt.data) {
            if (*o - t).abs() < 0.05 {
                *o += 0.2;
            }
        }
        let w = Tensor::new([1, 3, 4, 4], (0..48).map(|i| [1.0, 1.5, 2.25][i % 3]).collect()).unwrap();
        check(&[out, gt, w], |g, v| weighted_l1(g, v[0], v[1], v[2]));
    }

    #[test]
    fn perceptual_loss() {
        let net = PerceptualNet::new();
        check(&[rnd([1, 3, 8, 8], 13), rnd([1, 3, 8, 8], 14)], |g, v| {
            let p = g.bind(&net.params.cast(), false);
            perceptual_distance(g, &net, &p, v[0], v[1])
        });
    }

    #[test]
    fn discriminator_parameters() {
        let d = Discriminator::new(
            DiscriminatorConfig {
                cond_channels: 2,
                base_width: 2,
                layers: 2,
            },
            3,
        )
        .unwrap();
        let mut inputs: Vec<Tensor<f64>> = d.params.cast();
        inputs.push(rnd([1, 2, 8, 8], 15));
        inputs.push(rnd([1, 3, 8, 8], 16));
        let n = d.params.tensors.len();
        check(&inputs, |g, v| {
            let p = crate::neuralnet::graph::Bound { vars: v[..n].to_vec() };
            let logits = d.forward(g, &p, v[n], v[n + 1])?;
            Ok(g.bce_with_logits(logits, 1.0, LOGIT_CLIP))
        });
    }

    #[test]
    fn generator_end_to_end() {
        let cfg = GeneratorConfig {
            in_channels: 2,
            base_width: 2,
            depth: 3,
            final_conv: true,
            input_skip: true,
        };
        let gen = Generator::new(cfg, 4).unwrap();
        let mut inputs: Vec<Tensor<f64>> = gen.params.cast();
        // larger weights than the training init so the check is not dominated by rounding
        for t in &mut inputs {
            for v in &mut t.data {
                *v *= 20.0;
            }
        }
        inputs.push(rnd([1, 2, 8, 8], 17));
        let n = gen.params.tensors.len();
        check(&inputs, |g, v| {
            let p = crate::neuralnet::graph::Bound { vars: v[..n].to_vec() };
            let y = gen.forward(g, &p, v[n])?;
            project(g, y, 9)
        });
    }
}
