use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-tensor first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &[Tensor<T>]) -> Self {
        Self {
            cfg,
            t: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape)).collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if !(self.cfg.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", self.cfg.lr)));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape("adam: parameter/gradient count mismatch".into()));
        }
        self.t += 1;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape != g.shape {
                return Err(Error::Shape(format!("adam: {:?} vs {:?}", p.shape, g.shape)));
            }
            for (((pv, gv), mv), vv) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mv = b1 * *mv + one_b1 * *gv;
                *vv = b2 * *vv + one_b2 * *gv * *gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges() {
        let mut x = vec![Tensor::<f64>::scalar(1.0)];
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.9), &x);
        for _ in 0..200 {
            let g = vec![Tensor::scalar(2.0 * x[0].item())];
            opt.step(&mut x, &g).unwrap();
        }
        assert!(x[0].item().abs() < 1e-3, "{}", x[0].item());
    }

    #[test]
    fn zero_gradients_leave_params() {
        let mut x = vec![Tensor::<f32>::full([1, 1, 2, 2], 0.7)];
        let mut opt = Adam::new(AdamConfig::new(2e-4, 0.5), &x);
        opt.step(&mut x, &[Tensor::zeros([1, 1, 2, 2])]).unwrap();
        assert_eq!(x[0].data, vec![0.7; 4]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn rejects_bad_lr() {
        let mut x = vec![Tensor::<f32>::scalar(1.0)];
        let mut opt = Adam::new(AdamConfig::new(0.0, 0.5), &x);
        assert!(opt.step(&mut x, &[Tensor::scalar(1.0)]).is_err());
    }
}
