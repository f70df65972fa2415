use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Scalar;
use crate::error::{Error, Result};
use crate::imagecore::{MaskImage, RasterImage};

/// Dense NCHW tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!("{:?} needs {} values, got {}", shape, shape.iter().product::<usize>(), data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self::full([1, 1, 1, 1], v)
    }

    pub fn randn(shape: [usize; 4], std: f64, rng: &mut impl Rng) -> Self {
        let d = Normal::new(0.0, std).expect("valid std");
        Self {
            shape,
            data: (0..shape.iter().product::<usize>()).map(|_| T::lit(d.sample(rng))).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stacks single-sample tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!("stack {:?} with {:?}", first.shape, t.shape)));
            }
            data.extend_from_slice(&t.data);
        }
        let n = items.iter().map(|t| t.shape[0]).sum();
        Ok(Self {
            shape: [n, first.shape[1], first.shape[2], first.shape[3]],
            data,
        })
    }

    /// Sample `i` as its own batch of one.
    pub fn select(&self, i: usize) -> Self {
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.sample(i).to_vec(),
        }
    }

    /// Channel-wise concatenation.
    pub fn concat(a: &Tensor<T>, b: &Tensor<T>) -> Result<Self> {
        if a.shape[0] != b.shape[0] || a.shape[2..] != b.shape[2..] {
            return Err(Error::Shape(format!("concat {:?} with {:?}", a.shape, b.shape)));
        }
        let (sa, sb) = (a.sample_len(), b.sample_len());
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..a.shape[0] {
            data.extend_from_slice(&a.data[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&b.data[i * sb..(i + 1) * sb]);
        }
        Ok(Self {
            shape: [a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3]],
            data,
        })
    }

    /// Image in `[0, 1]` to a `(1, C, H, W)` tensor in `[-1, 1]`.
    pub fn from_image(img: &RasterImage) -> Self {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut data = vec![T::zero(); c * h * w];
        for y in 0..h {
            for x in 0..w {
                for (ch, v) in img.pixel(x, y).iter().enumerate() {
                    data[(ch * h + y) * w + x] = T::lit(*v as f64 * 2.0 - 1.0);
                }
            }
        }
        Self { shape: [1, c, h, w], data }
    }

    /// Mask to a `(1, 1, H, W)` tensor of -1/1.
    pub fn from_mask(mask: &MaskImage) -> Self {
        Self {
            shape: [1, 1, mask.height(), mask.width()],
            data: mask.bits().iter().map(|b| if *b { T::one() } else { -T::one() }).collect(),
        }
    }

    /// Mask to a `(1, 1, H, W)` tensor of 0/1 (loss weights).
    pub fn mask_weights(mask: &MaskImage) -> Self {
        Self {
            shape: [1, 1, mask.height(), mask.width()],
            data: mask.bits().iter().map(|b| if *b { T::one() } else { T::zero() }).collect(),
        }
    }

    /// Sample `i` back to an image in `[0, 1]`.
    pub fn to_image(&self, i: usize) -> RasterImage {
        let [_, c, h, w] = self.shape;
        let s = self.sample(i);
        RasterImage::from_fn(w, h, c, |x, y, px| {
            for (ch, v) in px.iter_mut().enumerate() {
                *v = ((s[(ch * h + y) * w + x].f64() + 1.0) * 0.5) as f32;
            }
        })
    }

    /// Repeats a one-channel tensor to `c` channels.
    pub fn repeat_channels(&self, c: usize) -> Self {
        assert_eq!(self.shape[1], 1);
        let plane = self.shape[2] * self.shape[3];
        let mut data = Vec::with_capacity(self.len() * c);
        for i in 0..self.shape[0] {
            for _ in 0..c {
                data.extend_from_slice(&self.data[i * plane..(i + 1) * plane]);
            }
        }
        Self {
            shape: [self.shape[0], c, self.shape[2], self.shape[3]],
            data,
        }
    }
}
