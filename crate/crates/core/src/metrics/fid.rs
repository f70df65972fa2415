use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::imagecore::RasterImage;
use crate::neuralnet::{Graph, PerceptualNet, Tensor};

/// Feature stage pooled for the Fréchet distance (32 channels).
pub const FID_STAGE: usize = 3;
const EPS: f64 = 1e-9;

/// Globally pooled stage-3 features of each image.
pub fn feature_vectors(net: &PerceptualNet, images: &[RasterImage]) -> Result<Vec<Vec<f64>>> {
    images
        .iter()
        .map(|img| {
            let mut g = Graph::<f32>::new();
            let p = g.bind(&net.params.tensors, false);
            let x = g.constant(Tensor::from_image(&img.to_rgb()));
            let f = net.features(&mut g, &p, x, FID_STAGE)?;
            let pooled = g.global_avg_pool(*f.last().expect("stage"));
            Ok(g.value(pooled).data.iter().map(|v| *v as f64).collect())
        })
        .collect()
}

fn moments(set: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len() as f64;
    let mut mu = DVector::zeros(dim);
    for v in set {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mu;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    for i in 0..dim {
        cov[(i, i)] += EPS;
    }
    (mu, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa Σb)^½)`. The trace of the product's
/// square root is taken through the symmetric `Σa^½ Σb Σa^½`.
pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("fid needs at least two feature vectors per set".into()));
    }
    let dim = a[0].len();
    if dim == 0 || a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::Shape("fid feature vectors differ in length".into()));
    }
    let (mu_a, cov_a) = moments(a, dim);
    let (mu_b, cov_b) = moments(b, dim);
    let sa = sym_sqrt(&cov_a);
    let mut inner = &sa * &cov_b * &sa;
    inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = (mu_a - mu_b).norm_squared();
    Ok((diff + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt).max(0.0))
}

pub fn fid_proxy(net: &PerceptualNet, a: &[RasterImage], b: &[RasterImage]) -> Result<f64> {
    fid_from_features(&feature_vectors(net, a)?, &feature_vectors(net, b)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn gaussian_set(n: usize, dim: usize, seed: u64, scale: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nd = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| nd.sample(&mut rng)).collect();
                // correlated coordinates
                (0..dim).map(|i| scale * (z[i] + 0.5 * z[(i + 1) % dim])).collect()
            })
            .collect()
    }

    /// Denman-Beavers iteration for the principal square root of a general
    /// matrix.
    fn denman_beavers(m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = m.clone();
        let mut z = DMatrix::identity(m.nrows(), m.ncols());
        for _ in 0..100 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            y = (&y + zi) * 0.5;
            z = (&z + yi) * 0.5;
        }
        y
    }

    #[test]
    fn identical_sets() {
        let a = gaussian_set(30, 8, 1, 1.0);
        assert!(fid_from_features(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn mean_shift() {
        let a = gaussian_set(40, 8, 2, 1.0);
        let b: Vec<Vec<f64>> = a.iter().map(|v| v.iter().enumerate().map(|(i, x)| x + if i < 4 { 1.0 } else { 0.0 }).collect()).collect();
        assert!((fid_from_features(&a, &b).unwrap() - 4.0).abs() < 1e-6);
    }

    #[test]
    fn matches_dense_sqrt_oracle() {
        let a = gaussian_set(50, 8, 3, 1.0);
        let b = gaussian_set(60, 8, 4, 1.7);
        let (ma, ca) = moments(&a, 8);
        let (mb, cb) = moments(&b, 8);
        let root = denman_beavers(&(&ca * &cb));
        let want = (ma - mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * root.trace();
        let got = fid_from_features(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((got - fid_from_features(&b, &a).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_inputs() {
        let a = gaussian_set(3, 8, 5, 1.0); // rank-deficient covariance
        assert!(fid_from_features(&a, &gaussian_set(3, 8, 6, 1.0)).unwrap() >= 0.0);
        assert!(fid_from_features(&a[..1], &a).is_err());
    }

    #[test]
    fn image_features() {
        let net = PerceptualNet::new();
        let imgs = vec![RasterImage::filled(16, 16, 3, &[0.2, 0.4, 0.6]), RasterImage::filled(16, 16, 3, &[0.7, 0.1, 0.3])];
        let f = feature_vectors(&net, &imgs).unwrap();
        assert_eq!(f[0].len(), crate::neuralnet::PERCEPTUAL_WIDTHS[FID_STAGE - 1]);
        assert!(fid_proxy(&net, &imgs, &imgs).unwrap() < 1e-6);
    }
}
