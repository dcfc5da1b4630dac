//! Helpers shared by the integration tests: dense reference implementations
//! and small data generators.
#![allow(dead_code)]

use ilpc::features::{generate_blobs, BlobSpec, FeatureSet};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense normalized adjacency: for every node `j`, its `k` most similar other
/// nodes `i` (lower index first on ties) receive `max(v_i·v_j, 0)^gamma`;
/// then symmetrize and scale by the inverse square root of the degrees.
pub fn dense_normalized_adjacency(x: &Array2<f64>, k: usize, gamma: f64) -> DMatrix<f64> {
    let t = x.nrows();
    let v = to_dmatrix(x);
    let gram = &v * v.transpose();
    let mut a = DMatrix::zeros(t, t);
    for j in 0..t {
        let mut others: Vec<usize> = (0..t).filter(|&i| i != j).collect();
        others.sort_by(|&p, &q| gram[(q, j)].partial_cmp(&gram[(p, j)]).unwrap().then(p.cmp(&q)));
        for &i in others.iter().take(k) {
            a[(i, j)] = gram[(i, j)].max(0.0).powf(gamma);
        }
    }
    let w = (&a + a.transpose()) * 0.5;
    let d: Vec<f64> = (0..t)
        .map(|i| {
            let s = w.row(i).sum();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    DMatrix::from_fn(t, t, |i, j| w[(i, j)] / (d[i] * d[j]).sqrt())
}

/// `(I - alpha W)^{-1} Y` by LU decomposition.
pub fn dense_propagation(w: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let t = w.nrows();
    let system = DMatrix::identity(t, t) - w * alpha;
    system.lu().solve(y).expect("nonsingular system")
}

pub fn one_hot(labels: &[usize], n: usize, total: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(total, n);
    for (i, &l) in labels.iter().enumerate() {
        y[(i, l)] = 1.0;
    }
    y
}

pub fn blobs(class_count: usize, dim: usize, sigma: f64, per_class: usize, seed: u64) -> FeatureSet {
    generate_blobs(&BlobSpec {
        class_count,
        dim,
        mean_scale: 1.0,
        noise_sigma: sigma,
        examples_per_class: per_class,
        seed,
    })
    .expect("valid blob spec")
}

/// The overlapping-blob dataset used for the ablation orderings: 20 classes
/// in 64 dimensions, unit-norm orthogonal means, noise sigma 0.3.
pub fn overlapping_blobs() -> FeatureSet {
    blobs(20, 64, 0.3, 100, 1)
}

/// Nearly noise-free blobs.
pub fn separable_blobs() -> FeatureSet {
    blobs(10, 16, 1e-4, 40, 5)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes' Chebyshev fit, relative
/// error below 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { r } else { 2.0 - r }
}

/// Accuracy of the nearest-mean rule for `n` classes with orthogonal means of
/// norm `scale` and isotropic noise `sigma`:
/// `∫ φ(z) Φ(z + scale/sigma)^(n-1) dz`, by the trapezoid rule on [-10, 10].
pub fn nearest_mean_accuracy(n: usize, scale: f64, sigma: f64) -> f64 {
    let steps = 20_000;
    let h = 20.0 / steps as f64;
    let f = |z: f64| {
        let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        density * standard_normal_cdf(z + scale / sigma).powi(n as i32 - 1)
    };
    let mut total = 0.5 * (f(-10.0) + f(10.0));
    for i in 1..steps {
        total += f(-10.0 + i as f64 * h);
    }
    total * h
}
