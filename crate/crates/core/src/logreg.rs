//! Multinomial logistic regression with an L2 penalty on the weights,
//! fitted by L-BFGS. Used for the inductive and semi-supervised modes.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2};

use crate::cleaner::{weighted_cross_entropy, LinearClassifier};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    /// Inverse regularization strength; the objective is
    /// `C·Σ CE + ½‖W‖²` with the intercept unpenalized.
    pub c: f64,
    pub max_iter: usize,
    /// Stop when the gradient's max-norm falls below this.
    pub tol: f64,
    pub history: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { c: 1.0, max_iter: 500, tol: 1e-6, history: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticRegression {
    clf: LinearClassifier,
    iterations: usize,
}

impl LogisticRegression {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_way: usize, cfg: &LogRegConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        if !(cfg.c > 0.0) || cfg.history == 0 {
            return Err(Error::InvalidConfig(format!("bad logistic regression config {cfg:?}")));
        }
        if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= n_way) {
            return Err(Error::LabelOutOfRange { row, label: label as i64, classes: n_way });
        }
        if y.is_empty() || y.iter().all(|&l| l == y[0]) {
            return Err(Error::DegenerateSupport);
        }
        let d = x.ncols();
        let n = x.nrows() as f64;
        let ones = vec![1.0; y.len()];
        let unpack = |theta: &[f64]| {
            let w = Array2::from_shape_vec((n_way, d), theta[..n_way * d].to_vec()).expect("shape");
            let b = Array1::from(theta[n_way * d..].to_vec());
            LinearClassifier::new(w, b)
        };
        let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let clf = unpack(theta)?;
            let lg = weighted_cross_entropy(&clf, x, y, &ones);
            let penalty: f64 = clf.weights().iter().map(|v| v * v).sum::<f64>() / 2.0;
            let mut grad: Vec<f64> = lg
                .grad_weights
                .iter()
                .zip(clf.weights())
                .map(|(g, w)| cfg.c * n * g + w)
                .collect();
            grad.extend(lg.grad_bias.iter().map(|g| cfg.c * n * g));
            Ok((cfg.c * n * lg.loss + penalty, grad))
        };
        let (theta, iterations) = lbfgs(objective, vec![0.0; n_way * (d + 1)], cfg)?;
        Ok(Self { clf: unpack(&theta)?, iterations })
    }

    pub fn classifier(&self) -> &LinearClassifier {
        &self.clf
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.clf.predict_proba(x)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        argmax_rows(&self.clf.logits(x))
    }
}

/// Row-wise argmax; ties go to the lower column.
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs<F>(f: F, mut x: Vec<f64>, cfg: &LogRegConfig) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let max_norm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut fx, mut g) = f(&x)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for iter in 0..cfg.max_iter {
        if max_norm(&g) <= cfg.tol {
            return Ok((x, iter));
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = pairs.back().map_or(1.0 / max_norm(&g).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            pairs.clear();
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let (x_new, f_new, g_new) = loop {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = f(&cand)?;
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                break (cand, fc, gc);
            }
            step *= 0.5;
            if step < 1e-20 {
                return Ok((x, iter));
            }
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = f_new;
        g = g_new;
    }
    Ok((x, cfg.max_iter))
}
