//! Label propagation: one sparse SPD solve `(I - alpha W) z_j = y_j` per class.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::AffinityGraph;

/// `T x N` one-hot label matrix: rows `0..L` carry the support labels, the
/// remaining rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    y: Array2<f64>,
    labeled: usize,
}

impl LabelMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.y
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.y.ncols()
    }
}

pub fn make_label_matrix(support_y: &[usize], n_way: usize, total: usize) -> Result<LabelMatrix> {
    if support_y.len() > total {
        return Err(Error::Shape(format!(
            "{} support labels for {total} nodes",
            support_y.len()
        )));
    }
    let mut y = Array2::zeros((total, n_way));
    for (row, &label) in support_y.iter().enumerate() {
        if label >= n_way {
            return Err(Error::LabelOutOfRange {
                row,
                label: label as i64,
                classes: n_way,
            });
        }
        y[[row, label]] = 1.0;
    }
    Ok(LabelMatrix {
        y,
        labeled: support_y.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationConfig {
    pub alpha: f64,
    /// Relative residual target per class column.
    pub solver_tol: f64,
    /// Defaults to `20 * T` when unset.
    pub solver_max_iter: Option<usize>,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            solver_tol: 1e-6,
            solver_max_iter: None,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must lie in [0, 1)",
                self.alpha
            )));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "solver tolerance {} must be positive",
                self.solver_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    /// `Z`, shape `T x N`.
    pub scores: Array2<f64>,
    /// Achieved relative residual per class column.
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
}

impl Propagation {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn propagate(g: &AffinityGraph, y: &LabelMatrix, cfg: &PropagationConfig) -> Result<Propagation> {
    cfg.validate()?;
    let t = g.node_count();
    if y.n_rows() != t {
        return Err(Error::Shape(format!(
            "label matrix has {} rows, graph has {t} nodes",
            y.n_rows()
        )));
    }
    let max_iter = cfg.solver_max_iter.unwrap_or(20 * t).max(1);
    let w = g.adjacency();
    let alpha = cfg.alpha;
    let operator = |x: &[f64], out: &mut [f64]| {
        w.mul_vec_into(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - alpha * *o;
        }
    };

    let n = y.n_classes();
    let mut scores = Array2::zeros((t, n));
    let mut residuals = Vec::with_capacity(n);
    let mut iterations = Vec::with_capacity(n);
    for j in 0..n {
        let b: Vec<f64> = y.matrix().column(j).to_vec();
        let solve = conjugate_gradient(operator, &b, cfg.solver_tol, max_iter);
        if !solve.converged {
            return Err(Error::SolverNotConverged {
                column: j,
                residual: solve.relative_residual,
                iterations: solve.iterations,
            });
        }
        for (i, v) in solve.x.into_iter().enumerate() {
            scores[[i, j]] = v;
        }
        residuals.push(solve.relative_residual);
        iterations.push(solve.iterations);
    }
    Ok(Propagation {
        scores,
        residuals,
        iterations,
    })
}

#[derive(Debug, Clone)]
pub struct CgSolve {
    pub x: Vec<f64>,
    /// `||A x - b|| / ||b||`, recomputed from scratch (0 for `b = 0`).
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradient for a symmetric positive-definite operator, from `x = 0`.
///
/// The recursive residual drives the iteration; on apparent convergence the
/// true residual is recomputed and the solve restarted from the current
/// iterate if rounding has let it drift above `tol`.
pub fn conjugate_gradient<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> CgSolve
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return CgSolve {
            x,
            relative_residual: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let target = tol * b_norm;
    let mut ax = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut r = b.to_vec();
    let mut iterations = 0;

    loop {
        let mut p = r.clone();
        let mut rs = dot(&r, &r);
        while rs.sqrt() > target && iterations < max_iter {
            apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let step = rs / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            let rs_next = dot(&r, &r);
            let beta = rs_next / rs;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            rs = rs_next;
            iterations += 1;
        }
        apply(&x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        let true_norm = norm(&r);
        if true_norm <= target || iterations >= max_iter || rs.sqrt() > target {
            return CgSolve {
                x,
                relative_residual: true_norm / b_norm,
                iterations,
                converged: true_norm <= target,
            };
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
