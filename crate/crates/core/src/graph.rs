//! k-nearest-neighbor affinity graph with symmetric normalization.
//!
//! `A_ij = max(v_i . v_j, 0)^gamma` when `i != j` and `v_i` is among the `k`
//! highest-dot-product neighbors of `v_j`; `W = (A + A^T) / 2`;
//! the normalized adjacency is `D^{-1/2} W D^{-1/2}` with `D = diag(W 1)`.

use std::cmp::Ordering;
use std::io::{self, Write};

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub k: usize,
    pub gamma: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: 15, gamma: 3.0 }
    }
}

impl GraphConfig {
    pub fn validate(&self, node_count: usize) -> Result<()> {
        if node_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "graph needs at least 2 nodes, got {node_count}"
            )));
        }
        if self.k == 0 || self.k >= node_count {
            return Err(Error::InvalidConfig(format!(
                "k = {} must lie in [1, {})",
                self.k, node_count
            )));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma = {} must be >= 1",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AffinityGraph {
    adjacency: CsrMatrix,
    degree: Vec<f64>,
}

impl AffinityGraph {
    /// The normalized adjacency.
    pub fn adjacency(&self) -> &CsrMatrix {
        &self.adjacency
    }

    /// Row sums of the symmetrized `W`; isolated nodes carry 1.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn node_count(&self) -> usize {
        self.degree.len()
    }

    /// Writes the normalized adjacency as `i j value` lines.
    pub fn write_coo<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j, v) in self.adjacency.triplets() {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// The raw (unsymmetrized) affinity `A`; column `j` holds the in-edges from
/// the neighbors of node `j`.
pub fn knn_affinity(features: ArrayView2<'_, f64>, cfg: &GraphConfig) -> Result<CsrMatrix> {
    let t = features.nrows();
    cfg.validate(t)?;
    for ((row, col), v) in features.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    let gram = features.dot(&features.t());
    let mut triplets = Vec::with_capacity(t * cfg.k);
    let mut candidates: Vec<usize> = Vec::with_capacity(t);
    for j in 0..t {
        candidates.clear();
        candidates.extend((0..t).filter(|&i| i != j));
        let col = gram.column(j);
        // descending similarity, lower index first on ties
        let by_rank = |&a: &usize, &b: &usize| -> Ordering {
            col[b].total_cmp(&col[a]).then(a.cmp(&b))
        };
        if cfg.k < candidates.len() {
            candidates.select_nth_unstable_by(cfg.k - 1, by_rank);
        }
        for &i in &candidates[..cfg.k] {
            let s = col[i];
            if s > 0.0 {
                triplets.push((i, j, s.powf(cfg.gamma)));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(t, t, triplets))
}

pub fn build_graph(features: ArrayView2<'_, f64>, cfg: &GraphConfig) -> Result<AffinityGraph> {
    let a = knn_affinity(features, cfg)?;
    let t = a.n_rows();
    let triplets = a
        .triplets()
        .flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)])
        .collect();
    AffinityGraph::from_weights(CsrMatrix::from_triplets(t, t, triplets))
}

impl AffinityGraph {
    /// Normalizes a symmetric, nonnegative, zero-diagonal weight matrix `W`.
    pub fn from_weights(mut w: CsrMatrix) -> Result<Self> {
        let t = w.n_rows();
        if w.n_cols() != t {
            return Err(Error::Shape(format!("weight matrix is {t}x{}", w.n_cols())));
        }
        if w.triplets().any(|(i, j, v)| i == j || !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "weights must be finite, nonnegative and off-diagonal".into(),
            ));
        }
        if w.max_asymmetry() > 1e-12 {
            return Err(Error::InvalidConfig("weight matrix is not symmetric".into()));
        }
        let degree: Vec<f64> = w
            .row_sums()
            .into_iter()
            .map(|d| if d > 0.0 { d } else { 1.0 })
            .collect();
        let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
        w.map_values(|i, j, v| v * inv_sqrt[i] * inv_sqrt[j]);
        Ok(Self {
            adjacency: w,
            degree,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn identical_unit_vectors() {
        let x = array![[1.0, 0.0], [1.0, 0.0]];
        let g = build_graph(x.view(), &GraphConfig { k: 1, gamma: 3.0 }).unwrap();
        let a = knn_affinity(x.view(), &GraphConfig { k: 1, gamma: 3.0 }).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        assert_eq!(g.adjacency().get(0, 1), 1.0);
        assert_eq!(g.adjacency().get(1, 0), 1.0);
        assert_eq!(g.degree(), &[1.0, 1.0]);
    }

    #[test]
    fn orthogonal_unit_vectors_have_no_edges() {
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let g = build_graph(x.view(), &GraphConfig { k: 1, gamma: 3.0 }).unwrap();
        assert_eq!(g.adjacency().nnz(), 0);
        // isolated nodes keep a unit degree
        assert_eq!(g.degree(), &[1.0, 1.0]);
    }

    #[test]
    fn ties_prefer_lower_index() {
        // node 0 sees nodes 1 and 2 at the same similarity
        let x = array![[1.0, 0.0], [0.6, 0.8], [0.6, -0.8]];
        let a = knn_affinity(x.view(), &GraphConfig { k: 1, gamma: 1.0 }).unwrap();
        assert!(a.get(1, 0) > 0.0);
        assert_eq!(a.get(2, 0), 0.0);
    }

    #[test]
    fn invalid_k_rejected() {
        let x = Array2::<f64>::eye(3);
        for k in [0, 3] {
            assert!(matches!(
                build_graph(x.view(), &GraphConfig { k, gamma: 3.0 }),
                Err(Error::InvalidConfig(_))
            ));
        }
        assert!(build_graph(x.view(), &GraphConfig { k: 1, gamma: 0.5 }).is_err());
    }

    #[test]
    fn non_finite_features_rejected() {
        let x = array![[1.0, f64::NAN], [0.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            build_graph(x.view(), &GraphConfig { k: 1, gamma: 3.0 }),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn coo_dump_lists_every_edge() {
        let x = array![[1.0, 0.0], [1.0, 0.0]];
        let g = build_graph(x.view(), &GraphConfig { k: 1, gamma: 3.0 }).unwrap();
        let mut buf = Vec::new();
        g.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("0 1 1e0"));
    }
}
