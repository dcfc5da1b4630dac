//! Class balancing of the query score block.
//!
//! The block `P` of propagated scores is sharpened element-wise (`P^tau`),
//! projected with Sinkhorn-Knopp onto matrices with row sums `p` (confidence
//! weights) and column sums `q` (class budget), and turned into pseudo-labels
//! by row argmax.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

/// Added to every entry of an all-zero row whose target sum is positive.
pub const ZERO_ROW_FLOOR: f64 = 1e-300;

/// Nonnegative, finite `M x N` class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Array2<f64>);

impl ScoreMatrix {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in m.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            if v < 0.0 {
                return Err(Error::Shape(format!(
                    "score matrix entry ({row}, {col}) = {v} is negative"
                )));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.0.sum_axis(Axis(1)).to_vec()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.0.sum_axis(Axis(0)).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// `p_i = 1`.
    Uniform,
    /// `p_i = 1 - H(z_i) / log N` on the l1-normalized propagated row.
    Entropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassPrior {
    Uniform,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    pub tau: f64,
    pub weight_policy: WeightPolicy,
    pub class_prior: ClassPrior,
    pub sinkhorn_max_iter: usize,
    /// Absolute tolerance on the largest marginal violation.
    pub sinkhorn_tol: f64,
    /// When false the Sinkhorn projection is skipped.
    pub enabled: bool,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            tau: 3.0,
            weight_policy: WeightPolicy::Uniform,
            class_prior: ClassPrior::Uniform,
            sinkhorn_max_iter: 1000,
            sinkhorn_tol: 1e-6,
            enabled: true,
        }
    }
}

impl BalanceConfig {
    pub fn validate(&self, n_way: usize) -> Result<()> {
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau = {} must be >= 1", self.tau)));
        }
        if !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 {
            return Err(Error::InvalidConfig(
                "Sinkhorn tolerance must be positive and the iteration budget nonzero".into(),
            ));
        }
        if let ClassPrior::Given(u) = &self.class_prior {
            if u.len() != n_way {
                return Err(Error::InvalidConfig(format!(
                    "class prior has {} entries for {n_way} classes",
                    u.len()
                )));
            }
            if u.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidConfig("class prior entries must be >= 0".into()));
            }
            let total: f64 = u.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "class prior sums to {total}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Rows `L..T` of `Z`, negatives clamped to zero.
pub fn extract_unlabeled_block(z: &Array2<f64>, support_count: usize) -> Result<ScoreMatrix> {
    if support_count >= z.nrows() {
        return Err(Error::Shape(format!(
            "support count {support_count} leaves no unlabeled rows out of {}",
            z.nrows()
        )));
    }
    let block = z.slice(s![support_count.., ..]).mapv(|v| v.max(0.0));
    ScoreMatrix::new(block)
}

pub fn power_transform(p: &ScoreMatrix, tau: f64) -> ScoreMatrix {
    if tau == 1.0 {
        return p.clone();
    }
    ScoreMatrix(p.0.mapv(|v| v.powf(tau)))
}

/// Sinkhorn row targets for the unlabeled rows `L..T` of `Z`.
pub fn confidence_weights(z: &Array2<f64>, support_count: usize, policy: WeightPolicy) -> Vec<f64> {
    let rows = z.slice(s![support_count.., ..]);
    match policy {
        WeightPolicy::Uniform => vec![1.0; rows.nrows()],
        WeightPolicy::Entropy => {
            let n = rows.ncols();
            if n < 2 {
                return vec![1.0; rows.nrows()];
            }
            let max_entropy = (n as f64).ln();
            rows.rows()
                .into_iter()
                .map(|row| {
                    let total: f64 = row.iter().map(|v| v.max(0.0)).sum();
                    if total <= 0.0 {
                        return 0.0;
                    }
                    let entropy: f64 = row
                        .iter()
                        .map(|v| v.max(0.0) / total)
                        .filter(|&q| q > 0.0)
                        .map(|q| -q * q.ln())
                        .sum();
                    (1.0 - entropy / max_entropy).clamp(0.0, 1.0)
                })
                .collect()
        }
    }
}

/// Column targets `q` for row targets `p`: `(sum p / N) 1` for a uniform
/// prior, `(sum p) u` for a given prior `u`.
pub fn class_targets(row_sums: &[f64], prior: &ClassPrior, n_way: usize) -> Vec<f64> {
    let mass: f64 = row_sums.iter().sum();
    match prior {
        ClassPrior::Uniform => vec![mass / n_way as f64; n_way],
        ClassPrior::Given(u) => u.iter().map(|&w| mass * w).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOutcome {
    pub scores: ScoreMatrix,
    pub iterations: usize,
    /// Largest absolute deviation of any row or column sum from its target.
    pub violation: f64,
    pub converged: bool,
    /// Rows that were all-zero with a positive target and received [`ZERO_ROW_FLOOR`].
    pub floored_rows: Vec<usize>,
}

impl SinkhornOutcome {
    /// Turns an exhausted iteration budget into an error.
    pub fn into_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::SinkhornNotConverged {
                violation: self.violation,
                iterations: self.iterations,
            })
        }
    }
}

/// Alternating row / column rescaling towards row sums `row_sums` and column
/// sums `col_sums`. The result is `diag(a) P diag(b)` for positive `a`, `b`.
///
/// Stops when the largest marginal violation drops to `cfg.sinkhorn_tol` or
/// after `cfg.sinkhorn_max_iter` sweeps; in the latter case the last iterate
/// is returned with `converged == false`.
pub fn sinkhorn(
    p: &ScoreMatrix,
    row_sums: &[f64],
    col_sums: &[f64],
    cfg: &BalanceConfig,
) -> Result<SinkhornOutcome> {
    let (m, n) = p.0.dim();
    if row_sums.len() != m || col_sums.len() != n {
        return Err(Error::Shape(format!(
            "targets of length {}/{} for a {m}x{n} matrix",
            row_sums.len(),
            col_sums.len()
        )));
    }
    if row_sums.iter().chain(col_sums).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidConfig("Sinkhorn targets must be finite and >= 0".into()));
    }
    let row_mass: f64 = row_sums.iter().sum();
    let col_mass: f64 = col_sums.iter().sum();
    if (row_mass - col_mass).abs() > 1e-9 * row_mass.max(col_mass).max(1.0) {
        return Err(Error::SinkhornInfeasible(format!(
            "row targets sum to {row_mass} but column targets sum to {col_mass}"
        )));
    }

    let mut x = p.0.clone();
    let mut floored_rows = Vec::new();
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        if row_sums[i] > 0.0 && row.iter().all(|&v| v == 0.0) {
            row.fill(ZERO_ROW_FLOOR);
            floored_rows.push(i);
        }
    }
    let colsum = x.sum_axis(Axis(0));
    if let Some(j) = (0..n).find(|&j| col_sums[j] > 0.0 && colsum[j] == 0.0) {
        return Err(Error::SinkhornInfeasible(format!(
            "column {j} is all zero but its target is {}",
            col_sums[j]
        )));
    }

    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.sinkhorn_max_iter {
        iterations += 1;
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            let sum = row.sum();
            if sum > 0.0 {
                row *= row_sums[i] / sum;
            }
        }
        let colsum = x.sum_axis(Axis(0));
        for (j, mut col) in x.columns_mut().into_iter().enumerate() {
            if colsum[j] > 0.0 {
                col *= col_sums[j] / colsum[j];
            }
        }
        violation = marginal_violation(&x, row_sums, col_sums);
        if violation <= cfg.sinkhorn_tol {
            break;
        }
    }
    Ok(SinkhornOutcome {
        scores: ScoreMatrix(x),
        iterations,
        violation,
        converged: violation <= cfg.sinkhorn_tol,
        floored_rows,
    })
}

pub fn marginal_violation(x: &Array2<f64>, row_sums: &[f64], col_sums: &[f64]) -> f64 {
    let rows = x.sum_axis(Axis(1));
    let cols = x.sum_axis(Axis(0));
    rows.iter()
        .zip(row_sums)
        .chain(cols.iter().zip(col_sums))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    /// Row maximum over row sum.
    pub confidence: Vec<f64>,
    /// All-zero rows, labeled 0 with confidence 0.
    pub zero_rows: Vec<usize>,
}

/// Row argmax, lowest class index on ties.
pub fn predict_pseudo_labels(p: &ScoreMatrix) -> PseudoLabels {
    let m = p.n_rows();
    let mut labels = Vec::with_capacity(m);
    let mut confidence = Vec::with_capacity(m);
    let mut zero_rows = Vec::new();
    for (i, row) in p.0.rows().into_iter().enumerate() {
        let (best, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bj, bv), (j, &v)| if v > bv { (j, v) } else { (bj, bv) });
        let sum = row.sum();
        if sum <= 0.0 {
            zero_rows.push(i);
            labels.push(0);
            confidence.push(0.0);
        } else {
            labels.push(best);
            confidence.push(max / sum.max(f64::MIN_POSITIVE));
        }
    }
    PseudoLabels {
        labels,
        confidence,
        zero_rows,
    }
}

#[derive(Debug, Clone)]
pub struct Balanced {
    /// Power-transformed and (when enabled) Sinkhorn-projected scores.
    pub scores: ScoreMatrix,
    pub pseudo: PseudoLabels,
    /// Row targets `p`, also the per-query weights of the cleaning loss.
    pub row_sums: Vec<f64>,
    pub col_sums: Option<Vec<f64>>,
    pub sinkhorn_iterations: usize,
    pub marginal_violation: Option<f64>,
    pub converged: bool,
}

/// `P -> P^tau -> Sinkhorn(p, q) -> argmax` on an already extracted block,
/// with explicit column targets.
pub fn balance_block(
    p: &ScoreMatrix,
    row_sums: Vec<f64>,
    col_sums: Option<Vec<f64>>,
    cfg: &BalanceConfig,
) -> Result<Balanced> {
    let powered = power_transform(p, cfg.tau);
    match (cfg.enabled, col_sums) {
        (true, Some(col_sums)) => {
            let out = sinkhorn(&powered, &row_sums, &col_sums, cfg)?;
            let pseudo = predict_pseudo_labels(&out.scores);
            Ok(Balanced {
                scores: out.scores,
                pseudo,
                row_sums,
                col_sums: Some(col_sums),
                sinkhorn_iterations: out.iterations,
                marginal_violation: Some(out.violation),
                converged: out.converged,
            })
        }
        _ => {
            let pseudo = predict_pseudo_labels(&powered);
            Ok(Balanced {
                scores: powered,
                pseudo,
                row_sums,
                col_sums: None,
                sinkhorn_iterations: 0,
                marginal_violation: None,
                converged: true,
            })
        }
    }
}

/// Full balancing step on the propagated scores `z` with `support_count`
/// labeled rows on top.
pub fn balance_and_predict(z: &Array2<f64>, support_count: usize, cfg: &BalanceConfig) -> Result<Balanced> {
    cfg.validate(z.ncols())?;
    let p = extract_unlabeled_block(z, support_count)?;
    let row_sums = confidence_weights(z, support_count, cfg.weight_policy);
    let col_sums = cfg
        .enabled
        .then(|| class_targets(&row_sums, &cfg.class_prior, z.ncols()));
    balance_block(&p, row_sums, col_sums, cfg)
}
