//! Feature pre-processing steps, applied in order.
//!
//! Centering and PCA use statistics of a *population* of rows: all rows for
//! [`preprocess`], or an explicit subset for [`preprocess_matrix`] (the engine
//! passes `S ∪ Q` for transduction and `S ∪ U` for semi-supervised runs).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use super::FeatureSet;
use crate::error::{Error, Result};

pub const DEFAULT_POWER_BETA: f64 = 0.5;
pub const DEFAULT_POWER_EPSILON: f64 = 1e-6;

/// Relative eigenvalue cutoff below which a principal direction counts as null.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum PreprocessStep {
    L2Normalize,
    L1Normalize,
    /// `x <- (x + epsilon)^beta`, row l2-normalize, subtract the population
    /// mean, row l2-normalize again. With `shift_negative`, a matrix holding
    /// negative entries is first shifted so its minimum is zero.
    PowerTransformCenter {
        beta: f64,
        epsilon: f64,
        shift_negative: bool,
    },
    /// Subtract the population column mean.
    Center,
    /// Project onto the top `target_dim` principal components of the population.
    Pca { target_dim: usize },
}

impl PreprocessStep {
    pub fn power_transform() -> Self {
        Self::PowerTransformCenter {
            beta: DEFAULT_POWER_BETA,
            epsilon: DEFAULT_POWER_EPSILON,
            shift_negative: false,
        }
    }
}

impl fmt::Display for PreprocessStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::L2Normalize => f.write_str("l2"),
            Self::L1Normalize => f.write_str("l1"),
            Self::PowerTransformCenter {
                beta,
                shift_negative,
                ..
            } => {
                write!(f, "pt={beta}")?;
                if *shift_negative {
                    f.write_str("+shift")?;
                }
                Ok(())
            }
            Self::Center => f.write_str("center"),
            Self::Pca { target_dim } => write!(f, "pca={target_dim}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessSpec {
    pub steps: Vec<PreprocessStep>,
}

impl PreprocessSpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn l2() -> Self {
        Self {
            steps: vec![PreprocessStep::L2Normalize],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }
}

impl fmt::Display for PreprocessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.steps.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses the comma list used on the command line:
/// `l2`, `l1`, `pt`, `pt=<beta>`, `pt+shift`, `center`, `pca=<m>`, or `none`.
impl FromStr for PreprocessSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let bad = || Error::InvalidConfig(format!("bad pre-processing step {token:?}"));
            let (token_body, shift) = match token.strip_suffix("+shift") {
                Some(body) => (body, true),
                None => (token, false),
            };
            let step = match token_body.split_once('=') {
                None => match token_body {
                    "none" => continue,
                    "l2" => PreprocessStep::L2Normalize,
                    "l1" => PreprocessStep::L1Normalize,
                    "center" => PreprocessStep::Center,
                    "pt" => PreprocessStep::PowerTransformCenter {
                        beta: DEFAULT_POWER_BETA,
                        epsilon: DEFAULT_POWER_EPSILON,
                        shift_negative: shift,
                    },
                    _ => return Err(bad()),
                },
                Some(("pt", beta)) => PreprocessStep::PowerTransformCenter {
                    beta: beta.parse().map_err(|_| bad())?,
                    epsilon: DEFAULT_POWER_EPSILON,
                    shift_negative: shift,
                },
                Some(("pca", m)) => PreprocessStep::Pca {
                    target_dim: m.parse().map_err(|_| bad())?,
                },
                Some(_) => return Err(bad()),
            };
            if shift && !matches!(step, PreprocessStep::PowerTransformCenter { .. }) {
                return Err(bad());
            }
            steps.push(step);
        }
        Ok(Self { steps })
    }
}

/// Applies `spec` to every row, with all rows as the statistics population.
pub fn preprocess(fs: &FeatureSet, spec: &PreprocessSpec) -> Result<FeatureSet> {
    if spec.is_identity() {
        return Ok(fs.clone());
    }
    let population: Vec<usize> = (0..fs.len()).collect();
    let data = preprocess_matrix(fs.data(), &population, spec)?;
    fs.replace_data(data, &format!("|{spec}"))
}

/// Applies `spec` to every row of `data`, computing centering and PCA
/// statistics over the rows listed in `population` only.
pub fn preprocess_matrix(
    data: &Array2<f64>,
    population: &[usize],
    spec: &PreprocessSpec,
) -> Result<Array2<f64>> {
    if let Some(&bad) = population.iter().find(|&&i| i >= data.nrows()) {
        return Err(Error::Shape(format!(
            "population row {bad} out of range for {} rows",
            data.nrows()
        )));
    }
    let mut x = data.clone();
    for step in &spec.steps {
        x = match step {
            PreprocessStep::L2Normalize => {
                normalize_rows(&mut x, Norm::L2);
                x
            }
            PreprocessStep::L1Normalize => {
                normalize_rows(&mut x, Norm::L1);
                x
            }
            PreprocessStep::PowerTransformCenter {
                beta,
                epsilon,
                shift_negative,
            } => power_transform_center(x, population, *beta, *epsilon, *shift_negative)?,
            PreprocessStep::Center => {
                center(&mut x, population);
                x
            }
            PreprocessStep::Pca { target_dim } => pca_project(&x, population, *target_dim)?,
        };
    }
    Ok(x)
}

#[derive(Clone, Copy)]
enum Norm {
    L1,
    L2,
}

fn normalize_rows(x: &mut Array2<f64>, norm: Norm) {
    for mut row in x.rows_mut() {
        let n = match norm {
            Norm::L1 => row.iter().map(|v| v.abs()).sum::<f64>(),
            Norm::L2 => row.dot(&row).sqrt(),
        };
        if n > 0.0 {
            row /= n;
        }
    }
}

fn population_mean(x: &Array2<f64>, population: &[usize]) -> Array1<f64> {
    let mut mean = Array1::zeros(x.ncols());
    if population.is_empty() {
        return mean;
    }
    for &i in population {
        mean += &x.row(i);
    }
    mean / population.len() as f64
}

fn center(x: &mut Array2<f64>, population: &[usize]) {
    let mean = population_mean(x, population);
    *x -= &mean.insert_axis(Axis(0));
}

fn power_transform_center(
    mut x: Array2<f64>,
    population: &[usize],
    beta: f64,
    epsilon: f64,
    shift_negative: bool,
) -> Result<Array2<f64>> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    if min < 0.0 {
        if shift_negative {
            x.mapv_inplace(|v| v - min);
        } else {
            let ((row, col), &value) = x.indexed_iter().find(|(_, v)| **v < 0.0).unwrap();
            return Err(Error::NegativePowerInput { row, col, value });
        }
    }
    x.mapv_inplace(|v| (v + epsilon).powf(beta));
    normalize_rows(&mut x, Norm::L2);
    center(&mut x, population);
    normalize_rows(&mut x, Norm::L2);
    Ok(x)
}

fn pca_project(x: &Array2<f64>, population: &[usize], target_dim: usize) -> Result<Array2<f64>> {
    let d = x.ncols();
    if target_dim == 0 || target_dim > d {
        return Err(Error::InvalidConfig(format!(
            "PCA target dimension {target_dim} outside [1, {d}]"
        )));
    }
    if population.len() < target_dim {
        return Err(Error::InvalidConfig(format!(
            "PCA to {target_dim} dimensions needs at least that many population rows, got {}",
            population.len()
        )));
    }
    let mean = population_mean(x, population);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for &i in population {
        let r = &x.row(i) - &mean;
        for a in 0..d {
            let ra = r[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..d {
                cov[(a, b)] += ra * r[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    cov /= population.len().max(2) as f64 - 1.0;

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| top > 0.0 && eig.eigenvalues[i] > RANK_TOLERANCE * top)
        .count();
    if rank < target_dim {
        return Err(Error::RankDeficient {
            requested: target_dim,
            rank,
        });
    }

    let mut basis = Array2::<f64>::zeros((d, target_dim));
    for (out, &i) in order.iter().take(target_dim).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[[r, out]] = sign * v[r];
        }
    }
    let centered = x - &mean.insert_axis(Axis(0));
    Ok(centered.dot(&basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn spec(steps: Vec<PreprocessStep>) -> PreprocessSpec {
        PreprocessSpec { steps }
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn l2_normalizes_three_four_five() {
        let x = array![[3.0, 4.0], [0.0, 0.0]];
        let y = preprocess_matrix(&x, &all(2), &PreprocessSpec::l2()).unwrap();
        assert_eq!(y, array![[0.6, 0.8], [0.0, 0.0]]);
    }

    #[test]
    fn l1_rows_sum_to_one_in_absolute_value() {
        let x = array![[1.0, -3.0], [2.0, 2.0]];
        let y = preprocess_matrix(&x, &all(2), &spec(vec![PreprocessStep::L1Normalize])).unwrap();
        assert_eq!(y, array![[0.25, -0.75], [0.5, 0.5]]);
    }

    #[test]
    fn power_transform_output_is_unit_norm_and_uses_population_mean() {
        let x = array![[1.0, 0.0, 4.0], [0.0, 9.0, 1.0], [4.0, 4.0, 4.0], [100.0, 0.0, 0.0]];
        let s = spec(vec![PreprocessStep::power_transform()]);
        let a = preprocess_matrix(&x, &[0, 1, 2], &s).unwrap();
        let b = preprocess_matrix(&x, &[0, 1, 2, 3], &s).unwrap();
        for row in a.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        // the extra row only shifts the mean; rows 0..3 must differ
        assert!((&a - &b).iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn power_transform_rejects_negative_unless_shifting() {
        let x = array![[1.0, -0.5], [0.2, 0.3]];
        let err = preprocess_matrix(&x, &all(2), &spec(vec![PreprocessStep::power_transform()]))
            .unwrap_err();
        assert!(matches!(err, Error::NegativePowerInput { row: 0, col: 1, .. }));
        let shifted = spec(vec![PreprocessStep::PowerTransformCenter {
            beta: 0.5,
            epsilon: 1e-6,
            shift_negative: true,
        }]);
        assert!(preprocess_matrix(&x, &all(2), &shifted).is_ok());
    }

    #[test]
    fn pca_reports_achieved_rank() {
        // rank-1 data
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64) * (j as f64 + 1.0));
        match preprocess_matrix(&x, &all(6), &spec(vec![PreprocessStep::Pca { target_dim: 2 }])) {
            Err(Error::RankDeficient { requested: 2, rank: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pca_rejects_out_of_range_target() {
        let x = Array2::<f64>::eye(3);
        for m in [0, 4] {
            assert!(matches!(
                preprocess_matrix(&x, &all(3), &spec(vec![PreprocessStep::Pca { target_dim: m }])),
                Err(Error::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn pca_sign_convention_makes_largest_coordinate_positive() {
        let x = array![[2.0, 0.1], [-2.0, -0.1], [4.0, 0.2], [-4.0, -0.3]];
        let y = preprocess_matrix(&x, &all(4), &spec(vec![PreprocessStep::Pca { target_dim: 1 }]))
            .unwrap();
        // first component ~ +e0, so the projection of row 2 is positive
        assert!(y[[2, 0]] > 0.0);
    }

    #[test]
    fn parse_cli_lists() {
        let s: PreprocessSpec = "l2, pt=0.7, center, pca=5".parse().unwrap();
        assert_eq!(s.steps.len(), 4);
        assert_eq!(s.steps[3], PreprocessStep::Pca { target_dim: 5 });
        assert!(matches!(s.steps[1], PreprocessStep::PowerTransformCenter { beta, .. } if beta == 0.7));
        assert!("none".parse::<PreprocessSpec>().unwrap().is_identity());
        assert!("l3".parse::<PreprocessSpec>().is_err());
        assert!("l2+shift".parse::<PreprocessSpec>().is_err());
        let s: PreprocessSpec = "pt+shift".parse().unwrap();
        assert!(matches!(
            s.steps[0],
            PreprocessStep::PowerTransformCenter { shift_negative: true, .. }
        ));
    }
}
