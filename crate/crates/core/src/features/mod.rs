//! Embedding matrices, their on-disk formats and pre-processing.
//!
//! Every row of a [`FeatureSet`] is one example embedded in the feature space;
//! labels are optional and, when present, lie in `[0, class_count)`.

mod blobs;
mod io;
mod preprocess;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

pub use blobs::{generate_blobs, BlobSpec};
pub use io::{labels_path, load_features, save_features, FeatureFormat};
pub use preprocess::{preprocess, preprocess_matrix, PreprocessSpec, PreprocessStep};

/// An immutable `T x d` embedding matrix with optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    data: Array2<f64>,
    labels: Option<Vec<usize>>,
    class_count: usize,
    source_tag: String,
}

impl FeatureSet {
    /// Builds a feature set, inferring the class count as `max(label) + 1`.
    pub fn new(
        data: Array2<f64>,
        labels: Option<Vec<usize>>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let class_count = labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|m| m + 1))
            .unwrap_or(0);
        Self::with_class_count(data, labels, class_count, source_tag)
    }

    pub fn with_class_count(
        data: Array2<f64>,
        labels: Option<Vec<usize>>,
        class_count: usize,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        check_finite(&data)?;
        if let Some(labels) = &labels {
            if labels.len() != rows {
                return Err(Error::Shape(format!(
                    "{} labels for {rows} rows",
                    labels.len()
                )));
            }
            if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count)
            {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: label as i64,
                    classes: class_count,
                });
            }
        }
        Ok(Self {
            data,
            labels,
            class_count,
            source_tag: source_tag.into(),
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Number of examples `T`.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Row indices grouped by class, or `None` for unlabeled sets.
    pub fn class_members(&self) -> Option<Vec<Vec<usize>>> {
        let labels = self.labels.as_ref()?;
        let mut members = vec![Vec::new(); self.class_count];
        for (row, &label) in labels.iter().enumerate() {
            members[label].push(row);
        }
        Some(members)
    }

    /// Copies the given rows into a new matrix, in the given order.
    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.data.select(Axis(0), indices)
    }

    pub(crate) fn replace_data(&self, data: Array2<f64>, tag_suffix: &str) -> Result<Self> {
        Self::with_class_count(
            data,
            self.labels.clone(),
            self.class_count,
            format!("{}{}", self.source_tag, tag_suffix),
        )
    }
}

pub(crate) fn check_finite(data: &Array2<f64>) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}
