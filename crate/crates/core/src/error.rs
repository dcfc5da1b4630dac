use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed data at row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label {label} at row {row} is out of range [0, {classes})")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        classes: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("negative entry {value} at row {row}, column {col} under power transform (enable shifting)")]
    NegativePowerInput { row: usize, col: usize, value: f64 },

    #[error("PCA needs {requested} components but the statistics population has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("feature set carries no labels")]
    Unlabeled,

    #[error("class {class} has {available} examples but the episode needs {needed}")]
    InsufficientExamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("conjugate gradient stalled on column {column}: relative residual {residual:.3e} after {iterations} iterations")]
    SolverNotConverged {
        column: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("Sinkhorn target is structurally infeasible: {0}")]
    SinkhornInfeasible(String),

    #[error("Sinkhorn did not converge: max marginal violation {violation:.3e} after {iterations} iterations")]
    SinkhornNotConverged { violation: f64, iterations: usize },

    #[error("non-finite loss at iteration {iteration} (learning rate {learning_rate})")]
    NonFiniteLoss { iteration: usize, learning_rate: f64 },

    #[error("pseudo-labeled set is empty")]
    EmptyPseudoSet,

    #[error("node {0} is not in the query set")]
    NotInQuery(usize),

    #[error("support set covers a single class")]
    DegenerateSupport,

    #[error("iteration {iteration}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("task {task}")]
    AtTask {
        task: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// This error's message followed by those of its sources.
    pub fn full_message(&self) -> String {
        let mut msg = self.to_string();
        let mut next = std::error::Error::source(self);
        while let Some(e) = next {
            msg.push_str(": ");
            msg.push_str(&e.to_string());
            next = e.source();
        }
        msg
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_task(self, task: usize) -> Self {
        Error::AtTask {
            task,
            source: Box::new(self),
        }
    }
}
