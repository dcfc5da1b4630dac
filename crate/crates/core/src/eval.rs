//! Multi-task evaluation: accuracy statistics, ablation grids and the
//! noisy-label loss experiment. This is the only module that reads hidden
//! labels.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::balance::{ClassPrior, WeightPolicy};
use crate::cleaner::{average_losses, CleanerConfig, LinearClassifier};
use crate::engine::{inductive_baseline, semi_supervised, transduce, PipelineConfig, Variant};
use crate::episodes::{sample_episode, true_prior, Episode, EpisodeSpec, Hidden, QueryCount};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Class prior used by the balancing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorMode {
    /// Balancing switched off.
    None,
    Uniform,
    /// The episode's actual class proportions.
    True,
}

impl FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "uniform" => Ok(Self::Uniform),
            "true" => Ok(Self::True),
            _ => Err(Error::InvalidConfig(format!("unknown prior {s:?}"))),
        }
    }
}

impl fmt::Display for PriorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Uniform => "uniform",
            Self::True => "true",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub episode: EpisodeSpec,
    pub pipeline: PipelineConfig,
    pub prior: PriorMode,
    /// Logistic regression on the support set instead of the pipeline.
    pub inductive: bool,
    pub n_tasks: usize,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            episode: EpisodeSpec::default(),
            pipeline: PipelineConfig::default(),
            prior: PriorMode::Uniform,
            inductive: false,
            n_tasks: 1000,
            seed: 0,
            threads: None,
        }
    }
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::InvalidConfig("number of tasks must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("thread count must be >= 1".into()));
        }
        self.episode.validate()?;
        self.pipeline.validate(self.episode.n_way)
    }

    /// Short row label for tables.
    pub fn label(&self) -> String {
        if self.inductive {
            "inductive".into()
        } else {
            self.pipeline.variant.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub mean_accuracy: f64,
    pub ci95: f64,
    pub per_task_accuracy: Vec<f64>,
    /// Mean wall time of one task in seconds.
    pub wall_time_per_task: f64,
}

/// Mean and the `1.96·s/√n` half-width, `s` the sample standard deviation.
pub fn summarize(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Seed of task `task` under benchmark seed `seed`.
pub fn task_seed(seed: u64, task: usize) -> u64 {
    let mut z = seed ^ (task as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn proportions(labels: &Hidden<Vec<usize>>, n_way: usize) -> Vec<f64> {
    let labels = labels.reveal();
    let mut counts = vec![0.0; n_way];
    for &l in labels {
        counts[l] += 1.0;
    }
    counts.into_iter().map(|c| c / labels.len() as f64).collect()
}

/// Fraction of predictions equal to the hidden query labels.
pub fn accuracy(ep: &Episode, predicted: &[usize]) -> Result<f64> {
    let truth = ep.query_labels().reveal();
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} queries",
            predicted.len(),
            truth.len()
        )));
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Pipeline configuration with the task's prior and seed filled in.
pub fn task_pipeline(ep: &Episode, spec: &BenchmarkSpec, seed: u64) -> PipelineConfig {
    let mut cfg = spec.pipeline.clone();
    cfg.cleaner.seed = seed;
    match spec.prior {
        PriorMode::None => cfg.balance.enabled = false,
        PriorMode::Uniform => cfg.balance.class_prior = ClassPrior::Uniform,
        PriorMode::True => {
            let u = if ep.unlabeled_len() > 0 {
                proportions(ep.unlabeled_labels(), ep.n_way())
            } else {
                true_prior(ep)
            };
            cfg.balance.class_prior = ClassPrior::Given(u);
        }
    }
    cfg
}

/// Predictions for one episode under the benchmark's mode.
pub fn predict_episode(ep: &Episode, spec: &BenchmarkSpec, seed: u64) -> Result<Vec<usize>> {
    if spec.inductive {
        return inductive_baseline(ep, &spec.pipeline.preprocess);
    }
    let cfg = task_pipeline(ep, spec, seed);
    if ep.unlabeled_len() > 0 {
        semi_supervised(ep, &cfg)
    } else {
        Ok(transduce(ep, &cfg)?.predicted)
    }
}

fn run_task(fs: &FeatureSet, spec: &BenchmarkSpec, task: usize) -> Result<(f64, f64)> {
    let start = Instant::now();
    let seed = task_seed(spec.seed, task);
    let ep = sample_episode(fs, &EpisodeSpec { seed, ..spec.episode.clone() })?;
    let predicted = predict_episode(&ep, spec, seed)?;
    Ok((accuracy(&ep, &predicted)?, start.elapsed().as_secs_f64()))
}

/// Runs `f` on a pool of `threads` workers, or the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub fn run_benchmark(fs: &FeatureSet, spec: &BenchmarkSpec) -> Result<BenchmarkResult> {
    spec.validate()?;
    let outcomes: Vec<Result<(f64, f64)>> = with_threads(spec.threads, || {
        (0..spec.n_tasks)
            .into_par_iter()
            .map(|task| run_task(fs, spec, task).map_err(|e| e.at_task(task)))
            .collect()
    })?;
    let mut per_task_accuracy = Vec::with_capacity(spec.n_tasks);
    let mut seconds = 0.0;
    for outcome in outcomes {
        let (acc, secs) = outcome?;
        per_task_accuracy.push(acc);
        seconds += secs;
    }
    let (mean_accuracy, ci95) = summarize(&per_task_accuracy);
    Ok(BenchmarkResult {
        mean_accuracy,
        ci95,
        per_task_accuracy,
        wall_time_per_task: seconds / spec.n_tasks as f64,
    })
}

/// Predefined ablation grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grid {
    /// Inductive baseline and every pipeline variant.
    Components,
    /// No balancing, uniform prior and true prior with queries per class
    /// drawn from 10..=20.
    Priors,
    /// Uniform against entropy-based confidence weights.
    Weights,
}

impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" | "components" => Ok(Self::Components),
            "table7" | "priors" => Ok(Self::Priors),
            "table9" | "weights" => Ok(Self::Weights),
            _ => Err(Error::InvalidConfig(format!("unknown grid {s:?}"))),
        }
    }
}

pub fn grid_rows(grid: Grid, base: &BenchmarkSpec) -> Vec<(String, BenchmarkSpec)> {
    let with_variant = |variant| {
        let mut s = base.clone();
        s.pipeline.variant = variant;
        s
    };
    match grid {
        Grid::Components => {
            let mut rows = vec![("inductive".to_string(), BenchmarkSpec { inductive: true, ..base.clone() })];
            for v in [
                Variant::LPOnly,
                Variant::LPBalance,
                Variant::LPClean,
                Variant::Full,
                Variant::IProb,
                Variant::ClassifierBalance,
            ] {
                rows.push((v.to_string(), with_variant(v)));
            }
            rows
        }
        Grid::Priors => [PriorMode::None, PriorMode::Uniform, PriorMode::True]
            .into_iter()
            .map(|prior| {
                let mut s = with_variant(Variant::Full);
                s.prior = prior;
                s.episode.queries = QueryCount::Range { lo: 10, hi: 20 };
                (format!("prior={prior}"), s)
            })
            .collect(),
        Grid::Weights => [("weights=uniform", WeightPolicy::Uniform), ("weights=entropy", WeightPolicy::Entropy)]
            .into_iter()
            .map(|(label, policy)| {
                let mut s = with_variant(Variant::Full);
                s.pipeline.balance.weight_policy = policy;
                (label.to_string(), s)
            })
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub n_tasks: usize,
    /// Failure message when the row could not be computed.
    pub outcome: std::result::Result<BenchmarkResult, String>,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, label: &str) -> Option<&BenchmarkResult> {
        self.rows.iter().find(|r| r.label == label)?.outcome.as_ref().ok()
    }

    pub fn render_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  {:>7}  {:>15}  {:>10}\n", "variant", "tasks", "accuracy (%)", "s/task");
        for r in &self.rows {
            match &r.outcome {
                Ok(b) => writeln!(
                    out,
                    "{:<width$}  {:>7}  {:>8.2} ± {:<4.2}  {:>10.4}",
                    r.label,
                    r.n_tasks,
                    100.0 * b.mean_accuracy,
                    100.0 * b.ci95,
                    b.wall_time_per_task
                ),
                Err(e) => writeln!(out, "{:<width$}  {:>7}  failed: {e}", r.label, r.n_tasks),
            }
            .expect("write to string");
        }
        out
    }

    /// `variant,n_tasks,mean,ci95,seconds_per_task`; failed rows carry `NaN`.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("variant,n_tasks,mean,ci95,seconds_per_task\n");
        for r in &self.rows {
            let (m, c, s) = match &r.outcome {
                Ok(b) => (b.mean_accuracy, b.ci95, b.wall_time_per_task),
                Err(_) => (f64::NAN, f64::NAN, f64::NAN),
            };
            writeln!(out, "{},{},{m},{c},{s}", r.label, r.n_tasks).expect("write to string");
        }
        out
    }
}

/// Runs every row; a failing row is recorded and the grid continues.
pub fn ablation_grid(fs: &FeatureSet, rows: Vec<(String, BenchmarkSpec)>) -> AblationTable {
    AblationTable {
        rows: rows
            .into_iter()
            .map(|(label, spec)| AblationRow {
                label,
                n_tasks: spec.n_tasks,
                outcome: run_benchmark(fs, &spec).map_err(|e| e.full_message()),
            })
            .collect(),
    }
}

/// Average cleaning losses of examples with correct and with flipped labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistogram {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

impl LossHistogram {
    /// Whether the pooled minimum belongs to a clean example.
    pub fn minimum_is_clean(&self) -> bool {
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        min(&self.clean) <= min(&self.noisy)
    }

    /// `loss,is_clean` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("loss,is_clean\n");
        for (values, flag) in [(&self.clean, 1), (&self.noisy, 0)] {
            for v in values.iter() {
                writeln!(out, "{v},{flag}").expect("write to string");
            }
        }
        out
    }
}

/// Draws `n_examples` labeled rows, flips `round(noise_fraction·n)` of their
/// labels to a uniformly chosen different class, trains the cleaner on the
/// noisy set (imprinted from its own noisy class means) and splits the
/// average losses by whether the label was flipped.
pub fn loss_histogram_experiment(
    fs: &FeatureSet,
    noise_fraction: f64,
    n_examples: usize,
    cfg: &CleanerConfig,
    seed: u64,
) -> Result<LossHistogram> {
    if !(noise_fraction > 0.0 && noise_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("noise fraction {noise_fraction} outside (0, 1)")));
    }
    let labels = fs.labels().ok_or(Error::Unlabeled)?;
    let classes = fs.class_count();
    if classes < 2 {
        return Err(Error::InvalidConfig("label noise needs at least two classes".into()));
    }
    if n_examples == 0 || n_examples > fs.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_examples} examples requested from {} rows",
            fs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = index::sample(&mut rng, fs.len(), n_examples).into_vec();
    let x = fs.data().select(Axis(0), &rows);
    let mut y: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    let n_flip = ((noise_fraction * n_examples as f64).round() as usize).clamp(1, n_examples);
    let mut flipped = vec![false; n_examples];
    for i in index::sample(&mut rng, n_examples, n_flip) {
        let shift = rng.gen_range(1..classes);
        y[i] = (y[i] + shift) % classes;
        flipped[i] = true;
    }
    let init = LinearClassifier::imprint(x.view(), &y, classes)?;
    let scored = average_losses(init, x.view(), &y, &vec![1.0; n_examples], 0, cfg)?;
    let (mut clean, mut noisy) = (Vec::new(), Vec::new());
    for (loss, is_noisy) in scored.avg_loss.into_iter().zip(flipped) {
        if is_noisy { noisy.push(loss) } else { clean.push(loss) }
    }
    Ok(LossHistogram { clean, noisy })
}
