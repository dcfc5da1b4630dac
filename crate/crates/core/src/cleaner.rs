//! Pseudo-label cleaning: a linear head trained with weighted cross-entropy,
//! per-example loss averaging, and selection of the lowest-loss examples.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearClassifier {
    /// `weights` is `N × d`, `bias` has length `N`.
    pub fn new(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Shape(format!(
                "{} weight rows but {} biases",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("classifier parameters must be finite".into()));
        }
        Ok(Self { weights, bias })
    }

    /// Class-mean initialization with zero bias. Classes without support rows
    /// get a zero weight row.
    pub fn imprint(x: ArrayView2<'_, f64>, y: &[usize], n_way: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        if x.nrows() == 0 {
            return Err(Error::DegenerateSupport);
        }
        let mut weights = Array2::zeros((n_way, x.ncols()));
        let mut counts = vec![0usize; n_way];
        for (i, (row, &label)) in x.outer_iter().zip(y).enumerate() {
            if label >= n_way {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    label: label as i64,
                    classes: n_way,
                });
            }
            let mut w = weights.row_mut(label);
            w += &row;
            counts[label] += 1;
        }
        for (mut w, &c) in weights.outer_iter_mut().zip(&counts) {
            if c > 0 {
                w /= c as f64;
            }
        }
        Ok(Self { weights, bias: Array1::zeros(n_way) })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        softmax_rows(&mut z);
        z
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Weighted cross-entropy over a batch and its gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    /// `Σ_i w_i·(−log g(x_i)_{y_i}) / n`.
    pub loss: f64,
    /// `w_i·(−log g(x_i)_{y_i})` per row.
    pub per_example: Vec<f64>,
    pub grad_weights: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

pub fn weighted_cross_entropy(
    clf: &LinearClassifier,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
) -> LossAndGrad {
    let n = x.nrows();
    let mut g = clf.logits(x);
    let mut per_example = Vec::with_capacity(n);
    for ((mut row, &label), &weight) in g.outer_iter_mut().zip(y).zip(w) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        per_example.push(weight * (log_sum - row[label]));
        row.mapv_inplace(|v| (v - log_sum).exp());
        row[label] -= 1.0;
        row *= weight / n as f64;
    }
    LossAndGrad {
        loss: per_example.iter().sum::<f64>() / n as f64,
        per_example,
        grad_weights: g.t().dot(&x),
        grad_bias: g.sum_axis(Axis(0)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Sawtooth from `lr_max` down to `lr_min` every `period` updates.
    Cyclic { period: usize, lr_min: f64, lr_max: f64 },
}

impl LrSchedule {
    /// Learning rate of update `t` (1-based).
    pub fn rate(&self, base: f64, t: usize) -> f64 {
        match *self {
            Self::Constant => base,
            Self::Cyclic { period, lr_min, lr_max } => {
                let s = (1 + (t - 1) % period) as f64 / period as f64;
                (1.0 - s) * lr_max + s * lr_min
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    FullBatch,
    MiniBatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanerConfig {
    pub learning_rate: f64,
    /// Full-batch updates, or passes over the data in mini-batch mode.
    pub iterations: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub selects_per_class: usize,
    pub lr_schedule: LrSchedule,
    pub batch_mode: BatchMode,
    pub seed: u64,
    /// Keep the full epoch × example loss matrix in the report.
    pub keep_epoch_losses: bool,
}

impl Default for CleanerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 1000,
            momentum: 0.9,
            weight_decay: 5e-4,
            selects_per_class: 3,
            lr_schedule: LrSchedule::Constant,
            batch_mode: BatchMode::FullBatch,
            seed: 0,
            keep_epoch_losses: false,
        }
    }
}

impl CleanerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.iterations == 0 {
            return bad("cleaner iterations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if self.selects_per_class == 0 {
            return bad("selects per class must be >= 1".into());
        }
        if let LrSchedule::Cyclic { period, lr_min, lr_max } = self.lr_schedule {
            if period == 0 || !(lr_min > 0.0) || !(lr_max >= lr_min) || !lr_max.is_finite() {
                return bad(format!("bad cyclic schedule period={period} lr={lr_min}..{lr_max}"));
            }
        }
        if self.batch_mode == BatchMode::MiniBatch(0) {
            return bad("mini-batch size must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CleaningReport {
    /// Mean recorded loss per pseudo-labeled example.
    pub avg_loss: Vec<f64>,
    /// Positions into the pseudo-labeled set, ascending.
    pub selected: Vec<usize>,
    /// Recorded losses, one row per epoch, when requested.
    pub per_epoch_loss: Option<Array2<f64>>,
    pub classifier: LinearClassifier,
}

struct Sgd {
    velocity_w: Array2<f64>,
    velocity_b: Array1<f64>,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    fn new(clf: &LinearClassifier, cfg: &CleanerConfig) -> Self {
        Self {
            velocity_w: Array2::zeros(clf.weights.raw_dim()),
            velocity_b: Array1::zeros(clf.bias.raw_dim()),
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    fn step(&mut self, clf: &mut LinearClassifier, grad: &LossAndGrad, lr: f64) {
        let (mu, wd) = (self.momentum, self.weight_decay);
        self.velocity_w *= mu;
        self.velocity_w.scaled_add(1.0, &grad.grad_weights);
        self.velocity_w.scaled_add(wd, &clf.weights);
        self.velocity_b *= mu;
        self.velocity_b.scaled_add(1.0, &grad.grad_bias);
        self.velocity_b.scaled_add(wd, &clf.bias);
        clf.weights.scaled_add(-lr, &self.velocity_w);
        clf.bias.scaled_add(-lr, &self.velocity_b);
    }
}

/// Runs the configured SGD on `(x, y, w)`. `record` receives the per-example
/// losses once per epoch.
fn train(
    clf: &mut LinearClassifier,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    cfg: &CleanerConfig,
    mut record: impl FnMut(&[f64]),
) -> Result<()> {
    let mut sgd = Sgd::new(clf, cfg);
    let check = |loss: f64, iteration: usize, learning_rate: f64| {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss { iteration, learning_rate })
        }
    };
    match cfg.batch_mode {
        BatchMode::FullBatch => {
            for t in 1..=cfg.iterations {
                let lr = cfg.lr_schedule.rate(cfg.learning_rate, t);
                let lg = weighted_cross_entropy(clf, x, y, w);
                check(lg.loss, t, lr)?;
                // Losses at the imprinted initialization are not recorded.
                if t > 1 {
                    record(&lg.per_example);
                }
                sgd.step(clf, &lg, lr);
            }
            let last = weighted_cross_entropy(clf, x, y, w);
            check(last.loss, cfg.iterations + 1, 0.0)?;
            record(&last.per_example);
        }
        BatchMode::MiniBatch(size) => {
            let n = x.nrows();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut order: Vec<usize> = (0..n).collect();
            let mut pass_losses = vec![0.0; n];
            let mut t = 0;
            for _ in 0..cfg.iterations {
                order.shuffle(&mut rng);
                for batch in order.chunks(size) {
                    t += 1;
                    let lr = cfg.lr_schedule.rate(cfg.learning_rate, t);
                    let bx = x.select(Axis(0), batch);
                    let by: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
                    let bw: Vec<f64> = batch.iter().map(|&i| w[i]).collect();
                    let lg = weighted_cross_entropy(clf, bx.view(), &by, &bw);
                    check(lg.loss, t, lr)?;
                    for (&i, &l) in batch.iter().zip(&lg.per_example) {
                        pass_losses[i] = l;
                    }
                    sgd.step(clf, &lg, lr);
                }
                record(&pass_losses);
            }
        }
    }
    Ok(())
}

/// Imprints on the labeled rows and trains with unit weights.
pub fn fit_classifier(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_way: usize,
    cfg: &CleanerConfig,
) -> Result<LinearClassifier> {
    cfg.validate()?;
    let mut clf = LinearClassifier::imprint(x, y, n_way)?;
    train(&mut clf, x, y, &vec![1.0; y.len()], cfg, |_| {})?;
    Ok(clf)
}

/// Trains a classifier on support plus weighted pseudo-labeled rows and
/// ranks the pseudo-labeled rows by their average loss.
pub fn train_and_score(
    support_x: ArrayView2<'_, f64>,
    support_y: &[usize],
    pseudo_x: ArrayView2<'_, f64>,
    pseudo_y: &[usize],
    pseudo_weight: &[f64],
    n_way: usize,
    cfg: &CleanerConfig,
) -> Result<CleaningReport> {
    let (l, m) = (support_x.nrows(), pseudo_x.nrows());
    if m == 0 {
        return Err(Error::EmptyPseudoSet);
    }
    if support_x.ncols() != pseudo_x.ncols() {
        return Err(Error::Shape("support and pseudo features differ in dimension".into()));
    }
    if pseudo_y.len() != m || pseudo_weight.len() != m || support_y.len() != l {
        return Err(Error::Shape("label or weight count does not match rows".into()));
    }
    if let Some((row, &bad)) = pseudo_y.iter().enumerate().find(|(_, &c)| c >= n_way) {
        return Err(Error::LabelOutOfRange { row, label: bad as i64, classes: n_way });
    }

    let clf = LinearClassifier::imprint(support_x, support_y, n_way)?;
    let x = ndarray::concatenate(Axis(0), &[support_x, pseudo_x])
        .map_err(|e| Error::Shape(e.to_string()))?;
    let y: Vec<usize> = support_y.iter().chain(pseudo_y).copied().collect();
    let w: Vec<f64> = std::iter::repeat_n(1.0, l).chain(pseudo_weight.iter().copied()).collect();
    let scored = average_losses(clf, x.view(), &y, &w, l, cfg)?;
    let selected = select_cleanest(&scored.avg_loss, pseudo_y, cfg.selects_per_class);
    Ok(CleaningReport {
        avg_loss: scored.avg_loss,
        selected,
        per_epoch_loss: scored.per_epoch_loss,
        classifier: scored.classifier,
    })
}

/// Average recorded losses of a training run.
#[derive(Debug, Clone)]
pub struct LossAverages {
    pub avg_loss: Vec<f64>,
    pub per_epoch_loss: Option<Array2<f64>>,
    pub classifier: LinearClassifier,
}

/// Trains `init` on `(x, y, w)` and averages the recorded per-example losses
/// of rows `skip..`.
pub fn average_losses(
    init: LinearClassifier,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    w: &[f64],
    skip: usize,
    cfg: &CleanerConfig,
) -> Result<LossAverages> {
    cfg.validate()?;
    if y.len() != x.nrows() || w.len() != x.nrows() || skip > x.nrows() {
        return Err(Error::Shape("label or weight count does not match rows".into()));
    }
    if init.dim() != x.ncols() {
        return Err(Error::Shape("classifier and features differ in dimension".into()));
    }
    let m = x.nrows() - skip;
    let mut clf = init;
    let mut sum = vec![0.0; m];
    let mut epochs = 0usize;
    let mut kept: Vec<f64> = Vec::new();
    train(&mut clf, x, y, w, cfg, |losses| {
        let tail = &losses[skip..];
        for (s, &v) in sum.iter_mut().zip(tail) {
            *s += v;
        }
        if cfg.keep_epoch_losses {
            kept.extend_from_slice(tail);
        }
        epochs += 1;
    })?;
    let per_epoch_loss = cfg
        .keep_epoch_losses
        .then(|| Array2::from_shape_vec((epochs, m), kept))
        .transpose()
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok(LossAverages {
        avg_loss: sum.iter().map(|s| s / epochs as f64).collect(),
        per_epoch_loss,
        classifier: clf,
    })
}

/// For each class, the `per_class` positions with the smallest loss among
/// those pseudo-labeled with that class; ties go to the lower position.
/// Returned in ascending order.
pub fn select_cleanest(losses: &[f64], pseudo_labels: &[usize], per_class: usize) -> Vec<usize> {
    let classes = pseudo_labels.iter().max().map_or(0, |&c| c + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in pseudo_labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut selected: Vec<usize> = by_class
        .into_iter()
        .flat_map(|mut members| {
            members.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
            members.truncate(per_class);
            members
        })
        .collect();
    selected.sort_unstable();
    selected
}

/// Moves the selected query positions into the support set with their
/// pseudo-labels. `support` holds `(node, label)` pairs, `query` holds nodes
/// and `pseudo_labels` is aligned with `query`. Remaining queries keep their
/// relative order.
pub fn augment(
    support: &[(usize, usize)],
    query: &[usize],
    selected: &[usize],
    pseudo_labels: &[usize],
) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    if pseudo_labels.len() != query.len() {
        return Err(Error::Shape("pseudo labels not aligned with query set".into()));
    }
    let mut taken = vec![false; query.len()];
    let mut new_support = support.to_vec();
    for &pos in selected {
        if pos >= query.len() || taken[pos] {
            return Err(Error::NotInQuery(pos));
        }
        taken[pos] = true;
        new_support.push((query[pos], pseudo_labels[pos]));
    }
    let remaining = query
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(&q, _)| q)
        .collect();
    Ok((new_support, remaining))
}
