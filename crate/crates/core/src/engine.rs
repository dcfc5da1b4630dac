//! Iterative inference over one episode: propagate, balance, clean, move the
//! cleanest queries into the support set, repeat.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};

use crate::balance::{
    balance_block, class_targets, confidence_weights, extract_unlabeled_block, BalanceConfig,
    Balanced, ClassPrior, ScoreMatrix,
};
use crate::cleaner::{augment, fit_classifier, select_cleanest, train_and_score, CleanerConfig};
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::features::{preprocess_matrix, PreprocessSpec};
use crate::graph::{build_graph, GraphConfig};
use crate::logreg::{LogRegConfig, LogisticRegression};
use crate::propagation::{make_label_matrix, propagate, PropagationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Propagation, balancing and iterative cleaning.
    Full,
    /// One propagation pass, argmax.
    LPOnly,
    LPBalance,
    LPClean,
    /// Iterative, selecting the highest balanced scores per class instead of
    /// the lowest cleaning losses.
    IProb,
    /// Iterative cleaning where the scores come from a linear classifier
    /// trained on the current support set.
    ClassifierBalance,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::LPOnly,
        Variant::LPBalance,
        Variant::LPClean,
        Variant::IProb,
        Variant::ClassifierBalance,
    ];

    pub fn balances(self) -> bool {
        matches!(self, Self::Full | Self::LPBalance | Self::IProb | Self::ClassifierBalance)
    }

    pub fn iterative(self) -> bool {
        !matches!(self, Self::LPOnly | Self::LPBalance)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::LPOnly => "lp",
            Self::LPBalance => "lp-balance",
            Self::LPClean => "lp-clean",
            Self::IProb => "iprob",
            Self::ClassifierBalance => "class-balance",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub graph: GraphConfig,
    pub propagation: PropagationConfig,
    pub balance: BalanceConfig,
    pub cleaner: CleanerConfig,
    pub variant: Variant,
    pub preprocess: PreprocessSpec,
    pub logreg: LogRegConfig,
    /// With a given class prior, subtract the examples already moved to the
    /// support set from each class budget.
    pub decrement_prior: bool,
    pub keep_trace: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig::default(),
            propagation: PropagationConfig::default(),
            balance: BalanceConfig::default(),
            cleaner: CleanerConfig::default(),
            variant: Variant::Full,
            preprocess: PreprocessSpec::l2(),
            logreg: LogRegConfig::default(),
            decrement_prior: true,
            keep_trace: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, n_way: usize) -> Result<()> {
        if self.graph.k == 0 || !(self.graph.gamma >= 1.0 && self.graph.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "graph needs k >= 1 and gamma >= 1, got k={} gamma={}",
                self.graph.k, self.graph.gamma
            )));
        }
        self.propagation.validate()?;
        self.balance.validate(n_way)?;
        self.cleaner.validate()
    }

    /// Whether the Sinkhorn projection runs for this configuration.
    pub fn balancing(&self) -> bool {
        self.balance.enabled && self.variant.balances()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub support_size: usize,
    pub queries_remaining: usize,
    /// Original query positions moved to the support set in this iteration.
    pub selected: Vec<usize>,
    pub marginal_violation: Option<f64>,
    pub sinkhorn_iterations: usize,
    pub max_solver_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct InferenceResult {
    /// One label per query, in the episode's query order.
    pub predicted: Vec<usize>,
    /// Row `i` holds query `i`'s scores from the iteration that admitted it.
    pub final_scores: ScoreMatrix,
    pub iterations_run: usize,
    /// Populated when `keep_trace` is set.
    pub trace: Vec<IterationTrace>,
}

/// Transductive inference on the episode's support and query sets.
pub fn transduce(ep: &Episode, cfg: &PipelineConfig) -> Result<InferenceResult> {
    if ep.query_len() == 0 {
        return Err(Error::Shape("episode has no queries".into()));
    }
    let x = stack(&[ep.support_x().view(), ep.query_x().view()])?;
    let population: Vec<usize> = (0..x.nrows()).collect();
    let x = preprocess_matrix(&x, &population, &cfg.preprocess)?;
    run_iterations(x.view(), ep.support_y(), ep.n_way(), cfg)
}

/// Logistic regression on the support set alone.
pub fn inductive_baseline(ep: &Episode, preprocess: &PreprocessSpec) -> Result<Vec<usize>> {
    inductive_with(ep, preprocess, &LogRegConfig::default())
}

fn inductive_with(ep: &Episode, preprocess: &PreprocessSpec, lr: &LogRegConfig) -> Result<Vec<usize>> {
    let (l, m) = (ep.support_len(), ep.query_len());
    let x = stack(&[ep.support_x().view(), ep.query_x().view()])?;
    let population: Vec<usize> = (0..l).collect();
    let x = preprocess_matrix(&x, &population, preprocess)?;
    let model = LogisticRegression::fit(x.slice(ndarray::s![..l, ..]), ep.support_y(), ep.n_way(), lr)?;
    let out = model.predict(x.slice(ndarray::s![l..l + m, ..]));
    Ok(out)
}

/// Pseudo-labels the unlabeled set transductively, then fits logistic
/// regression on support plus pseudo-labeled examples and predicts queries.
pub fn semi_supervised(ep: &Episode, cfg: &PipelineConfig) -> Result<Vec<usize>> {
    let (l, m, u) = (ep.support_len(), ep.query_len(), ep.unlabeled_len());
    if u == 0 {
        return inductive_with(ep, &cfg.preprocess, &cfg.logreg);
    }
    let x = stack(&[ep.support_x().view(), ep.unlabeled_x().view(), ep.query_x().view()])?;
    let population: Vec<usize> = (0..l + u).collect();
    let x = preprocess_matrix(&x, &population, &cfg.preprocess)?;
    let labeled = x.slice(ndarray::s![..l + u, ..]);
    let pseudo = run_iterations(labeled, ep.support_y(), ep.n_way(), cfg)?;
    let y: Vec<usize> = ep.support_y().iter().chain(&pseudo.predicted).copied().collect();
    let model = LogisticRegression::fit(labeled, &y, ep.n_way(), &cfg.logreg)?;
    Ok(model.predict(x.slice(ndarray::s![l + u..l + u + m, ..])))
}

fn stack(parts: &[ArrayView2<'_, f64>]) -> Result<Array2<f64>> {
    concatenate(Axis(0), parts).map_err(|e| Error::Shape(e.to_string()))
}

/// Class prior tracking for a given prior over the original unlabeled rows.
struct PriorBudget {
    budget: Vec<f64>,
}

impl PriorBudget {
    fn new(u: &[f64], total: usize) -> Self {
        Self { budget: u.iter().map(|&w| w * total as f64).collect() }
    }

    fn consume(&mut self, label: usize) {
        self.budget[label] -= 1.0;
    }

    fn prior(&self) -> Vec<f64> {
        let clamped: Vec<f64> = self.budget.iter().map(|&b| b.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total > 0.0 {
            clamped.into_iter().map(|b| b / total).collect()
        } else {
            vec![1.0 / clamped.len() as f64; clamped.len()]
        }
    }
}

struct Scored {
    balanced: Balanced,
    max_residual: Option<f64>,
}

/// Scores the current queries. `x` holds support rows followed by query rows.
fn score_queries(
    x: ArrayView2<'_, f64>,
    support_y: &[usize],
    n_way: usize,
    balance: &BalanceConfig,
    cfg: &PipelineConfig,
) -> Result<Scored> {
    let l = support_y.len();
    let balancing = cfg.balancing();
    if cfg.variant == Variant::ClassifierBalance {
        let clf = fit_classifier(x.slice(ndarray::s![..l, ..]), support_y, n_way, &cfg.cleaner)?;
        let probs = clf.predict_proba(x.slice(ndarray::s![l.., ..]));
        let row_sums = confidence_weights(&probs, 0, balance.weight_policy);
        let col_sums = balancing.then(|| class_targets(&row_sums, &balance.class_prior, n_way));
        let balanced = balance_block(&ScoreMatrix::new(probs)?, row_sums, col_sums, balance)?;
        return Ok(Scored { balanced, max_residual: None });
    }
    let t = x.nrows();
    let graph_cfg = GraphConfig { k: cfg.graph.k.min(t - 1), ..cfg.graph };
    let graph = build_graph(x, &graph_cfg)?;
    let y = make_label_matrix(support_y, n_way, t)?;
    let prop = propagate(&graph, &y, &cfg.propagation)?;
    let p = extract_unlabeled_block(&prop.scores, l)?;
    let row_sums = confidence_weights(&prop.scores, l, balance.weight_policy);
    let col_sums = balancing.then(|| class_targets(&row_sums, &balance.class_prior, n_way));
    let balanced = balance_block(&p, row_sums, col_sums, balance)?;
    Ok(Scored { balanced, max_residual: Some(prop.max_residual()) })
}

/// The iterative loop on preprocessed features: rows `0..L` are labeled by
/// `support_y`, the remaining rows are to be predicted.
pub fn run_iterations(
    x: ArrayView2<'_, f64>,
    support_y: &[usize],
    n_way: usize,
    cfg: &PipelineConfig,
) -> Result<InferenceResult> {
    cfg.validate(n_way)?;
    let l = support_y.len();
    let m = x.nrows().checked_sub(l).filter(|&m| m > 0).ok_or_else(|| {
        Error::Shape(format!("{} rows leave no queries after {l} support rows", x.nrows()))
    })?;
    if let Some((row, &label)) = support_y.iter().enumerate().find(|(_, &c)| c >= n_way) {
        return Err(Error::LabelOutOfRange { row, label: label as i64, classes: n_way });
    }

    let mut budget = match (&cfg.balance.class_prior, cfg.decrement_prior) {
        (ClassPrior::Given(u), true) => Some(PriorBudget::new(u, m)),
        _ => None,
    };
    let mut support: Vec<(usize, usize)> = support_y.iter().copied().enumerate().collect();
    let mut query: Vec<usize> = (l..l + m).collect();
    let mut predicted: Vec<Option<usize>> = vec![None; m];
    let mut final_scores = Array2::zeros((m, n_way));
    let mut trace = Vec::new();
    let mut iteration = 0;
    let per_round = cfg.cleaner.selects_per_class * n_way;

    while !query.is_empty() {
        iteration += 1;
        let step = |e: Error| e.at_iteration(iteration);
        let nodes: Vec<usize> = support.iter().map(|&(i, _)| i).chain(query.iter().copied()).collect();
        let xs = x.select(Axis(0), &nodes);
        let ys: Vec<usize> = support.iter().map(|&(_, c)| c).collect();
        let mut balance = cfg.balance.clone();
        if let Some(b) = &budget {
            balance.class_prior = ClassPrior::Given(b.prior());
        }
        let scored = score_queries(xs.view(), &ys, n_way, &balance, cfg).map_err(step)?;
        let balanced = &scored.balanced;
        let pseudo = &balanced.pseudo.labels;

        let admit_all = !cfg.variant.iterative() || query.len() <= per_round;
        let selected: Vec<usize> = if admit_all {
            (0..query.len()).collect()
        } else if cfg.variant == Variant::IProb {
            let s = balanced.scores.matrix();
            let neg: Vec<f64> = pseudo.iter().enumerate().map(|(i, &c)| -s[[i, c]]).collect();
            select_cleanest(&neg, pseudo, cfg.cleaner.selects_per_class)
        } else {
            let s = support.len();
            let cleaner = CleanerConfig { seed: cfg.cleaner.seed ^ iteration as u64, ..cfg.cleaner.clone() };
            train_and_score(
                xs.slice(ndarray::s![..s, ..]),
                &ys,
                xs.slice(ndarray::s![s.., ..]),
                pseudo,
                &balanced.row_sums,
                n_way,
                &cleaner,
            )
            .map_err(step)?
            .selected
        };
        if selected.is_empty() {
            return Err(step(Error::EmptyPseudoSet));
        }

        let mut moved = Vec::with_capacity(selected.len());
        for &pos in &selected {
            let original = query[pos] - l;
            predicted[original] = Some(pseudo[pos]);
            final_scores.row_mut(original).assign(&balanced.scores.matrix().row(pos));
            if let Some(b) = &mut budget {
                b.consume(pseudo[pos]);
            }
            moved.push(original);
        }
        if cfg.keep_trace {
            trace.push(IterationTrace {
                support_size: support.len(),
                queries_remaining: query.len(),
                selected: moved,
                marginal_violation: balanced.marginal_violation,
                sinkhorn_iterations: balanced.sinkhorn_iterations,
                max_solver_residual: scored.max_residual,
            });
        }
        let (s, q) = augment(&support, &query, &selected, pseudo).map_err(step)?;
        support = s;
        query = q;
    }

    Ok(InferenceResult {
        predicted: predicted.into_iter().map(|p| p.expect("every query admitted")).collect(),
        final_scores: ScoreMatrix::new(final_scores)?,
        iterations_run: iteration,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{sample_episode, EpisodeSpec};
    use crate::features::{generate_blobs, BlobSpec, FeatureSet};

    fn blobs(sigma: f64) -> FeatureSet {
        generate_blobs(&BlobSpec {
            class_count: 8,
            dim: 16,
            mean_scale: 1.0,
            noise_sigma: sigma,
            examples_per_class: 40,
            seed: 2,
        })
        .unwrap()
    }

    fn fast() -> PipelineConfig {
        PipelineConfig {
            cleaner: CleanerConfig { iterations: 100, ..Default::default() },
            keep_trace: true,
            ..Default::default()
        }
    }

    #[test]
    fn separable_episode_is_solved_by_every_variant() {
        let fs = blobs(1e-3);
        let ep = sample_episode(&fs, &EpisodeSpec { seed: 1, ..Default::default() }).unwrap();
        let truth = ep.query_labels().reveal().clone();
        for variant in Variant::ALL {
            let out = transduce(&ep, &PipelineConfig { variant, ..fast() }).unwrap();
            assert_eq!(out.predicted, truth, "{variant}");
        }
        assert_eq!(inductive_baseline(&ep, &PreprocessSpec::l2()).unwrap(), truth);
    }

    #[test]
    fn full_variant_needs_at_most_five_rounds() {
        let fs = blobs(0.4);
        let ep = sample_episode(&fs, &EpisodeSpec { seed: 4, ..Default::default() }).unwrap();
        let out = transduce(&ep, &fast()).unwrap();
        assert!(out.iterations_run <= 5, "{}", out.iterations_run);
        let sizes: Vec<usize> = out.trace.iter().map(|t| t.queries_remaining).collect();
        assert!(sizes.windows(2).all(|w| w[1] < w[0]), "{sizes:?}");
        let admitted: usize = out.trace.iter().map(|t| t.selected.len()).sum();
        assert_eq!(admitted, 75);
        for t in &out.trace {
            assert!(t.marginal_violation.unwrap() <= 1e-6);
        }
    }

    #[test]
    fn single_pass_variants_run_once() {
        let fs = blobs(0.4);
        let ep = sample_episode(&fs, &EpisodeSpec::default()).unwrap();
        for variant in [Variant::LPOnly, Variant::LPBalance] {
            let out = transduce(&ep, &PipelineConfig { variant, ..fast() }).unwrap();
            assert_eq!(out.iterations_run, 1);
        }
    }

    #[test]
    fn prior_budget_decrements() {
        let mut b = PriorBudget::new(&[0.5, 0.25, 0.25], 8);
        for _ in 0..4 {
            b.consume(0);
        }
        assert_eq!(b.prior(), vec![0.0, 0.5, 0.5]);
        b.consume(1);
        b.consume(1);
        b.consume(1);
        assert_eq!(b.prior(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn semi_supervised_without_unlabeled_is_inductive() {
        let fs = blobs(0.5);
        let ep = sample_episode(&fs, &EpisodeSpec { seed: 8, ..Default::default() }).unwrap();
        assert_eq!(
            semi_supervised(&ep, &fast()).unwrap(),
            inductive_baseline(&ep, &PreprocessSpec::l2()).unwrap()
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }
}
