//! N-way K-shot episode sampling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{save_features, FeatureFormat, FeatureSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryCount {
    Fixed(usize),
    /// Per-class count drawn uniformly from `lo..=hi`.
    Range { lo: usize, hi: usize },
}

impl QueryCount {
    pub fn max(&self) -> usize {
        match *self {
            Self::Fixed(q) => q,
            Self::Range { hi, .. } => hi,
        }
    }
}

impl FromStr for QueryCount {
    type Err = Error;

    /// `"15"` or `"10:20"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad query count {s:?}, expected N or LO:HI"));
        match s.split_once(':') {
            None => s.trim().parse().map(Self::Fixed).map_err(|_| bad()),
            Some((lo, hi)) => Ok(Self::Range {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
            }),
        }
    }
}

impl fmt::Display for QueryCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fixed(q) => write!(f, "{q}"),
            Self::Range { lo, hi } => write!(f, "{lo}:{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries: QueryCount,
    pub unlabeled_per_class: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            queries: QueryCount::Fixed(15),
            unlabeled_per_class: 0,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidConfig(format!("n-way = {} must be >= 2", self.n_way)));
        }
        if self.k_shot == 0 {
            return Err(Error::InvalidConfig("k-shot must be >= 1".into()));
        }
        if let QueryCount::Range { lo, hi } = self.queries {
            if lo == 0 || lo > hi {
                return Err(Error::InvalidConfig(format!(
                    "query range {lo}:{hi} needs 1 <= lo <= hi"
                )));
            }
        }
        Ok(())
    }
}

/// A value only the evaluation code is allowed to look at.
#[derive(Clone, PartialEq)]
pub struct Hidden<T>(T);

impl<T> Hidden<T> {
    pub(crate) fn new(value: T) -> Self {
        Self(value)
    }

    pub(crate) fn reveal(&self) -> &T {
        &self.0
    }
}

impl<T> fmt::Debug for Hidden<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Hidden(..)")
    }
}

/// One few-shot task. Class indices are remapped to `[0, n_way)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    n_way: usize,
    support_x: Array2<f64>,
    support_y: Vec<usize>,
    query_x: Array2<f64>,
    query_y: Hidden<Vec<usize>>,
    unlabeled_x: Array2<f64>,
    unlabeled_y: Hidden<Vec<usize>>,
    class_map: Vec<usize>,
    support_index: Vec<usize>,
    query_index: Vec<usize>,
    unlabeled_index: Vec<usize>,
}

impl Episode {
    /// Builds an episode from explicit splits. The query and unlabeled labels
    /// become hidden. Source indices are numbered consecutively
    /// support, query, unlabeled.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        n_way: usize,
        support_x: Array2<f64>,
        support_y: Vec<usize>,
        query_x: Array2<f64>,
        query_y: Vec<usize>,
        unlabeled_x: Array2<f64>,
        unlabeled_y: Vec<usize>,
    ) -> Result<Self> {
        let d = support_x.ncols();
        if query_x.ncols() != d || unlabeled_x.ncols() != d {
            return Err(Error::Shape("episode splits differ in feature dimension".into()));
        }
        for (x, y, what) in [
            (&support_x, &support_y, "support"),
            (&query_x, &query_y, "query"),
            (&unlabeled_x, &unlabeled_y, "unlabeled"),
        ] {
            if x.nrows() != y.len() {
                return Err(Error::Shape(format!(
                    "{what} has {} rows and {} labels",
                    x.nrows(),
                    y.len()
                )));
            }
            if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= n_way) {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: label as i64,
                    classes: n_way,
                });
            }
        }
        let (l, m, u) = (support_x.nrows(), query_x.nrows(), unlabeled_x.nrows());
        Ok(Self {
            n_way,
            support_x,
            support_y,
            query_x,
            query_y: Hidden::new(query_y),
            unlabeled_x,
            unlabeled_y: Hidden::new(unlabeled_y),
            class_map: (0..n_way).collect(),
            support_index: (0..l).collect(),
            query_index: (l..l + m).collect(),
            unlabeled_index: (l + m..l + m + u).collect(),
        })
    }

    pub fn n_way(&self) -> usize {
        self.n_way
    }

    pub fn dim(&self) -> usize {
        self.support_x.ncols()
    }

    pub fn support_x(&self) -> &Array2<f64> {
        &self.support_x
    }

    pub fn support_y(&self) -> &[usize] {
        &self.support_y
    }

    pub fn query_x(&self) -> &Array2<f64> {
        &self.query_x
    }

    pub fn unlabeled_x(&self) -> &Array2<f64> {
        &self.unlabeled_x
    }

    pub fn query_labels(&self) -> &Hidden<Vec<usize>> {
        &self.query_y
    }

    pub fn unlabeled_labels(&self) -> &Hidden<Vec<usize>> {
        &self.unlabeled_y
    }

    /// Original class id of each episode class.
    pub fn class_map(&self) -> &[usize] {
        &self.class_map
    }

    /// Source-row indices of each split.
    pub fn support_index(&self) -> &[usize] {
        &self.support_index
    }

    pub fn query_index(&self) -> &[usize] {
        &self.query_index
    }

    pub fn unlabeled_index(&self) -> &[usize] {
        &self.unlabeled_index
    }

    pub fn support_len(&self) -> usize {
        self.support_x.nrows()
    }

    pub fn query_len(&self) -> usize {
        self.query_x.nrows()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled_x.nrows()
    }

    /// The same episode with queries reordered: new query `i` is old query `order[i]`.
    pub fn with_query_order(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.query_len()).collect::<Vec<_>>() {
            return Err(Error::Shape("query order is not a permutation".into()));
        }
        let mut out = self.clone();
        out.query_x = self.query_x.select(Axis(0), order);
        out.query_y = Hidden::new(order.iter().map(|&i| self.query_y.0[i]).collect());
        out.query_index = order.iter().map(|&i| self.query_index[i]).collect();
        Ok(out)
    }

    /// The same episode without its unlabeled split.
    pub fn without_unlabeled(&self) -> Self {
        let mut out = self.clone();
        out.unlabeled_x = Array2::zeros((0, self.dim()));
        out.unlabeled_y = Hidden::new(Vec::new());
        out.unlabeled_index.clear();
        out
    }

    /// Writes each split to `<dir>/<stem>.<split>.f32`; only the support file
    /// carries labels. Returns the written paths.
    pub fn write_raw(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let splits = [
            ("support", &self.support_x, Some(self.support_y.clone())),
            ("query", &self.query_x, None),
            ("unlabeled", &self.unlabeled_x, None),
        ];
        for (name, x, labels) in splits {
            if x.nrows() == 0 {
                continue;
            }
            let fs = FeatureSet::with_class_count(x.clone(), labels, self.n_way, name)?;
            let path = dir.join(format!("{stem}.{name}.f32"));
            save_features(&fs, &path, FeatureFormat::RawF32)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn sample_episode(fs: &FeatureSet, spec: &EpisodeSpec) -> Result<Episode> {
    spec.validate()?;
    let members = fs.class_members().ok_or(Error::Unlabeled)?;
    if spec.n_way > members.len() {
        return Err(Error::InvalidConfig(format!(
            "{}-way episodes need at least that many classes, feature set has {}",
            spec.n_way,
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = index::sample(&mut rng, members.len(), spec.n_way).into_vec();

    let (n, k) = (spec.n_way, spec.k_shot);
    let mut support_index = Vec::with_capacity(n * k);
    let mut support_y = Vec::with_capacity(n * k);
    let mut query: Vec<(usize, usize)> = Vec::new();
    let mut unlabeled: Vec<(usize, usize)> = Vec::new();
    for (local, &class) in classes.iter().enumerate() {
        let q = match spec.queries {
            QueryCount::Fixed(q) => q,
            QueryCount::Range { lo, hi } => rng.gen_range(lo..=hi),
        };
        let needed = k + q + spec.unlabeled_per_class;
        let pool = &members[class];
        if pool.len() < needed {
            return Err(Error::InsufficientExamples {
                class,
                available: pool.len(),
                needed,
            });
        }
        let picks = index::sample(&mut rng, pool.len(), needed).into_vec();
        let mut picks = picks.into_iter().map(|p| pool[p]);
        for row in picks.by_ref().take(k) {
            support_index.push(row);
            support_y.push(local);
        }
        query.extend(picks.by_ref().take(q).map(|row| (row, local)));
        unlabeled.extend(picks.map(|row| (row, local)));
    }
    query.shuffle(&mut rng);
    unlabeled.shuffle(&mut rng);

    let (query_index, query_y): (Vec<_>, Vec<_>) = query.into_iter().unzip();
    let (unlabeled_index, unlabeled_y): (Vec<_>, Vec<_>) = unlabeled.into_iter().unzip();
    Ok(Episode {
        n_way: n,
        support_x: fs.rows(&support_index),
        support_y,
        query_x: fs.rows(&query_index),
        query_y: Hidden::new(query_y),
        unlabeled_x: fs.rows(&unlabeled_index),
        unlabeled_y: Hidden::new(unlabeled_y),
        class_map: classes,
        support_index,
        query_index,
        unlabeled_index,
    })
}

/// Normalized per-class query counts of the episode.
pub fn true_prior(ep: &Episode) -> Vec<f64> {
    let labels = ep.query_y.reveal();
    let mut counts = vec![0.0; ep.n_way];
    for &l in labels {
        counts[l] += 1.0;
    }
    if labels.is_empty() {
        return vec![1.0 / ep.n_way as f64; ep.n_way];
    }
    let total = labels.len() as f64;
    counts.into_iter().map(|c| c / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_blobs, BlobSpec};

    fn source(classes: usize, per: usize) -> FeatureSet {
        generate_blobs(&BlobSpec {
            class_count: classes,
            dim: 8,
            mean_scale: 1.0,
            noise_sigma: 0.3,
            examples_per_class: per,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn one_shot_split_sizes() {
        let fs = source(5, 100);
        let spec = EpisodeSpec { seed: 3, ..Default::default() };
        let ep = sample_episode(&fs, &spec).unwrap();
        assert_eq!(ep.support_len(), 5);
        assert_eq!(ep.query_len(), 75);
        assert_eq!(ep.unlabeled_len(), 0);
        let mut counts = [0; 5];
        for &y in ep.support_y() {
            counts[y] += 1;
        }
        assert_eq!(counts, [1; 5]);
    }

    #[test]
    fn semi_supervised_split_sizes() {
        let fs = source(5, 100);
        let spec = EpisodeSpec {
            k_shot: 5,
            unlabeled_per_class: 50,
            ..Default::default()
        };
        let ep = sample_episode(&fs, &spec).unwrap();
        assert_eq!((ep.support_len(), ep.query_len(), ep.unlabeled_len()), (25, 75, 250));
    }

    #[test]
    fn query_range_is_bounded_and_reproducible() {
        let fs = source(6, 60);
        let spec = EpisodeSpec {
            queries: QueryCount::Range { lo: 10, hi: 20 },
            seed: 9,
            ..Default::default()
        };
        let a = sample_episode(&fs, &spec).unwrap();
        let b = sample_episode(&fs, &spec).unwrap();
        assert_eq!(a, b);
        let mut counts = vec![0; 5];
        for &y in a.query_labels().reveal() {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| (10..=20).contains(&c)), "{counts:?}");
    }

    #[test]
    fn true_prior_normalizes_counts() {
        let n = 5;
        let x = |rows| Array2::zeros((rows, 2));
        let mut qy = Vec::new();
        for (c, count) in [10, 20, 10, 10, 10].into_iter().enumerate() {
            qy.extend(std::iter::repeat_n(c, count));
        }
        let ep = Episode::from_parts(n, x(5), (0..5).collect(), x(60), qy, x(0), vec![]).unwrap();
        let prior = true_prior(&ep);
        let expected = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in prior.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn insufficient_class_is_named() {
        let fs = source(5, 10);
        let spec = EpisodeSpec { queries: QueryCount::Fixed(15), ..Default::default() };
        assert!(matches!(
            sample_episode(&fs, &spec),
            Err(Error::InsufficientExamples { needed: 16, available: 10, .. })
        ));
    }

    #[test]
    fn unlabeled_source_rejected() {
        let fs = FeatureSet::new(Array2::zeros((10, 2)), None, "x").unwrap();
        assert!(matches!(sample_episode(&fs, &EpisodeSpec::default()), Err(Error::Unlabeled)));
    }

    #[test]
    fn spec_validation() {
        for spec in [
            EpisodeSpec { n_way: 1, ..Default::default() },
            EpisodeSpec { k_shot: 0, ..Default::default() },
            EpisodeSpec { queries: QueryCount::Range { lo: 0, hi: 3 }, ..Default::default() },
            EpisodeSpec { queries: QueryCount::Range { lo: 5, hi: 3 }, ..Default::default() },
        ] {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
        assert_eq!("10:20".parse::<QueryCount>().unwrap(), QueryCount::Range { lo: 10, hi: 20 });
        assert_eq!("15".parse::<QueryCount>().unwrap(), QueryCount::Fixed(15));
        assert!("x".parse::<QueryCount>().is_err());
    }

    #[test]
    fn raw_dump_writes_one_file_per_split() {
        let fs = source(5, 30);
        let ep = sample_episode(&fs, &EpisodeSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = ep.write_raw(dir.path(), "ep").unwrap();
        assert_eq!(paths.len(), 2);
        let back = crate::features::load_features(&paths[0], FeatureFormat::RawF32).unwrap();
        assert_eq!(back.labels(), Some(ep.support_y()));
    }
}
