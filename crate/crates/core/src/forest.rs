//! Random-forest link predictor.
//!
//! Bagged CART trees with Gini impurity and a random feature subset per
//! split. A tree votes "match" when its leaf holds at least as many
//! positive as negative training rows; the forest probability is the
//! fraction of trees voting match. Every tree draws from its own ChaCha8
//! stream derived from the root seed, so training is deterministic and
//! independent of thread scheduling.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evaluate::PairConfusion;
use crate::par;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    Empty,
    #[error("training set has a single class ({positives} positives, {negatives} negatives)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("row {row} has {got} features, expected {expected}")]
    Width { row: usize, got: usize, expected: usize },
    #[error("{0} rows but {1} labels")]
    LabelCount(usize, usize),
    #[error("cross-validation needs k >= 2, got {0}")]
    Folds(usize),
    #[error("fold {fold} has no {class} rows")]
    FoldClass { fold: usize, class: &'static str },
    #[error("invalid model: {0}")]
    Model(String),
    #[error("model file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Forest hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `ceil(sqrt(width))`.
    pub features_per_split: Option<usize>,
    pub seed: u64,
    /// Fraction of negatives drawn into each tree's bootstrap; `None`
    /// keeps the ordinary bootstrap.
    pub negative_sampling: Option<f64>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            features_per_split: None,
            seed: 0x5eed,
            negative_sampling: None,
        }
    }
}

impl Hyperparameters {
    fn mtry(&self, width: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (width as f64).sqrt().ceil() as usize)
            .clamp(1, width.max(1))
    }
}

/// Soft human labels become training classes at 0.5, ties counting as match.
pub fn label_from_match(m: f64) -> bool {
    m >= 0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
        /// Impurity decrease weighted by the node's share of the bootstrap.
        gain: f64,
    },
    Leaf {
        negatives: u32,
        positives: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf reached by a row. Rows with `x <= threshold` go left.
    pub fn leaf(&self, row: &[f64]) -> (u32, u32) {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf {
                    negatives,
                    positives,
                } => return (*negatives, *positives),
            }
        }
    }

    pub fn vote(&self, row: &[f64]) -> bool {
        let (neg, pos) = self.leaf(row);
        pos >= neg
    }
}

/// A trained forest plus what is needed to reproduce and audit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub version: u32,
    pub hyperparameters: Hyperparameters,
    pub feature_names: Vec<String>,
    /// Probability at or above which a pair is a link.
    pub threshold: f64,
    /// SHA-256 over the training rows and labels.
    pub training_digest: String,
    pub trees: Vec<Tree>,
}

pub const MODEL_FORMAT: &str = "idforge-forest";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub link: bool,
}

struct Columns {
    cols: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

fn validate(rows: &[&[f64]], labels: &[bool]) -> Result<usize, ForestError> {
    if rows.len() != labels.len() {
        return Err(ForestError::LabelCount(rows.len(), labels.len()));
    }
    let Some(first) = rows.first() else {
        return Err(ForestError::Empty);
    };
    let width = first.len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(ForestError::Width {
                row,
                got: r.len(),
                expected: width,
            });
        }
    }
    let positives = labels.iter().filter(|l| **l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ForestError::SingleClass {
            positives,
            negatives,
        });
    }
    Ok(width)
}

fn digest(rows: &[&[f64]], labels: &[bool]) -> String {
    let mut h = Sha256::new();
    h.update((rows.len() as u64).to_le_bytes());
    for (r, l) in rows.iter().zip(labels) {
        for v in r.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update([*l as u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (tree as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn bootstrap(data: &Columns, hp: &Hyperparameters, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let n = data.labels.len();
    match hp.negative_sampling {
        None => (0..n).map(|_| rng.random_range(0..n) as u32).collect(),
        Some(rate) => {
            let pos: Vec<u32> = (0..n as u32).filter(|&i| data.labels[i as usize]).collect();
            let neg: Vec<u32> = (0..n as u32).filter(|&i| !data.labels[i as usize]).collect();
            let n_neg = ((neg.len() as f64 * rate.clamp(0.0, 1.0)).round() as usize).max(1);
            let mut s: Vec<u32> = (0..pos.len()).map(|_| pos[rng.random_range(0..pos.len())]).collect();
            s.extend((0..n_neg).map(|_| neg[rng.random_range(0..neg.len())]));
            s
        }
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn gini_sum(neg: f64, pos: f64) -> f64 {
    // n * gini = n - (neg^2 + pos^2) / n
    let n = neg + pos;
    if n == 0.0 {
        0.0
    } else {
        n - (neg * neg + pos * pos) / n
    }
}

fn grow_tree(data: &Columns, hp: &Hyperparameters, tree_index: usize) -> Tree {
    let width = data.cols.len();
    let mtry = hp.mtry(width);
    let mut rng = tree_rng(hp.seed, tree_index);
    let mut sample = bootstrap(data, hp, &mut rng);
    let total = sample.len() as f64;
    let min_leaf = hp.min_leaf.max(1);

    let mut nodes: Vec<Node> = Vec::new();
    // (node slot, start, end, depth)
    let mut stack = vec![(0usize, 0usize, sample.len(), 0usize)];
    nodes.push(Node::Leaf {
        negatives: 0,
        positives: 0,
    });
    let mut features: Vec<usize> = (0..width).collect();
    let mut buf: Vec<(f64, bool)> = Vec::new();

    while let Some((slot, start, end, depth)) = stack.pop() {
        let idx = &mut sample[start..end];
        let pos = idx.iter().filter(|&&i| data.labels[i as usize]).count();
        let neg = idx.len() - pos;
        let leaf = Node::Leaf {
            negatives: neg as u32,
            positives: pos as u32,
        };
        if pos == 0 || neg == 0 || idx.len() < 2 * min_leaf || hp.max_depth.is_some_and(|d| depth >= d) {
            nodes[slot] = leaf;
            continue;
        }

        let parent = gini_sum(neg as f64, pos as f64);
        features.shuffle(&mut rng);
        let mut best: Option<BestSplit> = None;
        for (tried, &f) in features.iter().enumerate() {
            if tried >= mtry && best.is_some() {
                break;
            }
            buf.clear();
            buf.extend(idx.iter().map(|&i| (data.cols[f][i as usize], data.labels[i as usize])));
            buf.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (mut ln, mut lp) = (0.0f64, 0.0f64);
            let n = buf.len();
            for k in 0..n - 1 {
                if buf[k].1 {
                    lp += 1.0;
                } else {
                    ln += 1.0;
                }
                let left = k + 1;
                if left < min_leaf || n - left < min_leaf || buf[k].0 == buf[k + 1].0 {
                    continue;
                }
                let score = gini_sum(ln, lp) + gini_sum(neg as f64 - ln, pos as f64 - lp);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let (a, b) = (buf[k].0, buf[k + 1].0);
                    let mut threshold = a / 2.0 + b / 2.0;
                    if threshold >= b || threshold < a {
                        threshold = a;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }

        let Some(split) = best else {
            nodes[slot] = leaf;
            continue;
        };
        // partition in place: left = x <= threshold
        let col = &data.cols[split.feature];
        let mut mid = 0;
        for k in 0..idx.len() {
            if col[idx[k] as usize] <= split.threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let left = nodes.len() as u32;
        nodes.push(leaf.clone());
        let right = nodes.len() as u32;
        nodes.push(leaf);
        nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            gain: (parent - split.score).max(0.0) / total,
        };
        stack.push((right as usize, start + mid, end, depth + 1));
        stack.push((left as usize, start, start + mid, depth + 1));
    }
    Tree { nodes }
}

/// Trains a forest. `rows[i]` is the feature vector of example `i`.
pub fn train_forest(
    rows: &[&[f64]],
    labels: &[bool],
    feature_names: &[String],
    hp: &Hyperparameters,
) -> Result<ForestModel, ForestError> {
    let width = validate(rows, labels)?;
    if feature_names.len() != width {
        return Err(ForestError::Model(format!(
            "{} feature names for width {width}",
            feature_names.len()
        )));
    }
    let data = Columns {
        cols: (0..width)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect(),
        labels: labels.to_vec(),
    };
    let trees = par::map_range(hp.n_trees.max(1), |t| grow_tree(&data, hp, t));
    Ok(ForestModel {
        format: MODEL_FORMAT.to_string(),
        version: 1,
        hyperparameters: hp.clone(),
        feature_names: feature_names.to_vec(),
        threshold: 0.5,
        training_digest: digest(rows, labels),
        trees,
    })
}

impl ForestModel {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn votes(&self, row: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.vote(row)).count()
    }

    pub fn probability(&self, row: &[f64]) -> Result<f64, ForestError> {
        if row.len() != self.width() {
            return Err(ForestError::Width {
                row: 0,
                got: row.len(),
                expected: self.width(),
            });
        }
        Ok(self.votes(row) as f64 / self.trees.len() as f64)
    }

    pub fn predict(&self, row: &[f64]) -> Result<Prediction, ForestError> {
        let probability = self.probability(row)?;
        Ok(Prediction {
            probability,
            link: probability >= self.threshold,
        })
    }

    /// Predicts many rows in parallel.
    pub fn predict_all(&self, rows: &[&[f64]]) -> Result<Vec<Prediction>, ForestError> {
        par::map(rows, |r| self.predict(r)).into_iter().collect()
    }

    /// Mean impurity decrease per feature, normalized per tree, averaged,
    /// then normalized to sum 1. Sorted descending; ties by feature order.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let width = self.width();
        let mut acc = vec![0.0; width];
        for t in &self.trees {
            let mut per = vec![0.0; width];
            for n in &t.nodes {
                if let Node::Split { feature, gain, .. } = n {
                    per[*feature] += gain;
                }
            }
            let s: f64 = per.iter().sum();
            if s > 0.0 {
                for (a, p) in acc.iter_mut().zip(&per) {
                    *a += p / s;
                }
            }
        }
        let s: f64 = acc.iter().sum();
        if s > 0.0 {
            for a in &mut acc {
                *a /= s;
            }
        }
        let mut out: Vec<(usize, f64)> = acc.into_iter().enumerate().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter()
            .map(|(i, v)| (self.feature_names[i].clone(), v))
            .collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), ForestError> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    /// Loads and validates a model file.
    pub fn read_json<R: Read>(input: R) -> Result<Self, ForestError> {
        let m: ForestModel = serde_json::from_reader(input)?;
        if m.format != MODEL_FORMAT {
            return Err(ForestError::Model(format!("unknown format `{}`", m.format)));
        }
        if m.trees.is_empty() {
            return Err(ForestError::Model("no trees".into()));
        }
        let width = m.width();
        for (ti, t) in m.trees.iter().enumerate() {
            for n in &t.nodes {
                if let Node::Split {
                    feature,
                    left,
                    right,
                    ..
                } = n
                {
                    let len = t.nodes.len() as u32;
                    if *feature >= width || *left >= len || *right >= len {
                        return Err(ForestError::Model(format!("tree {ti} has an invalid split")));
                    }
                }
            }
        }
        Ok(m)
    }
}

/// Per-fold and pooled results of stratified k-fold cross-validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub folds: Vec<PairConfusion>,
    pub aggregate: PairConfusion,
    /// Out-of-fold probability for every row.
    pub probabilities: Vec<f64>,
    /// Fold index of every row.
    pub fold_of: Vec<usize>,
}

impl CrossValidation {
    pub fn precision(&self) -> Option<f64> {
        self.aggregate.precision()
    }

    pub fn recall(&self) -> Option<f64> {
        self.aggregate.recall()
    }
}

/// Stratified fold assignment: each class is shuffled with the seed and
/// dealt round-robin.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>, ForestError> {
    if k < 2 {
        return Err(ForestError::Folds(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0; labels.len()];
    for (class, name) in [(true, "positive"), (false, "negative")] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(ForestError::FoldClass {
                fold: idx.len(),
                class: name,
            });
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold_of[i] = j % k;
        }
    }
    Ok(fold_of)
}

/// Stratified k-fold cross-validation.
pub fn cross_validate(
    rows: &[&[f64]],
    labels: &[bool],
    feature_names: &[String],
    k: usize,
    hp: &Hyperparameters,
    threshold: f64,
) -> Result<CrossValidation, ForestError> {
    validate(rows, labels)?;
    let fold_of = stratified_folds(labels, k, hp.seed)?;
    let mut probabilities = vec![0.0; rows.len()];
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let (mut tr_rows, mut tr_labels, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..rows.len() {
            if fold_of[i] == fold {
                test.push(i);
            } else {
                tr_rows.push(rows[i]);
                tr_labels.push(labels[i]);
            }
        }
        let hp_fold = Hyperparameters {
            seed: hp.seed.wrapping_add(fold as u64 + 1),
            ..hp.clone()
        };
        let model = train_forest(&tr_rows, &tr_labels, feature_names, &hp_fold)?;
        let test_rows: Vec<&[f64]> = test.iter().map(|&i| rows[i]).collect();
        let preds = model.predict_all(&test_rows)?;
        let mut c = PairConfusion::default();
        for (&i, p) in test.iter().zip(&preds) {
            probabilities[i] = p.probability;
            c.record(p.probability >= threshold, labels[i]);
        }
        folds.push(c);
    }
    let aggregate = folds.iter().fold(PairConfusion::default(), |a, c| a + *c);
    Ok(CrossValidation {
        folds,
        aggregate,
        probabilities,
        fold_of,
    })
}
