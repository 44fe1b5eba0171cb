//! Phase 4: random-forest training and binary prediction over feature
//! vectors.
//!
//! Standard bagged CART: each tree fits a bootstrap sample, splits are
//! chosen by Gini-impurity reduction over a random 3-feature subset
//! (⌈√8⌉), and prediction is a majority vote with ties broken toward
//! infected. Training is fully deterministic under its seed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{compute_metrics, MetricsReport};
use crate::record::{FeatureVector, FEATURE_COUNT};

/// Features considered at each split: ⌈√8⌉.
pub const FEATURES_PER_SPLIT: usize = 3;

/// Smallest dataset [`split_train_test`] accepts.
pub const MIN_DATASET: usize = 10;

const MODEL_MAGIC: &str = "MONDEO-RF-v1";

/// Feature rows with binary labels (0 benign, 1 infected).
#[derive(Debug, Clone, Default)]
pub struct LabeledDataset {
    pub rows: Vec<(FeatureVector, u8)>,
    pub provenance: String,
}

impl LabeledDataset {
    pub fn new(rows: Vec<(FeatureVector, u8)>, provenance: impl Into<String>) -> Self {
        Self {
            rows,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 16,
            min_samples_leaf: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("dataset too small: {got} rows (minimum {min})")]
    DatasetTooSmall { got: usize, min: usize },
    #[error("train fraction must be in (0, 1), got {0}")]
    InvalidTrainFraction(f64),
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("model file format error: {0}")]
    ModelFormat(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// One decision tree as flat node arrays. `feature[i] < 0` marks a leaf;
/// internal nodes route `x[feature] <= threshold` to `left`, else `right`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTree {
    feature: Vec<i16>,
    threshold: Vec<f64>,
    left: Vec<u32>,
    right: Vec<u32>,
    count0: Vec<u32>,
    count1: Vec<u32>,
}

impl FlatTree {
    fn with_capacity(cap: usize) -> Self {
        Self {
            feature: Vec::with_capacity(cap),
            threshold: Vec::with_capacity(cap),
            left: Vec::with_capacity(cap),
            right: Vec::with_capacity(cap),
            count0: Vec::with_capacity(cap),
            count1: Vec::with_capacity(cap),
        }
    }

    fn push_leaf(&mut self, count0: u32, count1: u32) -> u32 {
        let id = self.feature.len() as u32;
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.count0.push(count0);
        self.count1.push(count1);
        id
    }

    fn push_internal(&mut self, feature: usize, threshold: f64) -> u32 {
        let id = self.feature.len() as u32;
        self.feature.push(feature as i16);
        self.threshold.push(threshold);
        self.left.push(0);
        self.right.push(0);
        self.count0.push(0);
        self.count1.push(0);
        id
    }

    /// Leaf vote for one sample; leaf ties go to infected.
    fn vote(&self, x: &[f64; FEATURE_COUNT]) -> u8 {
        let mut node = 0usize;
        while self.feature[node] >= 0 {
            let f = self.feature[node] as usize;
            node = if x[f] <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        u8::from(self.count1[node] >= self.count0[node])
    }

    fn len(&self) -> usize {
        self.feature.len()
    }

    fn validate(&self) -> Result<(), ForestError> {
        let n = self.len();
        if n == 0
            || [
                self.threshold.len(),
                self.left.len(),
                self.right.len(),
                self.count0.len(),
                self.count1.len(),
            ]
            .iter()
            .any(|&l| l != n)
        {
            return Err(ForestError::ModelFormat(
                "inconsistent tree arrays".to_string(),
            ));
        }
        for i in 0..n {
            let f = self.feature[i];
            if f >= 0 {
                if f as usize >= FEATURE_COUNT {
                    return Err(ForestError::ModelFormat(format!(
                        "node {i} references feature {f}"
                    )));
                }
                if !self.threshold[i].is_finite() {
                    return Err(ForestError::ModelFormat(format!(
                        "node {i} threshold not finite"
                    )));
                }
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if l >= n || r >= n || l == i || r == i {
                    return Err(ForestError::ModelFormat(format!(
                        "node {i} child out of range"
                    )));
                }
            } else if self.count0[i] == 0 && self.count1[i] == 0 {
                return Err(ForestError::ModelFormat(format!(
                    "leaf {i} has empty counts"
                )));
            }
        }
        Ok(())
    }
}

/// Trained ensemble plus the metadata needed for deterministic prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    magic: String,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: usize,
    pub training_seed: u64,
    /// Set when training saw a single class; predictions are constant.
    pub single_class_warning: bool,
    trees: Vec<FlatTree>,
}

impl ForestModel {
    /// Majority vote over the trees; an exact tie goes to infected.
    pub fn predict(&self, features: &FeatureVector) -> u8 {
        self.predict_array(&features.as_array())
    }

    pub fn predict_array(&self, x: &[f64; FEATURE_COUNT]) -> u8 {
        let votes_infected: usize = self.trees.iter().map(|t| usize::from(t.vote(x))).sum();
        u8::from(2 * votes_infected >= self.trees.len())
    }

    pub fn trees(&self) -> &[FlatTree] {
        &self.trees
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<(), ForestError> {
        serde_json::to_writer(&mut writer, self)
            .map_err(|e| ForestError::ModelFormat(e.to_string()))?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_file(&self, path: &Path) -> Result<(), ForestError> {
        self.save(BufWriter::new(File::create(path)?))
    }

    pub fn load<R: io::Read>(reader: R) -> Result<Self, ForestError> {
        let model: ForestModel =
            serde_json::from_reader(reader).map_err(|e| ForestError::ModelFormat(e.to_string()))?;
        if model.magic != MODEL_MAGIC {
            return Err(ForestError::ModelFormat(format!(
                "bad magic {:?}",
                model.magic
            )));
        }
        if model.trees.len() != model.n_trees || model.trees.is_empty() {
            return Err(ForestError::ModelFormat("tree count mismatch".to_string()));
        }
        for tree in &model.trees {
            tree.validate()?;
        }
        Ok(model)
    }

    pub fn load_file(path: &Path) -> Result<Self, ForestError> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

/// Deterministic shuffled split. The train side gets `round(n * fraction)`
/// rows (clamped so neither side is empty); no row is lost or duplicated.
pub fn split_train_test(
    data: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), ForestError> {
    if data.len() < MIN_DATASET {
        return Err(ForestError::DatasetTooSmall {
            got: data.len(),
            min: MIN_DATASET,
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ForestError::InvalidTrainFraction(train_fraction));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let train_len = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let take = |idxs: &[usize]| -> Vec<(FeatureVector, u8)> {
        idxs.iter().map(|&i| data.rows[i]).collect()
    };
    let train = LabeledDataset::new(take(&order[..train_len]), data.provenance.clone());
    let test = LabeledDataset::new(take(&order[train_len..]), data.provenance.clone());
    Ok((train, test))
}

/// Fits a forest: each tree on a bootstrap sample of `train` (with
/// replacement, same size), Gini splits over random 3-feature subsets.
///
/// A single-class training set still trains (constant leaves) but sets
/// [`ForestModel::single_class_warning`].
pub fn train_forest(
    train: &LabeledDataset,
    params: &ForestParams,
) -> Result<ForestModel, ForestError> {
    if train.is_empty() {
        return Err(ForestError::InvalidParams("empty training set".to_string()));
    }
    if params.n_trees == 0 {
        return Err(ForestError::InvalidParams(
            "n_trees must be at least 1".to_string(),
        ));
    }
    if params.max_depth == 0 || params.min_samples_leaf == 0 {
        return Err(ForestError::InvalidParams(
            "max_depth and min_samples_leaf must be at least 1".to_string(),
        ));
    }

    let features: Vec<[f64; FEATURE_COUNT]> =
        train.rows.iter().map(|(fv, _)| fv.as_array()).collect();
    let labels: Vec<u8> = train.rows.iter().map(|(_, l)| *l).collect();
    let single_class = labels.windows(2).all(|w| w[0] == w[1]);

    // Derive one sub-seed per tree up front so tree fitting order (or a
    // future parallel fit) cannot change the result.
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.next_u64()).collect();

    let trees: Vec<FlatTree> = tree_seeds
        .iter()
        .map(|&tree_seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
            let n = features.len();
            let sample: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
            let mut builder = TreeBuilder {
                features: &features,
                labels: &labels,
                max_depth: params.max_depth,
                min_samples_leaf: params.min_samples_leaf,
                rng,
                tree: FlatTree::with_capacity(64),
            };
            builder.grow(sample, 0);
            builder.tree
        })
        .collect();

    Ok(ForestModel {
        magic: MODEL_MAGIC.to_string(),
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        features_per_split: FEATURES_PER_SPLIT,
        training_seed: params.seed,
        single_class_warning: single_class,
        trees,
    })
}

/// Runs the model over a test set and computes the evaluation metrics.
pub fn evaluate(model: &ForestModel, test: &LabeledDataset) -> Result<MetricsReport, ForestError> {
    if test.is_empty() {
        return Err(ForestError::EmptyTestSet);
    }
    let predictions: Vec<u8> = test.rows.iter().map(|(fv, _)| model.predict(fv)).collect();
    let labels: Vec<u8> = test.rows.iter().map(|(_, l)| *l).collect();
    compute_metrics(&predictions, &labels).map_err(|e| ForestError::InvalidParams(e.to_string()))
}

struct TreeBuilder<'a> {
    features: &'a [[f64; FEATURE_COUNT]],
    labels: &'a [u8],
    max_depth: usize,
    min_samples_leaf: usize,
    rng: ChaCha8Rng,
    tree: FlatTree,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, indices: Vec<u32>, depth: usize) -> u32 {
        let count1: u32 = indices
            .iter()
            .map(|&i| u32::from(self.labels[i as usize]))
            .sum();
        let count0 = indices.len() as u32 - count1;

        let pure = count0 == 0 || count1 == 0;
        let splittable = indices.len() >= 2 * self.min_samples_leaf;
        if pure || depth >= self.max_depth || !splittable {
            return self.tree.push_leaf(count0, count1);
        }

        let Some(split) = self.best_split(&indices, count0, count1) else {
            return self.tree.push_leaf(count0, count1);
        };

        let (left_idx, right_idx): (Vec<u32>, Vec<u32>) = indices
            .into_iter()
            .partition(|&i| self.features[i as usize][split.feature] <= split.threshold);

        let id = self.tree.push_internal(split.feature, split.threshold);
        let left = self.grow(left_idx, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        self.tree.left[id as usize] = left;
        self.tree.right[id as usize] = right;
        id
    }

    fn best_split(&mut self, indices: &[u32], count0: u32, count1: u32) -> Option<BestSplit> {
        let n = indices.len() as f64;
        let parent_gini = gini(count0, count1);
        let candidates = self.sample_features();
        let mut best: Option<BestSplit> = None;

        let mut column: Vec<(f64, u8)> = Vec::with_capacity(indices.len());
        for &feature in &candidates {
            column.clear();
            column.extend(
                indices
                    .iter()
                    .map(|&i| (self.features[i as usize][feature], self.labels[i as usize])),
            );
            column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left1 = 0u32;
            for j in 1..column.len() {
                left1 += u32::from(column[j - 1].1);
                if column[j - 1].0 == column[j].0 {
                    continue;
                }
                let left_n = j as u32;
                let right_n = column.len() as u32 - left_n;
                if (left_n as usize) < self.min_samples_leaf
                    || (right_n as usize) < self.min_samples_leaf
                {
                    continue;
                }
                let left0 = left_n - left1;
                let right1 = count1 - left1;
                let right0 = count0 - left0;
                let weighted = (f64::from(left_n) / n) * gini(left0, left1)
                    + (f64::from(right_n) / n) * gini(right0, right1);
                let gain = parent_gini - weighted;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature,
                        threshold: midpoint(column[j - 1].0, column[j].0),
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Random distinct feature subset of size [`FEATURES_PER_SPLIT`].
    fn sample_features(&mut self) -> [usize; FEATURES_PER_SPLIT] {
        let mut pool: [usize; FEATURE_COUNT] = std::array::from_fn(|i| i);
        let mut out = [0usize; FEATURES_PER_SPLIT];
        for (k, slot) in out.iter_mut().enumerate() {
            let j = self.rng.gen_range(k..FEATURE_COUNT);
            pool.swap(k, j);
            *slot = pool[k];
        }
        out
    }
}

fn gini(count0: u32, count1: u32) -> f64 {
    let n = f64::from(count0 + count1);
    if n == 0.0 {
        return 0.0;
    }
    let p0 = f64::from(count0) / n;
    let p1 = f64::from(count1) / n;
    1.0 - p0 * p0 - p1 * p1
}

/// Split threshold between two consecutive distinct values; guards against
/// the midpoint rounding onto the upper value.
fn midpoint(lower: f64, upper: f64) -> f64 {
    let mid = lower + (upper - lower) / 2.0;
    if mid >= upper {
        lower
    } else {
        mid
    }
}
