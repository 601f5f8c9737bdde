//! Pixel-based random forest baseline: CART trees on bootstrap resamples,
//! one forest per retrieved variable.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geo::{Mask, Raster};
use crate::nn::{TargetTransform, Task};
use crate::scene::{LabelSet, SceneStack, BASE_CHANNELS, CHAINED_CHANNELS, CLEAR};
use crate::train::Retrieval;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ForestKind {
    Classification { n_classes: usize },
    Regression,
}

/// Row-major pixel features with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDataset {
    pub kind: ForestKind,
    pub n_features: usize,
    pub features: Vec<f64>,
    /// Class index or regression value.
    pub labels: Vec<f64>,
    /// `(scene index, pixel index)` of every row.
    pub provenance: Vec<(u32, u32)>,
}

impl PixelDataset {
    pub fn new(kind: ForestKind, n_features: usize, features: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        ensure!(n_features > 0, InvalidArgument, "datasets need at least one feature");
        ensure!(
            features.len() == labels.len() * n_features,
            Shape,
            "{} feature values for {} rows of {n_features}",
            features.len(),
            labels.len()
        );
        if let ForestKind::Classification { n_classes } = kind {
            ensure!(
                labels.iter().all(|&l| l >= 0.0 && l.fract() == 0.0 && (l as usize) < n_classes),
                InvalidArgument,
                "class labels must be integers below {n_classes}"
            );
        }
        let provenance = (0..labels.len() as u32).map(|k| (0, k)).collect();
        Ok(Self {
            kind,
            n_features,
            features,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.features[k * self.n_features..(k + 1) * self.n_features]
    }

    pub fn subset(&self, rows: &[usize]) -> PixelDataset {
        PixelDataset {
            kind: self.kind,
            n_features: self.n_features,
            features: rows.iter().flat_map(|&k| self.row(k).iter().copied()).collect(),
            labels: rows.iter().map(|&k| self.labels[k]).collect(),
            provenance: rows.iter().map(|&k| self.provenance[k]).collect(),
        }
    }
}

fn task_kind(task: Task) -> ForestKind {
    if task.is_classifier() {
        ForestKind::Classification { n_classes: 3 }
    } else {
        ForestKind::Regression
    }
}

fn transform_of(task: Task) -> TargetTransform {
    if task == Task::Cot {
        TargetTransform::Log10
    } else {
        TargetTransform::Identity
    }
}

fn encode(t: TargetTransform, v: f64) -> f64 {
    match t {
        TargetTransform::Identity => v,
        TargetTransform::Log10 => v.max(1e-3).log10(),
    }
}

fn decode(t: TargetTransform, v: f64) -> f64 {
    match t {
        TargetTransform::Identity => v,
        TargetTransform::Log10 => 10f64.powf(v),
    }
}

fn label_raster(labels: &LabelSet, task: Task) -> &Raster {
    match task {
        Task::Clp => &labels.clp,
        Task::Cth => &labels.cth,
        Task::Cer => &labels.cer,
        Task::Cot => &labels.cot,
    }
}

/// Candidate `(scene, pixel)` rows: labelled pixels with every feature valid.
fn candidates(stacks: &[SceneStack], labels: &[&LabelSet], task: Task) -> Result<Vec<(u32, u32)>> {
    ensure!(stacks.len() == labels.len(), Shape, "{} stacks for {} label sets", stacks.len(), labels.len());
    let mut out = Vec::new();
    for (s, (stack, lab)) in stacks.iter().zip(labels).enumerate() {
        stack.grid().check_same(lab.grid(), "forest labels")?;
        ensure!(
            stack.len() >= BASE_CHANNELS,
            Shape,
            "forest inputs need {BASE_CHANNELS} base channels, stack has {}",
            stack.len()
        );
        let base = &stack.channels()[..BASE_CHANNELS];
        let r = label_raster(lab, task);
        for k in 0..r.values().len() {
            if lab.coverage.data()[k] && r.valid()[k] && lab.clp.valid()[k] && base.iter().all(|c| c.valid()[k]) {
                out.push((s as u32, k as u32));
            }
        }
    }
    Ok(out)
}

/// Features of the `task` forest for the given rows: the 23 base channels,
/// plus the label phase for property forests.
fn gather(stacks: &[SceneStack], labels: &[&LabelSet], task: Task, rows: &[(u32, u32)]) -> PixelDataset {
    let nf = if task.is_classifier() { BASE_CHANNELS } else { CHAINED_CHANNELS };
    let t = transform_of(task);
    let mut features = Vec::with_capacity(rows.len() * nf);
    let mut lab = Vec::with_capacity(rows.len());
    for &(s, k) in rows {
        let (s, k) = (s as usize, k as usize);
        features.extend(stacks[s].channels()[..BASE_CHANNELS].iter().map(|c| c.values()[k]));
        if !task.is_classifier() {
            features.push(labels[s].clp.values()[k]);
        }
        lab.push(encode(t, label_raster(labels[s], task).values()[k]));
    }
    PixelDataset {
        kind: task_kind(task),
        n_features: nf,
        features,
        labels: lab,
        provenance: rows.to_vec(),
    }
}

/// Every labelled pixel of `stacks` as a dataset for the `task` forest.
/// Property forests take the label phase as feature 24.
pub fn collect_pixels(stacks: &[SceneStack], labels: &[&LabelSet], task: Task) -> Result<PixelDataset> {
    ensure!(!stacks.is_empty(), Empty, "no scenes to sample");
    let rows = candidates(stacks, labels, task)?;
    Ok(gather(stacks, labels, task, &rows))
}

fn sample_rows(len: usize, n: usize, seed: u64) -> Result<Option<Vec<usize>>> {
    ensure!(n > 0, InvalidArgument, "sample size must be positive");
    ensure!(len > 0, Empty, "no valid pixels to sample");
    if n >= len {
        return Ok(None);
    }
    let mut rows = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), len, n).into_vec();
    rows.sort_unstable();
    Ok(Some(rows))
}

/// Uniform sample of `n` rows without replacement, kept in dataset order.
/// Asking for at least every row returns the full set.
pub fn sample_pixels(data: &PixelDataset, n: usize, seed: u64) -> Result<PixelDataset> {
    Ok(match sample_rows(data.len(), n, seed)? {
        None => data.clone(),
        Some(rows) => data.subset(&rows),
    })
}

/// Same result as [`collect_pixels`] followed by [`sample_pixels`], without
/// materializing the features of unsampled pixels.
pub fn sample_scene_pixels(
    stacks: &[SceneStack],
    labels: &[&LabelSet],
    task: Task,
    n: usize,
    seed: u64,
) -> Result<PixelDataset> {
    ensure!(!stacks.is_empty(), Empty, "no scenes to sample");
    let all = candidates(stacks, labels, task)?;
    let rows = match sample_rows(all.len(), n, seed)? {
        None => all,
        Some(r) => r.into_iter().map(|k| all[k]).collect(),
    };
    Ok(gather(stacks, labels, task, &rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    /// √p for classification, p/3 for regression.
    Auto,
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestHyper {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_estimators: 180,
            max_depth: 40,
            min_samples_split: 3,
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::Auto,
            seed: 0,
        }
    }
}

impl ForestHyper {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_estimators > 0, InvalidArgument, "n_estimators must be positive");
        ensure!(self.min_samples_split >= 2, InvalidArgument, "min_samples_split must be at least 2");
        ensure!(self.min_samples_leaf >= 1, InvalidArgument, "min_samples_leaf must be positive");
        ensure!(
            self.min_samples_leaf <= self.min_samples_split,
            InvalidArgument,
            "min_samples_leaf {} exceeds min_samples_split {}",
            self.min_samples_leaf,
            self.min_samples_split
        );
        if let FeaturesPerSplit::Count(c) = self.features_per_split {
            ensure!(c > 0, InvalidArgument, "features_per_split must be positive");
        }
        Ok(())
    }

    fn features(&self, kind: ForestKind, p: usize) -> usize {
        let m = match self.features_per_split {
            FeaturesPerSplit::All => p,
            FeaturesPerSplit::Count(c) => c,
            FeaturesPerSplit::Auto => match kind {
                ForestKind::Classification { .. } => (p as f64).sqrt().floor() as usize,
                ForestKind::Regression => p / 3,
            },
        };
        m.clamp(1, p)
    }
}

/// A fitted tree as parallel node arrays; `feature < 0` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            if t.feature[k] < 0 {
                0
            } else {
                1 + go(t, t.left[k] as usize).max(go(t, t.right[k] as usize))
            }
        }
        go(self, 0)
    }

    /// Rows with `x[feature] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        while self.feature[k] >= 0 {
            k = if x[self.feature[k] as usize] <= self.threshold[k] {
                self.left[k]
            } else {
                self.right[k]
            } as usize;
        }
        self.value[k]
    }
}

/// Majority class (ties to the lower index) or mean.
fn leaf_value(kind: ForestKind, labels: &[f64], rows: &[usize]) -> f64 {
    match kind {
        ForestKind::Classification { n_classes } => {
            let mut counts = vec![0usize; n_classes];
            for &r in rows {
                counts[labels[r] as usize] += 1;
            }
            argmax_lowest(&counts) as f64
        }
        ForestKind::Regression => rows.iter().map(|&r| labels[r]).sum::<f64>() / rows.len() as f64,
    }
}

fn argmax_lowest(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// A candidate split and its impurity decrease.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Impurity of a node: Gini index, or mean squared deviation.
pub fn impurity(kind: ForestKind, labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    match kind {
        ForestKind::Classification { n_classes } => {
            let mut counts = vec![0.0; n_classes];
            for &l in labels {
                counts[l as usize] += 1.0;
            }
            1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
        }
        ForestKind::Regression => {
            let mu = labels.iter().sum::<f64>() / n;
            labels.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n
        }
    }
}

/// Running class counts or sums on one side of a split.
#[derive(Clone)]
struct Side {
    n: f64,
    counts: Vec<f64>,
    sum: f64,
    sq: f64,
}

impl Side {
    fn new(kind: ForestKind) -> Self {
        let k = match kind {
            ForestKind::Classification { n_classes } => n_classes,
            ForestKind::Regression => 0,
        };
        Side {
            n: 0.0,
            counts: vec![0.0; k],
            sum: 0.0,
            sq: 0.0,
        }
    }

    fn add(&mut self, kind: ForestKind, v: f64, sign: f64) {
        self.n += sign;
        match kind {
            ForestKind::Classification { .. } => self.counts[v as usize] += sign,
            ForestKind::Regression => {
                self.sum += sign * v;
                self.sq += sign * v * v;
            }
        }
    }

    /// `n · impurity`.
    fn weighted_impurity(&self, kind: ForestKind) -> f64 {
        if self.n <= 0.0 {
            return 0.0;
        }
        match kind {
            ForestKind::Classification { .. } => self.n - self.counts.iter().map(|c| c * c).sum::<f64>() / self.n,
            ForestKind::Regression => (self.sq - self.sum * self.sum / self.n).max(0.0),
        }
    }
}

/// Best split of `rows` over `features`: the first strictly best gain in
/// feature order, then threshold order. `None` when nothing splits.
fn best_split(
    data: &PixelDataset,
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    buf: &mut Vec<(f64, f64)>,
) -> Option<Split> {
    let kind = data.kind;
    let n = rows.len();
    let mut total = Side::new(kind);
    for &r in rows {
        total.add(kind, data.labels[r], 1.0);
    }
    let parent = total.weighted_impurity(kind);
    let mut best: Option<Split> = None;
    for &f in features {
        buf.clear();
        buf.extend(rows.iter().map(|&r| (data.features[r * data.n_features + f], data.labels[r])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = Side::new(kind);
        let mut right = total.clone();
        for k in 0..n - 1 {
            let (x, y) = buf[k];
            left.add(kind, y, 1.0);
            right.add(kind, y, -1.0);
            let next = buf[k + 1].0;
            if next <= x || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let gain = (parent - left.weighted_impurity(kind) - right.weighted_impurity(kind)) / n as f64;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: x + (next - x) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

/// Fit a CART tree on `rows` of `data` (duplicates allowed).
pub fn fit_tree(data: &PixelDataset, rows: &[usize], hyper: &ForestHyper, seed: u64) -> Result<Tree> {
    hyper.validate()?;
    ensure!(!rows.is_empty(), Empty, "cannot fit a tree on zero rows");
    let kind = data.kind;
    let p = data.n_features;
    let m = hyper.features(kind, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6565);
    let mut tree = Tree {
        feature: vec![],
        threshold: vec![],
        left: vec![],
        right: vec![],
        value: vec![],
    };
    let mut all_features: Vec<usize> = (0..p).collect();
    let mut buf = Vec::with_capacity(rows.len());
    let root = tree.push_leaf(leaf_value(kind, &data.labels, rows));
    let mut stack = vec![(root, rows.to_vec(), 0usize)];
    while let Some((node, rows, depth)) = stack.pop() {
        let first = data.labels[rows[0]];
        let pure = rows.iter().all(|&r| data.labels[r] == first);
        if pure || depth >= hyper.max_depth || rows.len() < hyper.min_samples_split {
            continue;
        }
        all_features.shuffle(&mut rng);
        let mut chosen = all_features[..m].to_vec();
        chosen.sort_unstable();
        let Some(split) = best_split(data, &rows, &chosen, hyper.min_samples_leaf, &mut buf) else {
            continue;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&k| data.features[k * p + split.feature] <= split.threshold);
        let li = tree.push_leaf(leaf_value(kind, &data.labels, &l));
        let ri = tree.push_leaf(leaf_value(kind, &data.labels, &r));
        tree.feature[node] = split.feature as i32;
        tree.threshold[node] = split.threshold;
        tree.left[node] = li as u32;
        tree.right[node] = ri as u32;
        stack.push((ri, r, depth + 1));
        stack.push((li, l, depth + 1));
    }
    Ok(tree)
}

/// Rows of a bootstrap resample of `n` rows.
pub fn bootstrap_rows(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Forest {
    pub kind: ForestKind,
    pub n_features: usize,
    pub hyper: ForestHyper,
    pub trees: Vec<Tree>,
}

/// `hyper.n_estimators` trees, tree `i` on the bootstrap drawn with seed
/// `hyper.seed + i`.
pub fn fit_forest(data: &PixelDataset, hyper: &ForestHyper) -> Result<Forest> {
    hyper.validate()?;
    ensure!(!data.is_empty(), Empty, "cannot fit a forest on an empty dataset");
    let trees = (0..hyper.n_estimators)
        .into_par_iter()
        .map(|i| {
            let seed = hyper.seed.wrapping_add(i as u64);
            fit_tree(data, &bootstrap_rows(data.len(), seed), hyper, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        kind: data.kind,
        n_features: data.n_features,
        hyper: hyper.clone(),
        trees,
    })
}

impl Forest {
    /// Majority vote with ties to the lower class, or the tree mean.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.kind {
            ForestKind::Classification { n_classes } => {
                let mut counts = vec![0usize; n_classes];
                for t in &self.trees {
                    counts[t.predict(x) as usize] += 1;
                }
                argmax_lowest(&counts) as f64
            }
            ForestKind::Regression => self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64,
        }
    }
}

/// Predictions for row-major `features`.
pub fn predict_forest(forest: &Forest, features: &[f64]) -> Result<Vec<f64>> {
    let p = forest.n_features;
    ensure!(
        features.len() % p == 0,
        Shape,
        "{} feature values do not form rows of {p}",
        features.len()
    );
    Ok(features.par_chunks(p).map(|x| forest.predict_row(x)).collect())
}

fn cv_score(kind: ForestKind, pred: &[f64], truth: &[f64]) -> f64 {
    match kind {
        ForestKind::Classification { .. } => {
            pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
        }
        ForestKind::Regression => {
            let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / truth.len() as f64;
            -mse.sqrt()
        }
    }
}

/// One grid point's cross-validation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub hyper: ForestHyper,
    pub fold_scores: Vec<f64>,
    /// Accuracy fraction, or negative RMSE.
    pub mean_score: f64,
}

/// Fold of every row: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

/// K-fold cross-validation over `grid`; the best mean score wins, ties to
/// the earlier grid point.
pub fn grid_search_cv(data: &PixelDataset, grid: &[ForestHyper], k: usize, seed: u64) -> Result<(ForestHyper, Vec<CvRow>)> {
    ensure!(!grid.is_empty(), InvalidArgument, "hyperparameter grid is empty");
    ensure!(k >= 2, InvalidArgument, "cross-validation needs at least 2 folds");
    ensure!(data.len() >= k, Empty, "{} rows cannot fill {k} folds", data.len());
    let fold = fold_assignment(data.len(), k, seed);
    let splits: Vec<(PixelDataset, PixelDataset)> = (0..k)
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&r| fold[r] != f).collect();
            let test: Vec<usize> = (0..data.len()).filter(|&r| fold[r] == f).collect();
            (data.subset(&train), data.subset(&test))
        })
        .collect();
    let mut table = Vec::with_capacity(grid.len());
    for h in grid {
        let mut scores = Vec::with_capacity(k);
        for (train, test) in &splits {
            let forest = fit_forest(train, h)?;
            scores.push(cv_score(data.kind, &predict_forest(&forest, &test.features)?, &test.labels));
        }
        let mean = scores.iter().sum::<f64>() / k as f64;
        log::info!("grid point depth {} trees {}: cv score {mean:.5}", h.max_depth, h.n_estimators);
        table.push(CvRow {
            hyper: h.clone(),
            fold_scores: scores,
            mean_score: mean,
        });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_score > table[best].mean_score {
            best = i;
        }
    }
    Ok((table[best].hyper.clone(), table))
}

/// A fitted forest with the task and target transform it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfModel {
    pub task: Task,
    pub target_transform: TargetTransform,
    pub forest: Forest,
}

impl RfModel {
    pub fn fit(task: Task, data: &PixelDataset, hyper: &ForestHyper) -> Result<Self> {
        ensure!(data.kind == task_kind(task), InvalidArgument, "dataset kind does not match the {task} task");
        Ok(Self {
            task,
            target_transform: transform_of(task),
            forest: fit_forest(data, hyper)?,
        })
    }
}

/// The four forests of the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfSuite {
    pub clp: RfModel,
    pub cth: RfModel,
    pub cer: RfModel,
    pub cot: RfModel,
}

impl RfSuite {
    pub fn get(&self, task: Task) -> &RfModel {
        match task {
            Task::Clp => &self.clp,
            Task::Cth => &self.cth,
            Task::Cer => &self.cer,
            Task::Cot => &self.cot,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::scene::write_json(path, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s: RfSuite = crate::scene::read_json(path)?;
        for t in Task::ALL {
            let m = s.get(t);
            let want = if t.is_classifier() { BASE_CHANNELS } else { CHAINED_CHANNELS };
            if m.task != t || m.forest.n_features != want {
                return Err(Error::format("forest suite", path, format!("{t} slot is inconsistent")));
            }
        }
        Ok(s)
    }
}

/// Settings for fitting the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub hyper: ForestHyper,
    /// Pixels sampled per forest.
    pub sample_n: usize,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            hyper: ForestHyper::default(),
            sample_n: 50_000,
            seed: 0,
        }
    }
}

/// Sample pixels for the `task` forest and fit it with `hyper`. Sampling
/// uses `cfg.seed` plus the task index.
pub fn train_rf_model(
    task: Task,
    stacks: &[SceneStack],
    labels: &[&LabelSet],
    cfg: &RfConfig,
    hyper: &ForestHyper,
) -> Result<RfModel> {
    let k = Task::ALL.iter().position(|&t| t == task).expect("task listed") as u64;
    let data = sample_scene_pixels(stacks, labels, task, cfg.sample_n, cfg.seed.wrapping_add(k))?;
    log::info!("{task} forest: {} pixels", data.len());
    RfModel::fit(task, &data, hyper)
}

/// Fit all four forests on the given label sets with `cfg.hyper`; tree
/// seeds are offset by 1000 per task.
pub fn train_rf_suite(stacks: &[SceneStack], labels: &[&LabelSet], cfg: &RfConfig) -> Result<RfSuite> {
    let fit = |task: Task, k: u64| {
        let mut h = cfg.hyper.clone();
        h.seed = h.seed.wrapping_add(1000 * k);
        train_rf_model(task, stacks, labels, cfg, &h)
    };
    Ok(RfSuite {
        clp: fit(Task::Clp, 0)?,
        cth: fit(Task::Cth, 1)?,
        cer: fit(Task::Cer, 2)?,
        cot: fit(Task::Cot, 3)?,
    })
}

/// Per-pixel retrieval of a whole scene; properties only on pixels the
/// phase forest calls cloudy.
pub fn predict_scene_rf(suite: &RfSuite, stack: &SceneStack) -> Result<Retrieval> {
    let g = *stack.grid();
    let base = stack.base();
    ensure!(
        base.len() == BASE_CHANNELS,
        Shape,
        "forest suite takes {BASE_CHANNELS} base channels, stack has {}",
        base.len()
    );
    let t0 = Instant::now();
    let n = g.len();
    let chans = base.channels();
    let mut feats = vec![0.0; n * CHAINED_CHANNELS];
    for (c, ch) in chans.iter().enumerate() {
        for (k, &v) in ch.values().iter().enumerate() {
            feats[k * CHAINED_CHANNELS + c] = v;
        }
    }
    let clp: Vec<f64> = feats
        .par_chunks(CHAINED_CHANNELS)
        .map(|x| suite.clp.forest.predict_row(&x[..BASE_CHANNELS]))
        .collect();
    for (k, &c) in clp.iter().enumerate() {
        feats[k * CHAINED_CHANNELS + BASE_CHANNELS] = c;
    }
    let cloudy: Vec<bool> = clp.iter().map(|&c| c != CLEAR as f64).collect();
    let prop = |m: &RfModel| -> Result<Raster> {
        let v: Vec<f64> = feats
            .par_chunks(CHAINED_CHANNELS)
            .zip(&cloudy)
            .map(|(x, &c)| if c { decode(m.target_transform, m.forest.predict_row(x)) } else { 0.0 })
            .collect();
        Raster::new(g, v, cloudy.clone())
    };
    let cth = prop(&suite.cth)?;
    let cer = prop(&suite.cer)?;
    let cot = prop(&suite.cot)?;
    let seconds = t0.elapsed().as_secs_f64();
    Ok(Retrieval {
        labels: LabelSet {
            clp: Raster::from_values(g, clp)?,
            cth,
            cer,
            cot,
            coverage: Mask::filled(g, true),
        },
        seconds,
    })
}
