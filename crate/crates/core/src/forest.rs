//! Random-forest classifier used to rank weather features by importance.
//!
//! The forest is not the deployed model; it runs once on the labeled source
//! training split to decide which feature columns the network sees. Trees are
//! standard CART: bootstrap resampling, Gini impurity, `ceil(sqrt(F))`
//! candidate features per node, midpoint thresholds. Every tree draws from
//! its own counter-derived random stream, so building in parallel and in
//! serial yields bit-identical forests.

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Forest shape and stopping rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Nodes with fewer samples than this become leaves.
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_samples_split: 5,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_split < 2 {
            return Err(Error::InvalidConfig(format!(
                "forest needs n_trees >= 1, max_depth >= 1, min_samples_split >= 2; \
                 got {}/{}/{}",
                self.n_trees, self.max_depth, self.min_samples_split
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// One CART tree; nodes live in a flat arena, the root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    fn predict_row(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// A fitted forest with per-feature importances normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<DecisionTree>,
    n_features: usize,
    classes: usize,
    importances: Vec<f64>,
}

/// Class with the highest count; ties go to the lowest class id.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c as f64 / n as f64;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

struct TreeBuilder<'a> {
    x: &'a Tensor,
    labels: &'a [usize],
    classes: usize,
    cfg: &'a ForestConfig,
    n_total: usize,
    features_per_split: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

impl<'a> TreeBuilder<'a> {
    fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Best `(feature, threshold, gain)` over a random feature subset, or
    /// `None` when no candidate threshold reduces impurity.
    fn best_split(&self, indices: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let n = indices.len();
        let f_all = self.x.cols();
        let parent = gini(&self.class_counts(indices), n);
        let candidates = rand::seq::index::sample(rng, f_all, self.features_per_split);
        let mut best: Option<(usize, f64, f64)> = None;

        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        for feature in candidates {
            pairs.clear();
            for &i in indices {
                pairs.push((self.x.row(i)[feature], self.labels[i]));
            }
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

            let mut left = vec![0usize; self.classes];
            let mut right = self.class_counts(indices);
            for cut in 1..n {
                let (value, label) = pairs[cut - 1];
                left[label] += 1;
                right[label] -= 1;
                let next_value = pairs[cut].0;
                if next_value == value {
                    continue;
                }
                let weighted = (cut as f64 * gini(&left, cut)
                    + (n - cut) as f64 * gini(&right, n - cut))
                    / n as f64;
                let gain = parent - weighted;
                let threshold = value + (next_value - value) / 2.0;
                let better = match best {
                    None => gain > 1e-12,
                    Some((bf, bt, bg)) => {
                        gain > bg
                            || (gain == bg && (feature < bf || (feature == bf && threshold < bt)))
                    }
                };
                if better {
                    best = Some((feature, threshold, gain));
                }
            }
        }
        best
    }

    fn build(&mut self, indices: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.class_counts(&indices);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let make_leaf =
            depth >= self.cfg.max_depth || indices.len() < self.cfg.min_samples_split || pure;
        let split = if make_leaf {
            None
        } else {
            self.best_split(&indices, rng)
        };
        match split {
            None => {
                self.nodes.push(Node::Leaf {
                    class: majority(&counts),
                });
                self.nodes.len() - 1
            }
            Some((feature, threshold, gain)) => {
                self.importance[feature] += indices.len() as f64 / self.n_total as f64 * gain;
                let (l, r): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| self.x.row(i)[feature] <= threshold);
                let at = self.nodes.len();
                self.nodes.push(Node::Leaf { class: 0 }); // placeholder until children exist
                let left = self.build(l, depth + 1, rng);
                let right = self.build(r, depth + 1, rng);
                self.nodes[at] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                at
            }
        }
    }
}

fn fit_tree(
    x: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &ForestConfig,
    tree_index: usize,
) -> (DecisionTree, Vec<f64>) {
    let n = x.rows();
    let mut rng = stream_rng(cfg.seed, Stream::TreeBase as u64 + tree_index as u64);
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let mut builder = TreeBuilder {
        x,
        labels,
        classes,
        cfg,
        n_total: n,
        features_per_split: (x.cols() as f64).sqrt().ceil() as usize,
        nodes: Vec::new(),
        importance: vec![0.0; x.cols()],
    };
    builder.build(bootstrap, 0, &mut rng);
    (
        DecisionTree {
            nodes: builder.nodes,
        },
        builder.importance,
    )
}

fn check_training_input(x: &Tensor, labels: &[usize], classes: usize) -> Result<()> {
    if x.ndim() != 2 || x.rows() == 0 || x.cols() == 0 {
        return Err(Error::ShapeMismatch {
            op: "forest fit".into(),
            expected: "non-empty [n, features] matrix".into(),
            actual: format!("{:?}", x.shape()),
        });
    }
    if labels.len() != x.rows() {
        return Err(Error::ShapeMismatch {
            op: "forest fit".into(),
            expected: format!("{} labels", x.rows()),
            actual: format!("{}", labels.len()),
        });
    }
    if !x.all_finite() {
        return Err(Error::NonFinite {
            context: "forest training features".into(),
        });
    }
    if classes < 2 {
        return Err(Error::InvalidConfig(format!(
            "forest needs at least 2 classes, got {classes}"
        )));
    }
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
    }
    if x.rows() < 2 {
        return Err(Error::TooSmallToSplit { n: x.rows() });
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Fits a forest on `[n, features]` data. Trees build in parallel but each
/// one owns a stream derived from `(seed, tree index)`, so the result never
/// depends on scheduling.
pub fn fit_forest(
    x: &Tensor,
    labels: &[usize],
    classes: usize,
    cfg: &ForestConfig,
) -> Result<Forest> {
    cfg.validate()?;
    check_training_input(x, labels, classes)?;

    let fitted: Vec<(DecisionTree, Vec<f64>)> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|k| fit_tree(x, labels, classes, cfg, k))
        .collect();

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut importances = vec![0.0; x.cols()];
    for (tree, imp) in fitted {
        trees.push(tree);
        for (total, v) in importances.iter_mut().zip(imp) {
            *total += v;
        }
    }
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for v in &mut importances {
            *v /= total;
        }
    } else {
        // No tree found a useful split (e.g. stopping rules forbade any);
        // fall back to uniform so the sum-to-one contract still holds.
        importances.fill(1.0 / x.cols() as f64);
    }
    Ok(Forest {
        trees,
        n_features: x.cols(),
        classes,
        importances,
    })
}

impl Forest {
    /// Majority vote over trees; ties go to the lowest class id.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        if x.ndim() != 2 || x.cols() != self.n_features {
            return Err(Error::ShapeMismatch {
                op: "forest predict".into(),
                expected: format!("[n, {}]", self.n_features),
                actual: format!("{:?}", x.shape()),
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                context: "forest prediction features".into(),
            });
        }
        let mut out = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mut votes = vec![0usize; self.classes];
            for tree in &self.trees {
                votes[tree.predict_row(row)] += 1;
            }
            out.push(majority(&votes));
        }
        Ok(out)
    }

    /// Mean-decrease-in-impurity scores, normalized to sum to one.
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }
}

/// Indices of the `k` highest-importance features, returned in ascending
/// index order (the order feature columns keep downstream). Importance ties
/// prefer the lower index.
pub fn select_features(importances: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || importances.is_empty() {
        return Err(Error::EmptySelection {
            context: "feature selection needs k >= 1 and a non-empty importance vector".into(),
        });
    }
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(k.min(importances.len())).collect();
    keep.sort_unstable();
    Ok(keep)
}
