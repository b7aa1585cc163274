//! Rankability gate: a small gradient-boosted tree classifier over four
//! report/shortlist features, with "weight" (split-count) feature
//! importance and stratified cross-validation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BugReport, Snapshot};
use crate::error::{Error, Result};
use crate::retrieval::CandidateSet;
use crate::textproc::{has_stack_trace, similarity, strip_comments, tokenize};

pub const N_FEATURES: usize = 4;
pub const FEATURE_NAMES: [&str; N_FEATURES] =
    ["report_length", "source_length", "stack_trace", "similarity"];

/// Classification threshold on the predicted probability.
pub const GATE_THRESHOLD: f64 = 0.5;

/// Features of one (report, shortlist) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFeatures {
    /// Token count of summary + description.
    pub report_length: f64,
    /// Median comment-stripped character length over the candidate files.
    pub source_length: f64,
    /// 1.0 when the report carries a stack trace.
    pub stack_trace: f64,
    /// Mean token-overlap similarity over the candidate files.
    pub similarity: f64,
}

impl GateFeatures {
    pub fn as_array(&self) -> [f64; N_FEATURES] {
        [
            self.report_length,
            self.source_length,
            self.stack_trace,
            self.similarity,
        ]
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Flat regression tree; children reference node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }

    fn splits(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, .. } => Some(*feature),
            TreeNode::Leaf { .. } => None,
        })
    }
}

/// Boosted ensemble on logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

/// Per-feature split counts, the "weight" importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub counts: [usize; N_FEATURES],
}

impl ImportanceReport {
    /// Features with counts, most-used first; ties break by feature index.
    pub fn ranked(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<(usize, usize)> =
            self.counts.iter().copied().enumerate().collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        order
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Extract the four gate features for one report and its shortlist.
pub fn extract_features(
    report: &BugReport,
    candidates: &CandidateSet,
    snapshot: &Snapshot,
) -> Result<GateFeatures> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let report_length = tokenize(&report.full_text()).len() as f64;
    let mut lengths: Vec<usize> = Vec::with_capacity(candidates.len());
    let mut sim_sum = 0.0;
    for entry in &candidates.entries {
        let file = snapshot.file(&entry.path).ok_or_else(|| {
            Error::Validation(format!(
                "candidate '{}' missing from snapshot '{}'",
                entry.path, snapshot.version_id
            ))
        })?;
        lengths.push(strip_comments(&file.content).chars().count());
        sim_sum += similarity(report, file)?;
    }
    lengths.sort_unstable();
    // Lower-middle element for even counts.
    let source_length = lengths[(lengths.len() - 1) / 2] as f64;
    Ok(GateFeatures {
        report_length,
        source_length,
        stack_trace: if has_stack_trace(report) { 1.0 } else { 0.0 },
        similarity: sim_sum / candidates.len() as f64,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Train the boosted gate. Each round fits a depth-limited regression
/// tree to the logistic-loss residuals with exact greedy splits; leaf
/// values are Newton steps `sum(residual) / (sum(p(1-p)) + 1)`.
pub fn train_gate(rows: &[(GateFeatures, bool)], cfg: &GateConfig) -> Result<GateModel> {
    let n_pos = rows.iter().filter(|(_, y)| *y).count();
    if n_pos == 0 || n_pos == rows.len() {
        return Err(Error::DegenerateLabels);
    }
    let xs: Vec<[f64; N_FEATURES]> = rows.iter().map(|(f, _)| f.as_array()).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, y)| *y as u8 as f64).collect();
    let base_score = {
        let p = n_pos as f64 / rows.len() as f64;
        (p / (1.0 - p)).ln()
    };
    let mut margins = vec![base_score; rows.len()];
    let mut model = GateModel {
        base_score,
        learning_rate: cfg.learning_rate,
        trees: Vec::with_capacity(cfg.n_trees),
    };
    let all: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..cfg.n_trees {
        let probs: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
        let grad: Vec<f64> = ys.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let hess: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
        let mut tree = Tree::default();
        grow_node(&xs, &grad, &hess, &all, 0, cfg.max_depth, &mut tree);
        for (i, x) in xs.iter().enumerate() {
            margins[i] += cfg.learning_rate * tree.predict(x);
        }
        model.trees.push(tree);
    }
    Ok(model)
}

const LAMBDA: f64 = 1.0;

fn leaf_value(grad: &[f64], hess: &[f64], indices: &[usize]) -> f64 {
    let g: f64 = indices.iter().map(|&i| grad[i]).sum();
    let h: f64 = indices.iter().map(|&i| hess[i]).sum();
    g / (h + LAMBDA)
}

/// Exact greedy split minimizing the squared error of residuals.
fn best_split(
    xs: &[[f64; N_FEATURES]],
    grad: &[f64],
    indices: &[usize],
) -> Option<(usize, f64, f64)> {
    let total: f64 = indices.iter().map(|&i| grad[i]).sum();
    let total_sq: f64 = indices.iter().map(|&i| grad[i] * grad[i]).sum();
    let n = indices.len() as f64;
    let parent_sse = total_sq - total * total / n;
    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..N_FEATURES {
        let mut order: Vec<usize> = indices.to_vec();
        order.sort_by(|&a, &b| {
            xs[a][feature]
                .partial_cmp(&xs[b][feature])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for split_at in 1..order.len() {
            let i = order[split_at - 1];
            left_sum += grad[i];
            left_sq += grad[i] * grad[i];
            let lo = xs[order[split_at - 1]][feature];
            let hi = xs[order[split_at]][feature];
            if lo == hi {
                continue;
            }
            let threshold = lo + (hi - lo) / 2.0;
            let nl = split_at as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl) + (right_sq - right_sum * right_sum / nr);
            let gain = parent_sse - sse;
            if gain > 1e-12 && best.is_none_or(|(_, _, g)| gain > g) {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}

fn grow_node(
    xs: &[[f64; N_FEATURES]],
    grad: &[f64],
    hess: &[f64],
    indices: &[usize],
    depth: usize,
    max_depth: usize,
    tree: &mut Tree,
) -> usize {
    let node_idx = tree.nodes.len();
    if depth >= max_depth || indices.len() < 2 {
        tree.nodes.push(TreeNode::Leaf {
            value: leaf_value(grad, hess, indices),
        });
        return node_idx;
    }
    match best_split(xs, grad, indices) {
        None => {
            tree.nodes.push(TreeNode::Leaf {
                value: leaf_value(grad, hess, indices),
            });
            node_idx
        }
        Some((feature, threshold, _)) => {
            tree.nodes.push(TreeNode::Leaf { value: 0.0 }); // placeholder
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .partition(|&&i| xs[i][feature] < threshold);
            let left = grow_node(xs, grad, hess, &left_idx, depth + 1, max_depth, tree);
            let right = grow_node(xs, grad, hess, &right_idx, depth + 1, max_depth, tree);
            tree.nodes[node_idx] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            };
            node_idx
        }
    }
}

/// Probability that the report is rankable.
pub fn predict_gate(model: &GateModel, x: &GateFeatures) -> f64 {
    let arr = x.as_array();
    let margin: f64 = model.base_score
        + model.learning_rate
            * model
                .trees
                .iter()
                .map(|t| t.predict(&arr))
                .sum::<f64>();
    sigmoid(margin)
}

pub fn predict_label(model: &GateModel, x: &GateFeatures) -> bool {
    predict_gate(model, x) > GATE_THRESHOLD
}

/// Split counts per feature across all trees, the "weight" importance.
pub fn importance(model: &GateModel) -> ImportanceReport {
    let mut counts = [0usize; N_FEATURES];
    for tree in &model.trees {
        for feature in tree.splits() {
            counts[feature] += 1;
        }
    }
    ImportanceReport { counts }
}

/// Mean logistic loss on `rows` after each boosting round, round 0 being
/// the base score alone.
pub fn staged_logistic_loss(model: &GateModel, rows: &[(GateFeatures, bool)]) -> Vec<f64> {
    let xs: Vec<[f64; N_FEATURES]> = rows.iter().map(|(f, _)| f.as_array()).collect();
    let ys: Vec<f64> = rows.iter().map(|(_, y)| *y as u8 as f64).collect();
    let mut margins = vec![model.base_score; rows.len()];
    let loss = |margins: &[f64]| -> f64 {
        margins
            .iter()
            .zip(&ys)
            .map(|(&m, &y)| {
                let p = sigmoid(m).clamp(1e-15, 1.0 - 1e-15);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / rows.len() as f64
    };
    let mut out = vec![loss(&margins)];
    for tree in &model.trees {
        for (i, x) in xs.iter().enumerate() {
            margins[i] += model.learning_rate * tree.predict(x);
        }
        out.push(loss(&margins));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<FoldMetrics>,
    pub mean: FoldMetrics,
    /// Folds skipped because a class was absent from their training part.
    pub warnings: Vec<String>,
}

/// Stratified k-fold cross-validation; metrics on the positive class.
pub fn cross_validate(
    rows: &[(GateFeatures, bool)],
    cfg: &GateConfig,
    folds: usize,
) -> Result<CrossValReport> {
    if folds < 2 || folds > rows.len() {
        return Err(Error::Config(format!(
            "folds {} must be in 2..={}",
            folds,
            rows.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pos: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1).collect();
    let mut neg: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].1).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignment = vec![0usize; rows.len()];
    for (j, &i) in pos.iter().chain(neg.iter()).enumerate() {
        assignment[i] = j % folds;
    }

    let mut per_fold = Vec::new();
    let mut warnings = Vec::new();
    for fold in 0..folds {
        let train: Vec<(GateFeatures, bool)> = rows
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a != fold)
            .map(|(r, _)| *r)
            .collect();
        let test: Vec<&(GateFeatures, bool)> = rows
            .iter()
            .zip(&assignment)
            .filter(|(_, &a)| a == fold)
            .map(|(r, _)| r)
            .collect();
        let model = match train_gate(&train, cfg) {
            Ok(m) => m,
            Err(Error::DegenerateLabels) => {
                warnings.push(format!("fold {fold}: single-class training part, skipped"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (x, y) in test {
            let pred = predict_label(&model, x);
            match (pred, *y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_fold.push(FoldMetrics {
            precision,
            recall,
            f1,
        });
    }
    if per_fold.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    let n = per_fold.len() as f64;
    let mean = FoldMetrics {
        precision: per_fold.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_fold.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_fold.iter().map(|m| m.f1).sum::<f64>() / n,
    };
    Ok(CrossValReport {
        folds: per_fold,
        mean,
        warnings,
    })
}

/// Stable-field JSON serialization of the gate model.
pub fn save_gate(model: &GateModel, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(model)
        .map_err(|e| Error::Format(format!("serializing gate model: {e}")))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_gate(path: &Path) -> Result<GateModel> {
    let text = fs::read_to_string(path)?;
    let model: GateModel =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("parsing gate model: {e}")))?;
    for (t, tree) in model.trees.iter().enumerate() {
        for node in &tree.nodes {
            if let TreeNode::Split {
                feature,
                left,
                right,
                ..
            } = node
            {
                if *feature >= N_FEATURES || *left >= tree.nodes.len() || *right >= tree.nodes.len()
                {
                    return Err(Error::Format(format!(
                        "gate model tree {t} has an out-of-range split"
                    )));
                }
            }
        }
    }
    Ok(model)
}
