//! Gradient-boosted regression trees with exact greedy splits.
//!
//! Trees are grown best-first up to `max_leaf_nodes` leaves. Splits minimise
//! the squared error of the pseudo-residuals; leaf values are the Newton step
//! `sum(g) / sum(h)`, which is the residual mean for squared loss.

use alloc::vec::Vec;

use super::sigmoid;
use crate::error::{bail, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GbtLoss {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GbtParams {
    pub loss: GbtLoss,
    pub learning_rate: f64,
    pub max_leaf_nodes: usize,
    pub n_rounds: usize,
    pub min_samples_leaf: usize,
}

impl GbtParams {
    /// 100 rounds and at least 20 samples per leaf.
    pub fn new(loss: GbtLoss, learning_rate: f64, max_leaf_nodes: usize) -> Self {
        GbtParams {
            loss,
            learning_rate,
            max_leaf_nodes,
            n_rounds: 100,
            min_samples_leaf: 20,
        }
    }

    pub fn with_rounds(mut self, n_rounds: usize) -> Self {
        self.n_rounds = n_rounds;
        self
    }

    pub fn with_min_samples_leaf(mut self, m: usize) -> Self {
        self.min_samples_leaf = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bail!(
                Config,
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            );
        }
        if self.max_leaf_nodes < 2 {
            bail!(
                Config,
                "max_leaf_nodes must be >= 2, got {}",
                self.max_leaf_nodes
            );
        }
        if self.min_samples_leaf == 0 {
            bail!(Config, "min_samples_leaf must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
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

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[feature] <= threshold { left } else { right };
                }
                TreeNode::Leaf { value } => return value,
            }
        }
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// `(feature, threshold)` of the root, if the tree split at all.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes[0] {
            TreeNode::Split {
                feature, threshold, ..
            } => Some((feature, threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GbtModel {
    pub params: GbtParams,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    /// Additive score `base + lr * sum(trees)` (log-odds for logistic loss).
    pub fn decision_row(&self, x: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        self.base_score + self.params.learning_rate * s
    }

    /// Response for squared loss, probability for logistic loss.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let raw = self.decision_row(x);
        match self.params.loss {
            GbtLoss::Squared => raw,
            GbtLoss::Logistic => sigmoid(raw),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn decision_function(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.decision_row(x.row(i))).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct OpenLeaf {
    node: usize,
    /// Row indices sorted by each feature.
    sorted: Vec<Vec<usize>>,
    sum_g: f64,
    sum_h: f64,
    best: Option<SplitCandidate>,
}

struct Grower<'a> {
    columns: &'a [Vec<f64>],
    grad: &'a [f64],
    min_leaf: usize,
    /// `inv_count[k] = 1 / k`.
    inv_count: &'a [f64],
}

impl Grower<'_> {
    fn best_split(&self, sorted: &[Vec<usize>], sum_g: f64) -> Option<SplitCandidate> {
        let n = sorted.first().map_or(0, Vec::len);
        if n < 2 * self.min_leaf {
            return None;
        }
        let inv = self.inv_count;
        let parent = sum_g * sum_g * inv[n];
        let mut best: Option<SplitCandidate> = None;
        let mut best_gain = f64::NEG_INFINITY;
        for (f, rows) in sorted.iter().enumerate() {
            let col = &self.columns[f];
            let first = self.min_leaf - 1;
            let mut gl: f64 = rows[..first].iter().map(|&i| self.grad[i]).sum();
            let mut lo = col[rows[first]];
            // position `pos` puts rows[..=pos] on the left
            for pos in first..n - self.min_leaf {
                gl += self.grad[rows[pos]];
                let hi = col[rows[pos + 1]];
                if lo < hi {
                    let nl = pos + 1;
                    let gr = sum_g - gl;
                    let gain = gl * gl * inv[nl] + gr * gr * inv[n - nl] - parent;
                    if gain > best_gain {
                        best_gain = gain;
                        let mut threshold = lo + (hi - lo) * 0.5;
                        if threshold >= hi {
                            threshold = lo;
                        }
                        best = Some(SplitCandidate {
                            feature: f,
                            threshold,
                            gain,
                        });
                    }
                }
                lo = hi;
            }
        }
        best.filter(|b| b.gain > 0.0)
    }

    fn open(&self, node: usize, sorted: Vec<Vec<usize>>, hess: &[f64]) -> OpenLeaf {
        let rows = &sorted[0];
        let sum_g = rows.iter().map(|&i| self.grad[i]).sum();
        let sum_h = rows.iter().map(|&i| hess[i]).sum();
        let best = self.best_split(&sorted, sum_g);
        OpenLeaf {
            node,
            sorted,
            sum_g,
            sum_h,
            best,
        }
    }

    fn grow(
        &self,
        root_sorted: &[Vec<usize>],
        hess: &[f64],
        max_leaves: usize,
        goes_left: &mut [bool],
    ) -> Tree {
        let mut nodes = alloc::vec![TreeNode::Leaf { value: 0.0 }];
        let mut open = alloc::vec![self.open(0, root_sorted.to_vec(), hess)];
        while open.len() < max_leaves {
            let mut pick: Option<usize> = None;
            for (i, leaf) in open.iter().enumerate() {
                if let Some(b) = leaf.best {
                    if pick.map_or(true, |p| b.gain > open[p].best.unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(pick) = pick else { break };
            let leaf = open.remove(pick);
            let split = leaf.best.unwrap();
            let col = &self.columns[split.feature];
            let mut n_left = 0;
            for &i in &leaf.sorted[0] {
                goes_left[i] = col[i] <= split.threshold;
                n_left += goes_left[i] as usize;
            }
            let n_right = leaf.sorted[0].len() - n_left;
            let (mut left, mut right) = (
                Vec::with_capacity(leaf.sorted.len()),
                Vec::with_capacity(leaf.sorted.len()),
            );
            for rows in &leaf.sorted {
                let (mut l, mut r) = (Vec::with_capacity(n_left), Vec::with_capacity(n_right));
                for &i in rows {
                    if goes_left[i] {
                        l.push(i);
                    } else {
                        r.push(i);
                    }
                }
                left.push(l);
                right.push(r);
            }
            let (lid, rid) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes.push(TreeNode::Leaf { value: 0.0 });
            nodes[leaf.node] = TreeNode::Split {
                feature: split.feature,
                threshold: split.threshold,
                left: lid,
                right: rid,
            };
            open.push(self.open(lid, left, hess));
            open.push(self.open(rid, right, hess));
        }
        for leaf in open {
            nodes[leaf.node] = TreeNode::Leaf {
                value: leaf.sum_g / (leaf.sum_h + 1e-12),
            };
        }
        Tree { nodes }
    }
}

/// Fits a boosted ensemble. For logistic loss `y` must hold 0/1 labels.
pub fn gbt_fit(x: &Matrix, y: &[f64], params: GbtParams) -> Result<GbtModel> {
    params.validate()?;
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        bail!(Degenerate, "boosting needs at least 2 samples, got {}", n);
    }
    if y.len() != n {
        bail!(Shape, "x has {} rows but y has {}", n, y.len());
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match params.loss {
        GbtLoss::Squared => mean,
        GbtLoss::Logistic => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                bail!(Data, "logistic boosting needs 0/1 targets");
            }
            let r = mean.clamp(1e-15, 1.0 - 1e-15);
            libm::log(r / (1.0 - r))
        }
    };
    let mut model = GbtModel {
        params,
        base_score,
        trees: Vec::new(),
    };
    let constant_labels = params.loss == GbtLoss::Logistic && (mean == 0.0 || mean == 1.0);
    if params.learning_rate == 0.0 || constant_labels || p == 0 {
        return Ok(model);
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|j| x.column(j)).collect();
    let presorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut raw = alloc::vec![base_score; n];
    let mut grad = alloc::vec![0.0; n];
    let mut hess = alloc::vec![1.0; n];
    let mut goes_left = alloc::vec![false; n];
    let inv_count: Vec<f64> = (0..=n)
        .map(|k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
        .collect();
    for _ in 0..params.n_rounds {
        for i in 0..n {
            match params.loss {
                GbtLoss::Squared => grad[i] = y[i] - raw[i],
                GbtLoss::Logistic => {
                    let pr = sigmoid(raw[i]);
                    grad[i] = y[i] - pr;
                    hess[i] = pr * (1.0 - pr);
                }
            }
        }
        let grower = Grower {
            columns: &columns,
            grad: &grad,
            min_leaf: params.min_samples_leaf,
            inv_count: &inv_count,
        };
        let tree = grower.grow(&presorted, &hess, params.max_leaf_nodes, &mut goes_left);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += params.learning_rate * tree.predict_row(x.row(i));
        }
        model.trees.push(tree);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::mse;
    use crate::rng::SimRng;
    use alloc::vec;

    fn toy(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = SimRng::new(seed);
        let x = Matrix::new(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).unwrap();
        let y = (0..n)
            .map(|i| libm::sin(2.0 * x.get(i, 0)) + x.get(i, 1) * x.get(i, 1) + 0.1 * rng.normal())
            .collect();
        (x, y)
    }

    #[test]
    fn zero_rounds_predicts_mean() {
        let (x, y) = toy(50, 1);
        let m = gbt_fit(
            &x,
            &y,
            GbtParams::new(GbtLoss::Squared, 0.1, 8).with_rounds(0),
        )
        .unwrap();
        let mean = y.iter().sum::<f64>() / 50.0;
        assert!(m.predict(&x).iter().all(|&p| p == mean));
    }

    #[test]
    fn zero_learning_rate_is_base_only() {
        let (x, y) = toy(50, 2);
        let a = gbt_fit(
            &x,
            &y,
            GbtParams::new(GbtLoss::Squared, 0.0, 8).with_rounds(10),
        )
        .unwrap();
        let b = gbt_fit(
            &x,
            &y,
            GbtParams::new(GbtLoss::Squared, 0.3, 8).with_rounds(0),
        )
        .unwrap();
        assert_eq!(a.predict(&x), b.predict(&x));
    }

    #[test]
    fn training_mse_non_increasing() {
        let (x, y) = toy(300, 3);
        let mut last = f64::INFINITY;
        for rounds in 0..15 {
            let m = gbt_fit(
                &x,
                &y,
                GbtParams::new(GbtLoss::Squared, 0.5, 6)
                    .with_rounds(rounds)
                    .with_min_samples_leaf(5),
            )
            .unwrap();
            let e = mse(&m.predict(&x), &y);
            assert!(e <= last + 1e-12, "round {rounds}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn leaf_budget_respected() {
        let (x, y) = toy(400, 4);
        let m = gbt_fit(
            &x,
            &y,
            GbtParams::new(GbtLoss::Squared, 0.1, 7)
                .with_rounds(5)
                .with_min_samples_leaf(1),
        )
        .unwrap();
        for t in &m.trees {
            assert!(t.n_leaves() <= 7);
        }
        assert_eq!(m.trees[0].n_leaves(), 7);
    }

    #[test]
    fn constant_labels_give_base_model() {
        let (x, _) = toy(30, 5);
        let m = gbt_fit(
            &x,
            &vec![1.0; 30],
            GbtParams::new(GbtLoss::Logistic, 0.1, 4),
        )
        .unwrap();
        assert!(m.trees.is_empty());
        assert!(m.predict(&x).iter().all(|&p| p > 0.999));
    }

    #[test]
    fn classifier_learns_separable_signal() {
        let mut rng = SimRng::new(9);
        let n = 400;
        let x = Matrix::new(n, 1, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| if x.get(i, 0) > 0.3 { 1.0 } else { 0.0 })
            .collect();
        let m = gbt_fit(
            &x,
            &y,
            GbtParams::new(GbtLoss::Logistic, 0.3, 4).with_rounds(30),
        )
        .unwrap();
        let p = m.predict(&x);
        let acc = p
            .iter()
            .zip(&y)
            .filter(|(p, y)| (**p > 0.5) == (**y > 0.5))
            .count();
        assert!(acc as f64 / n as f64 > 0.97);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
