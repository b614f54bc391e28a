use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathkernel::{sigmoid, Matrix};

pub const GBDT_FORMAT_VERSION: u32 = 1;

/// Gradient boosting with logistic loss and exact greedy splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub rounds: usize,
    pub depth: usize,
    pub lr: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian mass on each side of a split.
    pub min_child_weight: f64,
    /// Row fraction drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self { rounds: 100, depth: 4, lr: 0.1, lambda: 1.0, min_child_weight: 1e-3, subsample: 1.0, seed: 0 }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("gbdt lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.min_child_weight >= 0.0) {
            return Err(Error::invalid("gbdt lambda and min_child_weight must be non-negative"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::invalid(format!("gbdt subsample must lie in (0, 1], got {}", self.subsample)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Regression tree stored as a node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    fn scale(&mut self, s: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf { value } = n {
                *value *= s;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub n_features: usize,
    /// Log-odds of the training base rate.
    pub init: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Leaf values already include shrinkage.
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first tree and after each round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(s)?;
        if m.version != GBDT_FORMAT_VERSION {
            return Err(Error::Format(format!("model version {}, expected {GBDT_FORMAT_VERSION}", m.version)));
        }
        for t in &m.trees {
            for n in &t.nodes {
                if let TreeNode::Split { feature, left, right, .. } = *n {
                    if feature >= m.n_features || left >= t.nodes.len() || right >= t.nodes.len() {
                        return Err(Error::Format("tree node references out of range".into()));
                    }
                }
            }
        }
        Ok(m)
    }
}

fn check_features(x: &Matrix) -> Result<()> {
    for r in 0..x.rows() {
        if let Some(c) = x.row(r).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {r}, column {c}")));
        }
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn log_loss(margins: &[f64], y: &[bool]) -> f64 {
    let s: f64 = margins.iter().zip(y).map(|(&f, &t)| softplus(f) - if t { f } else { 0.0 }).sum();
    s / margins.len() as f64
}

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    gl: f64,
    hl: f64,
}

#[derive(Clone, Copy)]
struct Scan {
    gl: f64,
    hl: f64,
    last: f64,
    seen: bool,
}

/// Feature columns presorted once per training run.
struct Presorted {
    order: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
}

impl Presorted {
    fn new(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let mut order = Vec::with_capacity(d);
        let mut values = Vec::with_capacity(d);
        for f in 0..d {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
            values.push(idx.iter().map(|&r| x.get(r as usize, f)).collect());
            order.push(idx);
        }
        Self { order, values }
    }
}

fn split_threshold(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Grows one level-wise tree on the rows with `in_tree[r]`.
fn grow_tree(x: &Matrix, pre: &Presorted, g: &[f64], h: &[f64], in_tree: &[bool], cfg: &GbdtConfig) -> Tree {
    let n = x.rows();
    let lambda = cfg.lambda;
    let leaf = |gs: f64, hs: f64| -gs / (hs + lambda);
    let score = |gs: f64, hs: f64| gs * gs / (hs + lambda);

    let mut node_of: Vec<u32> = in_tree.iter().map(|&b| if b { 0 } else { NO_NODE }).collect();
    let (g0, h0) = (0..n).filter(|&r| in_tree[r]).fold((0.0, 0.0), |(a, b), r| (a + g[r], b + h[r]));
    let mut nodes = vec![TreeNode::Leaf { value: leaf(g0, h0) }];
    let mut totals = vec![(g0, h0)];
    let mut active: Vec<usize> = vec![0];

    for _ in 0..cfg.depth {
        if active.is_empty() {
            break;
        }
        let mut slot = vec![usize::MAX; nodes.len()];
        for (p, &nd) in active.iter().enumerate() {
            slot[nd] = p;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let fresh = Scan { gl: 0.0, hl: 0.0, last: 0.0, seen: false };
        let mut scans = vec![fresh; active.len()];
        for f in 0..x.cols() {
            scans.iter_mut().for_each(|s| *s = fresh);
            for (&r, &v) in pre.order[f].iter().zip(&pre.values[f]) {
                let nd = node_of[r as usize];
                if nd == NO_NODE {
                    continue;
                }
                let p = slot[nd as usize];
                if p == usize::MAX {
                    continue;
                }
                let st = &mut scans[p];
                if st.seen && v > st.last {
                    let (gt, ht) = totals[active[p]];
                    let (gr, hr) = (gt - st.gl, ht - st.hl);
                    if st.hl >= cfg.min_child_weight && hr >= cfg.min_child_weight {
                        let gain = score(st.gl, st.hl) + score(gr, hr) - score(gt, ht);
                        if best[p].is_none_or(|b| gain > b.gain) {
                            best[p] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: split_threshold(st.last, v),
                                gl: st.gl,
                                hl: st.hl,
                            });
                        }
                    }
                }
                st.gl += g[r as usize];
                st.hl += h[r as usize];
                st.last = v;
                st.seen = true;
            }
        }

        let mut next = Vec::new();
        let mut routes: Vec<Option<(usize, f64, u32, u32)>> = vec![None; nodes.len()];
        for (p, &nd) in active.iter().enumerate() {
            let Some(c) = best[p].filter(|c| c.gain > 1e-12) else { continue };
            let (gt, ht) = totals[nd];
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(TreeNode::Leaf { value: leaf(c.gl, c.hl) });
            nodes.push(TreeNode::Leaf { value: leaf(gt - c.gl, ht - c.hl) });
            totals.push((c.gl, c.hl));
            totals.push((gt - c.gl, ht - c.hl));
            nodes[nd] = TreeNode::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
            routes[nd] = Some((c.feature, c.threshold, l as u32, r as u32));
            next.extend([l, r]);
        }
        for r in 0..n {
            let nd = node_of[r];
            if nd == NO_NODE {
                continue;
            }
            if let Some(Some((f, thr, l, rt))) = routes.get(nd as usize) {
                node_of[r] = if x.get(r, *f) <= *thr { *l } else { *rt };
            }
        }
        active = next;
    }
    Tree { nodes }
}

/// Fits a boosted ensemble to binary labels.
///
/// Each round adds a Newton-step tree scaled by `lr`. If the full step would
/// raise the training loss the step is halved until it does not, so the loss
/// history is non-increasing.
pub fn train_gbdt(x: &Matrix, y: &[bool], cfg: &GbdtConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    if x.rows() != y.len() {
        return Err(Error::Shape { op: "train_gbdt", left: x.shape(), right: (y.len(), 1) });
    }
    let n_pos = y.iter().filter(|&&t| t).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::SingleClass("train_gbdt"));
    }
    check_features(x)?;
    let n = y.len();
    let base = n_pos as f64 / n as f64;
    let init = (base / (1.0 - base)).ln();
    let pre = Presorted::new(x);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut margins = vec![init; n];
    let mut loss = log_loss(&margins, y);
    let mut history = vec![loss];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for round in 0..cfg.rounds {
        for r in 0..n {
            let p = sigmoid(margins[r]);
            g[r] = p - if y[r] { 1.0 } else { 0.0 };
            h[r] = (p * (1.0 - p)).max(1e-16);
        }
        let in_tree: Vec<bool> = if cfg.subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < cfg.subsample).collect()
        } else {
            vec![true; n]
        };
        let mut tree = grow_tree(x, &pre, &g, &h, &in_tree, cfg);
        let delta: Vec<f64> = (0..n).map(|r| tree.predict(x.row(r))).collect();
        let mut step = cfg.lr;
        let mut accepted = false;
        for _ in 0..40 {
            for r in 0..n {
                trial[r] = margins[r] + step * delta[r];
            }
            let l = log_loss(&trial, y);
            if l <= loss {
                loss = l;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            log::debug!("round {round}: no loss-decreasing step; tree zeroed");
            step = 0.0;
            trial.copy_from_slice(&margins);
        }
        std::mem::swap(&mut margins, &mut trial);
        tree.scale(step);
        trees.push(tree);
        history.push(loss);
    }
    Ok(GbdtModel {
        version: GBDT_FORMAT_VERSION,
        n_features: x.cols(),
        init,
        learning_rate: cfg.lr,
        max_depth: cfg.depth,
        trees,
        train_loss: history,
    })
}

/// Probability of the positive class for every row of `x`.
pub fn predict_proba(model: &GbdtModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != model.n_features {
        return Err(Error::Shape { op: "predict_proba", left: x.shape(), right: (0, model.n_features) });
    }
    check_features(x)?;
    Ok((0..x.rows()).map(|r| sigmoid(model.margin(x.row(r)))).collect())
}

/// Pluggable binary classifier used by the pipeline.
pub trait Classifier {
    type Model;
    fn fit(&self, x: &Matrix, y: &[bool]) -> Result<Self::Model>;
    fn predict_proba(&self, model: &Self::Model, x: &Matrix) -> Result<Vec<f64>>;
}

impl Classifier for GbdtConfig {
    type Model = GbdtModel;

    fn fit(&self, x: &Matrix, y: &[bool]) -> Result<GbdtModel> {
        train_gbdt(x, y, self)
    }

    fn predict_proba(&self, model: &GbdtModel, x: &Matrix) -> Result<Vec<f64>> {
        predict_proba(model, x)
    }
}
