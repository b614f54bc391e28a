use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{split_edges, SplitFractions};
use super::transe::snapshot_rng;
use crate::error::{Error, Result};
use crate::mathkernel::{opt_step, Matrix, Optimizer, ParamStore, RowGroups, Tape, Var};
use crate::txgraph::{standardize, GraphMode, SnapshotGraph, TemporalGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SageConfig {
    pub hidden: usize,
    pub out: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Uniform negative nodes per observed edge.
    pub negatives: usize,
    /// Training edges per optimizer step; neighbourhood aggregation is always full-graph.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            out: 16,
            epochs: 20,
            lr: 0.1,
            negatives: 1,
            batch_size: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub hidden: usize,
    pub out: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            out: 8,
            head_hidden: 16,
            epochs: 10,
            lr: 1e-2,
            batch_size: 1024,
            seed: 1,
        }
    }
}

fn check_positive(what: &str, values: &[usize], lr: f64) -> Result<()> {
    if values.contains(&0) || !(lr > 0.0) {
        return Err(Error::invalid(format!("{what}: sizes, batch and lr must be positive")));
    }
    Ok(())
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("sage", &[self.hidden, self.out, self.negatives, self.batch_size], self.lr)
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("regression", &[self.hidden, self.out, self.head_hidden, self.batch_size], self.lr)
    }
}

/// Undirected, de-duplicated neighbour lists over `n_nodes` nodes.
pub fn neighborhoods(n_nodes: usize, edges: &[(usize, usize)]) -> Arc<RowGroups> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for &(s, d) in edges {
        if s != d {
            adj[s].push(d);
            adj[d].push(s);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    Arc::new(RowGroups::from_groups(adj))
}

/// Adds a two-layer mean-aggregator network under `prefix`.
pub fn init_sage(store: &mut ParamStore, prefix: &str, in_dim: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) {
    store.insert_uniform(format!("{prefix}w1"), 2 * in_dim, hidden, 2 * in_dim, rng);
    store.insert(format!("{prefix}b1"), Matrix::zeros(1, hidden));
    store.insert_uniform(format!("{prefix}w2"), 2 * hidden, out, 2 * hidden, rng);
    store.insert(format!("{prefix}b2"), Matrix::zeros(1, out));
}

fn sage_layer(tape: &mut Tape, store: &ParamStore, w: &str, b: &str, x: Var, groups: &Arc<RowGroups>) -> Result<Var> {
    let agg = tape.mean_rows(x, groups.clone())?;
    let cat = tape.concat_cols(x, agg)?;
    let w = tape.param(store, w)?;
    let b = tape.param(store, b)?;
    let lin = tape.matmul(cat, w)?;
    tape.add_row(lin, b)
}

/// `[x || mean(x_N)] W1 + b1 -> ReLU -> [h || mean(h_N)] W2 + b2`; an empty
/// neighbourhood contributes a zero mean.
pub fn sage_forward(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, groups: &Arc<RowGroups>) -> Result<Var> {
    let h = sage_layer(tape, store, &format!("{prefix}w1"), &format!("{prefix}b1"), x, groups)?;
    let h = tape.relu(h)?;
    sage_layer(tape, store, &format!("{prefix}w2"), &format!("{prefix}b2"), h, groups)
}

/// `mean(-log sigma(z_u . z_v)) + k * mean(-log sigma(-z_a . z_b))` over observed
/// pairs and the `k`-per-positive negative pairs.
pub fn link_loss(tape: &mut Tape, z: Var, positives: &[(usize, usize)], negatives: &[(usize, usize)]) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::invalid("link loss needs at least one positive edge"));
    }
    let dots = |tape: &mut Tape, pairs: &[(usize, usize)]| -> Result<Var> {
        let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let za = tape.gather_rows(z, &a)?;
        let zb = tape.gather_rows(z, &b)?;
        let prod = tape.mul(za, zb)?;
        tape.row_sum(prod)
    };
    let pos = dots(tape, positives)?;
    let pos = tape.log_sigmoid(pos)?;
    let mut total = tape.mean(pos)?;
    if !negatives.is_empty() {
        let neg = dots(tape, negatives)?;
        let neg = tape.scale(neg, -1.0)?;
        let neg = tape.log_sigmoid(neg)?;
        let neg = tape.mean(neg)?;
        let k = negatives.len() as f64 / positives.len() as f64;
        let neg = tape.scale(neg, k)?;
        total = tape.add(total, neg)?;
    }
    tape.scale(total, -1.0)
}

/// Per-node inputs for one snapshot: optional attribute columns followed by the
/// standardized `ln(1+x)` of in-degree, out-degree, value received and value sent.
pub fn node_features(s: &SnapshotGraph, n_nodes: usize, attrs: Option<&Matrix>) -> Result<Matrix> {
    let mut cols = vec![vec![0.0; n_nodes]; 4];
    for (src, dst, v) in s.triples() {
        cols[0][dst] += 1.0;
        cols[1][src] += 1.0;
        cols[2][dst] += v;
        cols[3][src] += v;
    }
    let cols: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| standardize(&c.iter().map(|x| x.ln_1p()).collect::<Vec<_>>()))
        .collect();
    let mut m = Matrix::zeros(n_nodes, 4);
    for (c, col) in cols.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            m.set(r, c, *v);
        }
    }
    match attrs {
        Some(a) if a.rows() != n_nodes => Err(Error::Shape {
            op: "node_features",
            left: a.shape(),
            right: (n_nodes, 4),
        }),
        Some(a) => a.concat_cols(&m),
        None => Ok(m),
    }
}

fn infer(store: &ParamStore, prefix: &str, x: &Matrix, groups: &Arc<RowGroups>) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let z = sage_forward(&mut tape, store, prefix, xv, groups)?;
    Ok(tape.value(z).clone())
}

#[derive(Debug, Clone)]
pub struct UnsupervisedOutcome {
    pub params: ParamStore,
    /// Node embeddings from the full snapshot, one row per registry node.
    pub embeddings: Matrix,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the link-prediction branch on `edges[train]` and embeds every node
/// using all of `edges` for aggregation.
pub fn train_sage_unsupervised(
    edges: &[(usize, usize)],
    train: &[usize],
    x: &Matrix,
    cfg: &SageConfig,
    index: usize,
) -> Result<UnsupervisedOutcome> {
    cfg.validate()?;
    let n = x.rows();
    let mut rng = snapshot_rng(cfg.seed, index);
    let mut params = ParamStore::new();
    init_sage(&mut params, "", x.cols(), cfg.hidden, cfg.out, &mut rng);
    if let Some(&bad) = train.iter().find(|&&i| i >= edges.len()) {
        return Err(Error::invalid(format!("training edge index {bad} out of range")));
    }
    let train: Vec<(usize, usize)> = train.iter().map(|&i| edges[i]).collect();
    let mut history = Vec::new();
    if train.is_empty() {
        log::warn!("snapshot {index} has no training edges; unsupervised branch left at initialisation");
    } else {
        let groups = neighborhoods(n, &train);
        let mut present: Vec<usize> = train.iter().flat_map(|&(a, b)| [a, b]).collect();
        present.sort_unstable();
        present.dedup();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut steps = 0;
            for batch in order.chunks(cfg.batch_size) {
                let pos: Vec<(usize, usize)> = batch.iter().map(|&i| train[i]).collect();
                let neg: Vec<(usize, usize)> = pos
                    .iter()
                    .flat_map(|&(u, _)| std::iter::repeat_n(u, cfg.negatives))
                    .map(|u| (u, present[rng.random_range(0..present.len())]))
                    .collect();
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone())?;
                let z = sage_forward(&mut tape, &params, "", xv, &groups)?;
                let loss = link_loss(&mut tape, z, &pos, &neg)?;
                epoch_loss += tape.value(loss).item()?;
                steps += 1;
                tape.backward(loss, &mut params)?;
                opt_step(&mut params, Optimizer::adam(), cfg.lr)?;
            }
            history.push(epoch_loss / steps as f64);
        }
    }
    let embeddings = infer(&params, "", x, &neighborhoods(n, edges))?;
    Ok(UnsupervisedOutcome {
        params,
        embeddings,
        loss_history: history,
    })
}

/// Adds the value head `[x_i || x_j] -> ReLU(W1) -> W2` under `head.`.
pub fn init_head(store: &mut ParamStore, node_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) {
    store.insert_uniform("head.w1", 2 * node_dim, hidden, 2 * node_dim, rng);
    store.insert("head.b1", Matrix::zeros(1, hidden));
    store.insert_uniform("head.w2", hidden, 1, hidden, rng);
    store.insert("head.b2", Matrix::zeros(1, 1));
}

/// Mean squared error of the value head on `edges`, with node inputs
/// `x_i = [h_uns_i || h_reg_i]` and `h_reg` from the `reg.` network.
pub fn regression_loss(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    h_uns: Var,
    groups: &Arc<RowGroups>,
    edges: &[(usize, usize)],
    targets: &[f64],
) -> Result<Var> {
    if edges.len() != targets.len() || edges.is_empty() {
        return Err(Error::invalid("regression needs one target per edge and at least one edge"));
    }
    let h_reg = sage_forward(tape, store, "reg.", x, groups)?;
    let node = tape.concat_cols(h_uns, h_reg)?;
    let src: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let dst: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let xi = tape.gather_rows(node, &src)?;
    let xj = tape.gather_rows(node, &dst)?;
    let input = tape.concat_cols(xi, xj)?;
    let w1 = tape.param(store, "head.w1")?;
    let b1 = tape.param(store, "head.b1")?;
    let hid = tape.matmul(input, w1)?;
    let hid = tape.add_row(hid, b1)?;
    let hid = tape.relu(hid)?;
    let w2 = tape.param(store, "head.w2")?;
    let b2 = tape.param(store, "head.b2")?;
    let pred = tape.matmul(hid, w2)?;
    let pred = tape.add_row(pred, b2)?;
    let target = tape.constant(Matrix::from_vec(targets.len(), 1, targets.to_vec())?)?;
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}

/// `ln(1+v)` standardized over the given values.
pub fn value_targets(values: &[f64]) -> Vec<f64> {
    standardize(&values.iter().map(|v| v.ln_1p()).collect::<Vec<_>>())
}

#[derive(Debug, Clone)]
pub struct RegressionOutcome {
    pub params: ParamStore,
    pub embeddings: Matrix,
    /// Training-set MSE before the first epoch and after each epoch.
    pub mse_history: Vec<f64>,
}

/// Trains the regression branch and value head jointly; `h_uns` enters as a constant.
pub fn train_edge_regression(
    edges: &[(usize, usize)],
    values: &[f64],
    train: &[usize],
    x: &Matrix,
    h_uns: &Matrix,
    cfg: &RegressionConfig,
    index: usize,
) -> Result<RegressionOutcome> {
    cfg.validate()?;
    if edges.len() != values.len() {
        return Err(Error::invalid("one value per edge required"));
    }
    if h_uns.rows() != x.rows() {
        return Err(Error::Shape {
            op: "train_edge_regression",
            left: h_uns.shape(),
            right: x.shape(),
        });
    }
    let n = x.rows();
    let mut rng = snapshot_rng(cfg.seed, index);
    let mut params = ParamStore::new();
    init_sage(&mut params, "reg.", x.cols(), cfg.hidden, cfg.out, &mut rng);
    init_head(&mut params, h_uns.cols() + cfg.out, cfg.head_hidden, &mut rng);
    let targets = value_targets(values);
    let idx = train;
    let mut history = Vec::new();
    if idx.is_empty() {
        log::warn!("snapshot {index} has no training edges; regression branch left at initialisation");
    } else {
        if let Some(&bad) = idx.iter().find(|&&i| i >= edges.len()) {
            return Err(Error::invalid(format!("training edge index {bad} out of range")));
        }
        let train: Vec<(usize, usize)> = idx.iter().map(|&i| edges[i]).collect();
        let train_t: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
        let groups = neighborhoods(n, &train);
        let full_mse = |params: &ParamStore| -> Result<f64> {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone())?;
            let hv = tape.constant(h_uns.clone())?;
            let l = regression_loss(&mut tape, params, xv, hv, &groups, &train, &train_t)?;
            tape.value(l).item()
        };
        history.push(full_mse(&params)?);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let e: Vec<(usize, usize)> = batch.iter().map(|&i| train[i]).collect();
                let t: Vec<f64> = batch.iter().map(|&i| train_t[i]).collect();
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone())?;
                let hv = tape.constant(h_uns.clone())?;
                let loss = regression_loss(&mut tape, &params, xv, hv, &groups, &e, &t)?;
                tape.backward(loss, &mut params)?;
                opt_step(&mut params, Optimizer::adam(), cfg.lr)?;
            }
            history.push(full_mse(&params)?);
        }
    }
    let embeddings = infer(&params, "reg.", x, &neighborhoods(n, edges))?;
    Ok(RegressionOutcome {
        params,
        embeddings,
        mse_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposedConfig {
    pub split: SplitFractions,
    pub split_seed: u64,
    pub unsupervised: SageConfig,
    pub regression: RegressionConfig,
}

impl Default for ProposedConfig {
    fn default() -> Self {
        Self {
            split: SplitFractions::default(),
            split_seed: 2022,
            unsupervised: SageConfig::default(),
            regression: RegressionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SageSnapshot {
    pub unsupervised: UnsupervisedOutcome,
    pub regression: RegressionOutcome,
}

#[derive(Debug, Clone)]
pub struct SageModel {
    pub snapshots: Vec<SageSnapshot>,
}

impl SageModel {
    pub fn per_snapshot_dim(&self) -> usize {
        self.snapshots
            .first()
            .map(|s| s.unsupervised.embeddings.cols() + s.regression.embeddings.cols())
            .unwrap_or(0)
    }
}

/// Trains both branches for every snapshot of a homogeneous graph, in parallel.
pub fn train_proposed(g: &TemporalGraph, attrs: Option<&Matrix>, cfg: &ProposedConfig) -> Result<SageModel> {
    if g.mode != GraphMode::Homogeneous {
        return Err(Error::invalid("the proposed model expects a homogeneous graph"));
    }
    let n = g.num_nodes();
    let snapshots = g
        .snapshots
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let edges: Vec<(usize, usize)> = s.triples().iter().map(|t| (t.0, t.1)).collect();
            let values: Vec<f64> = s.triples().iter().map(|t| t.2).collect();
            let x = node_features(s, n, attrs)?;
            let train = split_edges(edges.len(), cfg.split, cfg.split_seed, i as u64)?.train;
            let unsupervised = train_sage_unsupervised(&edges, &train, &x, &cfg.unsupervised, i)?;
            let regression =
                train_edge_regression(&edges, &values, &train, &x, &unsupervised.embeddings, &cfg.regression, i)?;
            Ok(SageSnapshot { unsupervised, regression })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SageModel { snapshots })
}
