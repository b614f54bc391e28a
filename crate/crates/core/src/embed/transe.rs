use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{split_edges, SplitFractions};
use crate::error::{Error, Result};
use crate::mathkernel::{opt_step, Matrix, Optimizer, ParamStore};
use crate::txgraph::{GraphMode, SnapshotGraph, TemporalGraph};

const ENTITY: &str = "entity";
const RELATION: &str = "relation";
const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransEConfig {
    pub dim: usize,
    pub gamma: f64,
    pub batch_size: usize,
    /// Corrupted triples per observed triple.
    pub negatives: usize,
    pub lr: f64,
    /// Optimizer steps per snapshot.
    pub steps: usize,
    pub reg_coef: f64,
    /// Steps averaged into one entry of the loss history.
    pub log_every: usize,
    pub split: SplitFractions,
    pub split_seed: u64,
    pub seed: u64,
}

impl Default for TransEConfig {
    fn default() -> Self {
        Self {
            dim: 4,
            gamma: 19.9,
            batch_size: 2048,
            negatives: 128,
            lr: 0.25,
            steps: 24_000,
            reg_coef: 1e-9,
            log_every: 100,
            split: SplitFractions::default(),
            split_seed: 2022,
            seed: 0,
        }
    }
}

impl TransEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.negatives == 0 || self.log_every == 0 {
            return Err(Error::invalid("transe dim, batch_size, negatives and log_every must be positive"));
        }
        if !(self.gamma > 0.0) || !(self.lr > 0.0) || !(self.reg_coef >= 0.0) {
            return Err(Error::invalid("transe gamma and lr must be positive, reg_coef non-negative"));
        }
        Ok(())
    }

    /// Half-width of the uniform initialisation range.
    pub fn init_bound(&self) -> f64 {
        (self.gamma + 2.0) / self.dim as f64
    }
}

/// Plausibility of `(h, r, t)`: `gamma - ||h + r - t||_2`.
pub fn transe_score(h: &[f64], r: &[f64], t: &[f64], gamma: f64) -> Result<f64> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(Error::Shape {
            op: "transe_score",
            left: (h.len(), r.len()),
            right: (t.len(), t.len()),
        });
    }
    let sq: f64 = h.iter().zip(r).zip(t).map(|((h, r), t)| (h + r - t).powi(2)).sum();
    Ok(gamma - sq.sqrt())
}

/// One observed triple by registry index; `rel` is zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    pub head: usize,
    pub rel: usize,
    pub tail: usize,
}

/// A corrupted triple paired with the observed triple it was drawn for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativePair {
    pub positive: usize,
    pub negative: Triple,
}

/// Mean margin ranking loss `max(0, gamma - score(pos) + score(neg))` over `pairs`,
/// plus `reg_coef` times the mean squared norm of the positive triples' vectors.
///
/// Gradients are accumulated into the store's `entity` and `relation` tensors.
pub fn margin_loss_and_grad(
    store: &mut ParamStore,
    positives: &[Triple],
    pairs: &[NegativePair],
    gamma: f64,
    reg_coef: f64,
) -> Result<f64> {
    if positives.is_empty() || pairs.is_empty() {
        return Err(Error::invalid("margin loss needs at least one positive and one negative"));
    }
    let ent = store.value(ENTITY)?.clone();
    let rel = store.value(RELATION)?.clone();
    let dim = ent.cols();
    let mut g_ent = Matrix::zeros(ent.rows(), dim);
    let mut g_rel = Matrix::zeros(rel.rows(), dim);

    let residual = |t: &Triple, u: &mut [f64]| -> f64 {
        let (h, r, tl) = (ent.row(t.head), rel.row(t.rel), ent.row(t.tail));
        let mut sq = DIST_EPS;
        for k in 0..dim {
            u[k] = h[k] + r[k] - tl[k];
            sq += u[k] * u[k];
        }
        sq.sqrt()
    };
    let mut pos_u = vec![0.0; positives.len() * dim];
    let pos_d: Vec<f64> = positives
        .iter()
        .zip(pos_u.chunks_mut(dim))
        .map(|(t, u)| residual(t, u))
        .collect();

    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let push = |g_ent: &mut Matrix, g_rel: &mut Matrix, t: &Triple, u: &[f64], c: f64| {
        for k in 0..dim {
            let g = c * u[k];
            g_ent.row_mut(t.head)[k] += g;
            g_rel.row_mut(t.rel)[k] += g;
            g_ent.row_mut(t.tail)[k] -= g;
        }
    };
    let mut un = vec![0.0; dim];
    for p in pairs {
        let dp = pos_d[p.positive];
        let dn = residual(&p.negative, &mut un);
        let l = gamma + dp - dn;
        if l > 0.0 {
            loss += l * scale;
            let up = &pos_u[p.positive * dim..(p.positive + 1) * dim];
            push(&mut g_ent, &mut g_rel, &positives[p.positive], up, scale / dp);
            push(&mut g_ent, &mut g_rel, &p.negative, &un, -scale / dn);
        }
    }
    if reg_coef > 0.0 {
        let rs = reg_coef / positives.len() as f64;
        for t in positives {
            for (is_rel, row) in [(false, t.head), (true, t.rel), (false, t.tail)] {
                let (m, g) = if is_rel { (&rel, &mut g_rel) } else { (&ent, &mut g_ent) };
                for k in 0..dim {
                    let x = m.row(row)[k];
                    loss += rs * x * x;
                    g.row_mut(row)[k] += 2.0 * rs * x;
                }
            }
        }
    }
    store.get_mut(ENTITY)?.grad.add_assign(&g_ent)?;
    store.get_mut(RELATION)?.grad.add_assign(&g_rel)?;
    Ok(loss)
}

/// Entity and relation vectors learned for one snapshot.
#[derive(Debug, Clone)]
pub struct TransESnapshot {
    pub params: ParamStore,
    /// Mean loss per block of `log_every` steps.
    pub loss_history: Vec<f64>,
    /// Whether each registry node appeared in a training triple.
    pub trained_nodes: Vec<bool>,
}

impl TransESnapshot {
    pub fn entities(&self) -> &Matrix {
        self.params.value(ENTITY).expect("entity tensor")
    }

    pub fn relations(&self) -> &Matrix {
        self.params.value(RELATION).expect("relation tensor")
    }
}

#[derive(Debug, Clone)]
pub struct TransEModel {
    pub gamma: f64,
    pub dim: usize,
    pub snapshots: Vec<TransESnapshot>,
}

pub(crate) fn snapshot_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn init_params(n_nodes: usize, n_rel: usize, cfg: &TransEConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let b = cfg.init_bound();
    let mut draw = |rows: usize| {
        let data = (0..rows * cfg.dim).map(|_| rng.random_range(-b..b)).collect();
        Matrix::from_vec(rows, cfg.dim, data).expect("sized")
    };
    let mut store = ParamStore::new();
    store.insert(ENTITY, draw(n_nodes));
    store.insert(RELATION, draw(n_rel));
    store
}

/// Trains one TransE model per snapshot of a heterogeneous graph. Snapshots train
/// in parallel, each from its own RNG stream of `cfg.seed`.
pub fn train_transe(g: &TemporalGraph, cfg: &TransEConfig) -> Result<TransEModel> {
    cfg.validate()?;
    if g.mode != GraphMode::Heterogeneous {
        return Err(Error::invalid("TransE training expects a heterogeneous graph"));
    }
    let n_rel = g.num_kinds.max(1) as usize;
    let snapshots = g
        .snapshots
        .par_iter()
        .enumerate()
        .map(|(i, s)| train_snapshot(s, i, g.num_nodes(), n_rel, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(TransEModel {
        gamma: cfg.gamma,
        dim: cfg.dim,
        snapshots,
    })
}

fn train_snapshot(s: &SnapshotGraph, index: usize, n_nodes: usize, n_rel: usize, cfg: &TransEConfig) -> Result<TransESnapshot> {
    let mut rng = snapshot_rng(cfg.seed, index);
    let mut params = init_params(n_nodes, n_rel, cfg, &mut rng);
    let edges = s.multi_edges().ok_or_else(|| Error::invalid("heterogeneous snapshot expected"))?;
    let triples: Vec<Triple> = edges
        .iter()
        .map(|e| Triple {
            head: e.src,
            rel: (e.kind.max(1) - 1) as usize,
            tail: e.dst,
        })
        .collect();
    if triples.iter().any(|t| t.rel >= n_rel) {
        return Err(Error::invalid(format!("snapshot {index} has a kind beyond {n_rel}")));
    }
    let split = split_edges(triples.len(), cfg.split, cfg.split_seed, index as u64)?;
    let train: Vec<Triple> = split.train.iter().map(|&i| triples[i]).collect();
    let mut trained_nodes = vec![false; n_nodes];
    for t in &train {
        trained_nodes[t.head] = true;
        trained_nodes[t.tail] = true;
    }
    if train.is_empty() {
        log::warn!("snapshot {index} has no training triples; TransE vectors stay at initialisation");
        return Ok(TransESnapshot {
            params,
            loss_history: Vec::new(),
            trained_nodes,
        });
    }
    let entities: Vec<usize> = (0..n_nodes).filter(|&i| trained_nodes[i]).collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::new();
    let mut block = 0.0;
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut pairs = Vec::with_capacity(cfg.batch_size * cfg.negatives);
    for step in 0..cfg.steps {
        batch.clear();
        while batch.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]]);
            cursor += 1;
        }
        pairs.clear();
        for (p, t) in batch.iter().enumerate() {
            for _ in 0..cfg.negatives {
                let e = entities[rng.random_range(0..entities.len())];
                let negative = if rng.random::<bool>() {
                    Triple { head: e, ..*t }
                } else {
                    Triple { tail: e, ..*t }
                };
                pairs.push(NegativePair { positive: p, negative });
            }
        }
        block += margin_loss_and_grad(&mut params, &batch, &pairs, cfg.gamma, cfg.reg_coef)?;
        opt_step(&mut params, Optimizer::adam(), cfg.lr)?;
        if (step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps {
            let len = (step % cfg.log_every) + 1;
            history.push(block / len as f64);
            block = 0.0;
        }
    }
    Ok(TransESnapshot {
        params,
        loss_history: history,
        trained_nodes,
    })
}

/// The initial entity matrix `train_transe` draws for snapshot `index`.
pub fn transe_initial_entities(n_nodes: usize, n_rel: usize, cfg: &TransEConfig, index: usize) -> Matrix {
    let mut rng = snapshot_rng(cfg.seed, index);
    init_params(n_nodes, n_rel, cfg, &mut rng).value(ENTITY).expect("entity").clone()
}
