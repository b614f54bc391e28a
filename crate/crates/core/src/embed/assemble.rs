use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::sage::SageModel;
use super::transe::TransEModel;
use crate::error::{Error, Result};
use crate::mathkernel::Matrix;
use crate::txgraph::{AccountId, TemporalGraph};

const MAGIC: &[u8; 4] = b"TXEM";
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Baseline,
    Proposed,
}

impl EmbeddingMode {
    fn code(self) -> u8 {
        match self {
            EmbeddingMode::Baseline => 0,
            EmbeddingMode::Proposed => 1,
        }
    }
}

/// Per-account feature rows, aligned with a graph registry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub mode: EmbeddingMode,
    pub registry_hash: u64,
    pub accounts: Vec<AccountId>,
    pub n_snapshots: usize,
    pub per_snapshot_dim: usize,
    /// Attribute columns appended after the temporal block (0 when none).
    pub attr_arity: usize,
    pub features: Matrix,
}

impl EmbeddingMatrix {
    pub fn expected_width(&self) -> usize {
        self.per_snapshot_dim * self.n_snapshots + self.attr_arity
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.cols() != self.expected_width() {
            return Err(Error::Format(format!(
                "feature width {} but {} snapshots x {} + {} attributes",
                self.features.cols(),
                self.n_snapshots,
                self.per_snapshot_dim,
                self.attr_arity
            )));
        }
        if self.features.rows() != self.accounts.len() {
            return Err(Error::Format("feature rows do not match the account list".into()));
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        Ok(())
    }

    pub fn row_of(&self, account: AccountId) -> Option<usize> {
        self.accounts.binary_search(&account).ok()
    }

    /// Header (magic, version, mode, registry hash, snapshot count, per-snapshot
    /// width, attribute arity, rows, cols), account ids, then row-major values.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&EMBEDDING_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.mode.code()])?;
        w.write_all(&self.registry_hash.to_le_bytes())?;
        for v in [self.n_snapshots, self.per_snapshot_dim, self.attr_arity] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        w.write_all(&(self.features.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.features.cols() as u64).to_le_bytes())?;
        for a in &self.accounts {
            w.write_all(&a.to_le_bytes())?;
        }
        for v in self.features.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut take = |n: usize| -> Result<[u8; 8]> {
            buf = [0u8; 8];
            r.read_exact(&mut buf[..n])
                .map_err(|e| Error::Format(format!("truncated embedding file: {e}")))?;
            Ok(buf)
        };
        if &take(4)?[..4] != MAGIC {
            return Err(Error::Format("not an embedding file".into()));
        }
        let u32_at = |b: [u8; 8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let version = u32_at(take(4)?);
        if version != EMBEDDING_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "embedding file version {version}, expected {EMBEDDING_FORMAT_VERSION}"
            )));
        }
        let mode = match take(1)?[0] {
            0 => EmbeddingMode::Baseline,
            1 => EmbeddingMode::Proposed,
            m => return Err(Error::Format(format!("unknown embedding mode {m}"))),
        };
        let registry_hash = u64::from_le_bytes(take(8)?);
        let n_snapshots = u32_at(take(4)?) as usize;
        let per_snapshot_dim = u32_at(take(4)?) as usize;
        let attr_arity = u32_at(take(4)?) as usize;
        let rows = u64::from_le_bytes(take(8)?) as usize;
        let cols = u64::from_le_bytes(take(8)?) as usize;
        let accounts = (0..rows).map(|_| take(8).map(u64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
        let data = (0..rows * cols)
            .map(|_| take(8).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let m = EmbeddingMatrix {
            mode,
            registry_hash,
            accounts,
            n_snapshots,
            per_snapshot_dim,
            attr_arity,
            features: Matrix::from_vec(rows, cols, data)?,
        };
        m.validate()?;
        Ok(m)
    }
}

/// Trained per-snapshot models of either engine.
#[derive(Debug, Clone, Copy)]
pub enum TrainedModels<'a> {
    Baseline(&'a TransEModel),
    Proposed(&'a SageModel),
}

/// Concatenates per-snapshot node vectors in week order.
///
/// Baseline rows always end with the attribute block; proposed rows carry it only
/// when `append_attrs` is set. Rows follow `g`'s registry.
pub fn assemble_features(
    models: TrainedModels<'_>,
    g: &TemporalGraph,
    attrs: Option<&Matrix>,
    append_attrs: bool,
) -> Result<EmbeddingMatrix> {
    let n = g.num_nodes();
    let (mode, blocks): (EmbeddingMode, Vec<&Matrix>) = match models {
        TrainedModels::Baseline(m) => (EmbeddingMode::Baseline, m.snapshots.iter().map(|s| s.entities()).collect()),
        TrainedModels::Proposed(m) => (
            EmbeddingMode::Proposed,
            m.snapshots
                .iter()
                .flat_map(|s| [&s.unsupervised.embeddings, &s.regression.embeddings])
                .collect(),
        ),
    };
    let per_block = if mode == EmbeddingMode::Proposed { 2 } else { 1 };
    let n_snapshots = blocks.len() / per_block;
    if n_snapshots != g.num_snapshots() {
        return Err(Error::invalid(format!(
            "{n_snapshots} trained snapshot models for a graph with {} snapshots",
            g.num_snapshots()
        )));
    }
    if let Some(b) = blocks.iter().find(|b| b.rows() != n) {
        return Err(Error::Shape {
            op: "assemble_features",
            left: b.shape(),
            right: (n, 0),
        });
    }
    let per_snapshot_dim = blocks.iter().take(per_block).map(|b| b.cols()).sum::<usize>();
    let attr_block = match (mode, append_attrs) {
        (EmbeddingMode::Baseline, _) => Some(attrs.ok_or_else(|| Error::invalid("baseline features require node attributes"))?),
        (EmbeddingMode::Proposed, true) => {
            Some(attrs.ok_or_else(|| Error::invalid("append_attrs set but no attributes given"))?)
        }
        (EmbeddingMode::Proposed, false) => None,
    };
    if let Some(a) = attr_block {
        if a.rows() != n {
            return Err(Error::Shape {
                op: "assemble_features",
                left: a.shape(),
                right: (n, 0),
            });
        }
    }
    let attr_arity = attr_block.map_or(0, Matrix::cols);
    let width = per_snapshot_dim * n_snapshots + attr_arity;
    let mut data = Vec::with_capacity(n * width);
    for r in 0..n {
        for b in &blocks {
            data.extend_from_slice(b.row(r));
        }
        if let Some(a) = attr_block {
            data.extend_from_slice(a.row(r));
        }
    }
    let m = EmbeddingMatrix {
        mode,
        registry_hash: g.registry.fingerprint(),
        accounts: g.registry.ids().to_vec(),
        n_snapshots,
        per_snapshot_dim,
        attr_arity,
        features: Matrix::from_vec(n, width, data)?,
    };
    m.validate()?;
    Ok(m)
}
