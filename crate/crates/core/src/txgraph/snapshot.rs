use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::transactions::{AccountId, TransactionTable};
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Dense indexing of account ids, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<AccountId>", into = "Vec<AccountId>")]
pub struct NodeRegistry {
    ids: Vec<AccountId>,
    index: HashMap<AccountId, usize>,
}

impl From<Vec<AccountId>> for NodeRegistry {
    fn from(mut ids: Vec<AccountId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self { ids, index }
    }
}

impl From<NodeRegistry> for Vec<AccountId> {
    fn from(r: NodeRegistry) -> Self {
        r.ids
    }
}

impl NodeRegistry {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[AccountId] {
        &self.ids
    }

    pub fn index_of(&self, id: AccountId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn id(&self, idx: usize) -> AccountId {
        self.ids[idx]
    }

    /// SHA-256 over the little-endian id sequence, truncated to 64 bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for id in &self.ids {
            h.update(id.to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    Heterogeneous,
    Homogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggEdge {
    pub src: usize,
    pub dst: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", content = "list", rename_all = "snake_case")]
pub enum SnapshotEdges {
    Heterogeneous(Vec<MultiEdge>),
    Homogeneous(Vec<AggEdge>),
}

/// All transfers of one week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGraph {
    pub week: usize,
    pub edges: SnapshotEdges,
}

impl SnapshotGraph {
    pub fn num_edges(&self) -> usize {
        match &self.edges {
            SnapshotEdges::Heterogeneous(e) => e.len(),
            SnapshotEdges::Homogeneous(e) => e.len(),
        }
    }

    pub fn multi_edges(&self) -> Option<&[MultiEdge]> {
        match &self.edges {
            SnapshotEdges::Heterogeneous(e) => Some(e),
            SnapshotEdges::Homogeneous(_) => None,
        }
    }

    pub fn agg_edges(&self) -> Option<&[AggEdge]> {
        match &self.edges {
            SnapshotEdges::Homogeneous(e) => Some(e),
            SnapshotEdges::Heterogeneous(_) => None,
        }
    }

    /// `(src, dst, value)` for either form.
    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        match &self.edges {
            SnapshotEdges::Heterogeneous(e) => e.iter().map(|x| (x.src, x.dst, x.value)).collect(),
            SnapshotEdges::Homogeneous(e) => e.iter().map(|x| (x.src, x.dst, x.value)).collect(),
        }
    }

    /// Sorted indices of nodes touching at least one edge.
    pub fn node_set(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.triples().iter().flat_map(|&(s, d, _)| [s, d]).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn total_value(&self) -> f64 {
        self.triples().iter().map(|t| t.2).sum()
    }
}

/// Consecutive weekly snapshots over a shared registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGraph {
    pub format_version: u32,
    pub mode: GraphMode,
    pub week_origin: NaiveDate,
    /// Largest transaction kind code seen (kinds are 1-based).
    pub num_kinds: u32,
    pub registry: NodeRegistry,
    pub snapshots: Vec<SnapshotGraph>,
}

/// The Monday on or before `day`.
pub fn default_week_origin(day: NaiveDate) -> NaiveDate {
    day - chrono::Duration::days(day.weekday().num_days_from_monday() as i64)
}

pub fn week_index(day: NaiveDate, origin: NaiveDate) -> Result<usize> {
    let delta = (day - origin).num_days();
    if delta < 0 {
        return Err(Error::BeforeOrigin {
            day: day.to_string(),
            origin: origin.to_string(),
        });
    }
    Ok((delta / 7) as usize)
}

/// Groups transactions into weekly heterogeneous snapshots counted from `week_origin`.
///
/// Weeks without transactions between the first and the last are kept as empty snapshots.
pub fn build_snapshots(table: &TransactionTable, week_origin: NaiveDate) -> Result<TemporalGraph> {
    if table.is_empty() {
        return Err(Error::EmptyInput);
    }
    let registry = NodeRegistry::from(table.rows().iter().flat_map(|t| [t.src, t.dst]).collect::<Vec<_>>());
    let n_weeks = week_index(table.last_day(), week_origin)? + 1;
    let mut weeks: Vec<Vec<MultiEdge>> = vec![Vec::new(); n_weeks];
    for t in table.rows() {
        let w = week_index(t.day, week_origin)?;
        weeks[w].push(MultiEdge {
            src: registry.index_of(t.src).expect("registered"),
            dst: registry.index_of(t.dst).expect("registered"),
            kind: t.kind,
            value: t.value,
        });
    }
    Ok(TemporalGraph {
        format_version: GRAPH_FORMAT_VERSION,
        mode: GraphMode::Heterogeneous,
        week_origin,
        num_kinds: table.max_kind(),
        registry,
        snapshots: weeks
            .into_iter()
            .enumerate()
            .map(|(week, e)| SnapshotGraph {
                week,
                edges: SnapshotEdges::Heterogeneous(e),
            })
            .collect(),
    })
}

/// Collapses every ordered pair's transfers into one edge carrying the summed value.
///
/// Sums accumulate in snapshot edge order; output edges are sorted by `(src, dst)`.
pub fn aggregate_homogeneous(g: &TemporalGraph) -> Result<TemporalGraph> {
    if g.mode != GraphMode::Heterogeneous {
        return Err(Error::invalid("aggregate_homogeneous expects a heterogeneous graph"));
    }
    let snapshots = g
        .snapshots
        .iter()
        .map(|s| {
            let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for e in s.multi_edges().expect("heterogeneous") {
                *sums.entry((e.src, e.dst)).or_insert(0.0) += e.value;
            }
            SnapshotGraph {
                week: s.week,
                edges: SnapshotEdges::Homogeneous(
                    sums.into_iter().map(|((src, dst), value)| AggEdge { src, dst, value }).collect(),
                ),
            }
        })
        .collect();
    Ok(TemporalGraph {
        mode: GraphMode::Homogeneous,
        snapshots,
        ..g.clone()
    })
}

impl TemporalGraph {
    pub fn num_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.registry.len()
    }

    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(SnapshotGraph::num_edges).sum()
    }

    /// Structural checks: consecutive weeks, edge endpoints in range, form matches mode.
    pub fn validate(&self) -> Result<()> {
        let n = self.registry.len();
        for (i, s) in self.snapshots.iter().enumerate() {
            if s.week != i {
                return Err(Error::Format(format!("snapshot {i} carries week index {}", s.week)));
            }
            let form_ok = matches!(
                (&s.edges, self.mode),
                (SnapshotEdges::Heterogeneous(_), GraphMode::Heterogeneous) | (SnapshotEdges::Homogeneous(_), GraphMode::Homogeneous)
            );
            if !form_ok {
                return Err(Error::Format(format!("snapshot {i} edge form does not match graph mode")));
            }
            if s.triples().iter().any(|&(a, b, _)| a >= n || b >= n) {
                return Err(Error::Format(format!("snapshot {i} has an endpoint outside the registry")));
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u32,
        }
        let v: serde_json::Value = serde_json::from_reader(r)?;
        let probe: Probe = serde_json::from_value(v.clone())?;
        if probe.format_version != GRAPH_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "graph artifact version {}, expected {GRAPH_FORMAT_VERSION}",
                probe.format_version
            )));
        }
        let g: TemporalGraph = serde_json::from_value(v)?;
        g.validate()?;
        Ok(g)
    }
}
