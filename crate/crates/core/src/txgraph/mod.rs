//! Transaction ingest and weekly snapshot construction.

mod attributes;
mod snapshot;
mod transactions;

pub use attributes::{attach_attributes, standardize, AttributedNodes, FieldKind, FieldSpec, NodeAttributes, MISSING};
pub use snapshot::{
    aggregate_homogeneous, build_snapshots, default_week_origin, week_index, AggEdge, GraphMode, MultiEdge, NodeRegistry,
    SnapshotEdges, SnapshotGraph, TemporalGraph, GRAPH_FORMAT_VERSION,
};
pub use transactions::{ingest_transactions, AccountId, IngestReport, Rejection, Transaction, TransactionTable, TRANSACTION_HEADER};
