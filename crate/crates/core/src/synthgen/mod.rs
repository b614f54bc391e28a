//! Synthetic transaction data with planted laundering motifs, a static rule
//! engine, and a simulated analyst review funnel.

mod config;
mod generator;
mod labels;
mod rules;

pub use config::{GeneratorConfig, LogNormal, PatternKind, PatternSpec};
pub use generator::{attribute_schema, generate, GroundTruth, SyntheticDataset, TruthRecord, ACCOUNT_BASE};
pub use labels::{derive_case_labels, read_labels_csv, write_labels_csv, Forwarded, LabelRecord, ReviewPolicy};
pub use rules::{account_aggregates, apply_rules, AccountAggregates, Rule, RuleMetric, RuleSet};
