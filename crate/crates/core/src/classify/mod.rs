//! Supervised datasets for the three case-triage tasks, SMOTE rebalancing and
//! a gradient-boosted tree classifier.

mod gbdt;
mod labels;
mod pipeline;
mod smote;
mod split;

pub use gbdt::{predict_proba, train_gbdt, Classifier, GbdtConfig, GbdtModel, Tree, TreeNode, GBDT_FORMAT_VERSION};
pub use labels::{assign_labels, label_for, Task};
pub use pipeline::{
    read_scores_csv, run_pipeline, write_scores_csv, Architecture, PipelineConfig, PipelineOutput, ScoredAccount,
    TaskResult,
};
pub use smote::{smote_oversample, synthetic_rows_needed, RowOrigin, SmoteConfig, SmoteOutput};
pub use split::{stratified_split, stratified_split_by, Fold, SplitAssignment};
