//! Per-snapshot node embeddings: a TransE baseline over typed transfers and a
//! two-branch GraphSAGE model (link prediction plus edge-value regression),
//! concatenated across weeks into one feature row per account.

mod assemble;
mod sage;
mod split;
mod transe;

pub use assemble::{assemble_features, EmbeddingMatrix, EmbeddingMode, TrainedModels, EMBEDDING_FORMAT_VERSION};
pub use sage::{
    init_head, init_sage, link_loss, neighborhoods, node_features, regression_loss, sage_forward, train_edge_regression,
    train_proposed, train_sage_unsupervised, value_targets, ProposedConfig, RegressionConfig, RegressionOutcome,
    SageConfig, SageModel, SageSnapshot, UnsupervisedOutcome,
};
pub use split::{split_edges, EdgeSplit, SplitFractions};
pub use transe::{
    margin_loss_and_grad, train_transe, transe_initial_entities, transe_score, NegativePair, TransEConfig, TransEModel,
    TransESnapshot, Triple,
};
