//! Classification metrics, curves, auto-open/auto-close analysis and the
//! binomial significance of a ranked list.

mod binomial;
mod metrics;
mod ranking;

pub use binomial::binomial_tail;
pub use metrics::{
    aupr, confusion_at_threshold, f1_fraud, f1_fraud_max, macro_f1, pr_curve, roc_auc, roc_curve, write_curve_csv,
    ConfusionMatrix, MetricsReport,
};
pub use ranking::{auto_close_report, quantile, random_list_hits, rank_auto_open, AutoCloseReport, RankedList};
