//! Dense retrieval and rank-based evaluation.

mod dense;
mod metrics;
mod ranked;
mod report;
mod trec;

pub use dense::DenseIndex;
pub use metrics::{average_precision, r_precision, recall_at_k, RankMetric};
pub use ranked::{RankedEntry, RankedList};
pub use report::{compare_systems, evaluate_run, Comparison, MetricReport, QueryMetrics};
pub use trec::{read_qrels, read_run, write_qrels, write_run, Qrels};

/// Default run depth: the largest recall cutoff reported.
pub const DEFAULT_RUN_DEPTH: usize = 500;

pub const DEFAULT_CUTOFFS: [usize; 3] = [100, 200, 500];
