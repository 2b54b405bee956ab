//! Contrastive objectives, negative mining and the two training loops.

mod batches;
mod config;
mod dsr;
mod experiment;
mod lge;
mod loss;

pub use batches::{build_batches, make_instances, mine_bm25_negatives, TrainingInstance};
pub use config::{LossConfig, LossKind, RunConfig, TrainRunConfig};
pub use experiment::{bm25_index, gnn_config_for, random_runs, run_experiment, ExperimentOutcome};
pub use dsr::{evaluate_dense, metric_value, qrels_of, train_dsr, TrainReport};
pub use lge::{evaluate_enriched, lge_batch_loss, query_vectors, train_lge, GraphInputs, QueryVectors};
pub use loss::{contrastive_nll, triplet_loss, LossWithGrad};
