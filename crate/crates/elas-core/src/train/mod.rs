//! Training subsystem: configuration, byte corpus, checkpointing, the
//! train/eval loop, and ablation sweeps.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod trainer;

pub use ablate::{run_sparsifier_ablation, run_warmup_ablation, AblationRow};
pub use checkpoint::{Checkpoint, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use corpus::Corpus;
pub use trainer::{
    evaluate_checkpoint, load_state, resume_training, run_training, save_state, MetricsRow,
    TrainOutcome, TrainState, TrainStatus, METRICS_HEADER,
};
