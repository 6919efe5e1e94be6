//! Batch composition and the seeded training loop.
//!
//! Each batch keeps `round(β·n)` images ordered; the rest are tiled,
//! shuffled by a random non-identity permutation and passed through the
//! diversifier. Every random draw is keyed by `(seed, epoch, item)`, so a
//! run is a pure function of its config and resumes bit-exactly from the
//! per-epoch checkpoint.

mod batch;
mod checkpoint;
mod config;
mod metrics;
mod run;

pub use batch::{compose_batch, BatchKey, ComposedBatch};
pub use checkpoint::Checkpoint;
pub use config::{ordered_count, DiversitySchedule, TrainConfig};
pub use metrics::{metrics_csv, parse_metrics_csv, MetricsRow, METRICS_HEADER};
pub use run::{
    train, StepView, TrainData, TrainOutcome, Trainer, CHECKPOINT_FILE, CONFIG_FILE, METRICS_FILE, TIMING_FILE,
};
