//! Task-homogeneous interleaved training, the cosine learning-rate
//! schedule, the synthetic interference benchmark and narrowband
//! fine-tuning.
//!
//! Training emits one metrics-log line per batch:
//!
//! ```text
//! step=<n> task=<A|S> lr=<f> loss=<f>
//! ```

mod batch;
mod bench;
mod config;
mod data;
mod optim;
mod step;

pub use batch::{
    make_interleaved_stream, make_patterned_stream, make_task_stream, Batch, BatchStream, Example, StreamKind,
};
pub use bench::{
    evaluate, finetune_nbwb, run_interference_benchmark, run_nbwb_experiment, BenchRow, BenchmarkConfig,
    BenchmarkReport, NbwbConfig, NbwbReport, NbwbRow, TaskAccuracy, BASE, CONTROL_ASR, CONTROL_ST, CONTROL_TARGET,
    DEC_FFN_X2, DEC_SMOE,
};
pub use config::{InterleavePattern, TrainConfig};
pub use data::{
    derangement, examples_at, examples_for, generate_items, mixed_examples, nb_twin_indices, SyntheticItem,
    SyntheticTaskSpec,
};
pub use optim::{clip_grad_norm, cosine_lr, Optimizer, OptimizerKind};
pub use step::{accumulate_gradients, format_log, train, train_step, LogEntry};
