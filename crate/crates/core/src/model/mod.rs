//! The S-MoE encoder–decoder: configuration, parameter accounting, the
//! network, and checkpoints.

mod accounting;
pub mod checkpoint;
mod config;
mod net;

pub use accounting::{count_params, millions, ParamCount};
pub use checkpoint::Checkpoint;
pub use config::{parse_kv, parse_override, ModelConfig};
pub(crate) use config::parse_value;
pub use net::{shifted_targets, Decoded, DecoderLayer, EncoderLayer, FeedForward, Model, FEATURE_SCALE};
