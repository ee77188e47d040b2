//! Transformer building blocks: linear maps, the (optionally gated)
//! feedforward network, multi-head attention, layer norm, sinusoidal
//! positions, and dropout.

mod blocks;
mod graph;

pub use blocks::{
    attention_forward, ffn_forward, layer_norm, pre_norm_residual, sinusoidal_positions, Activation,
    AttentionParams, FFNParams, LayerNormParams, Linear, ParamBuilder,
};
pub use graph::{grad_check_graph, Dropout, Graph};
