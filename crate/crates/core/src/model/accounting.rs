use crate::model::ModelConfig;
use crate::nn::{AttentionParams, FFNParams, LayerNormParams, Linear};

/// Stored parameters vs. parameters touched by one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub trainable: usize,
    pub active: usize,
    /// `(module, trainable)` rows summing to `trainable`.
    pub breakdown: Vec<(String, usize)>,
}

impl ParamCount {
    /// Parameters held by experts that a one-hot gate leaves idle.
    pub fn idle(&self) -> usize {
        self.trainable - self.active
    }
}

/// Closed-form counts from the config dimensions.
pub fn count_params(c: &ModelConfig) -> ParamCount {
    let d = c.d_model;
    let enc_ffn = FFNParams::param_count(d, c.d_ff, c.glu);
    let dec_ffn = FFNParams::param_count(d, c.dec_ff(), c.glu);
    let attn = AttentionParams::param_count(d);
    let ln = LayerNormParams::param_count(d);
    let enc_copies = if c.enc_smoe { c.n_experts } else { 1 };
    let dec_copies = if c.dec_smoe { c.n_experts } else { 1 };

    let mut breakdown = vec![
        ("input_projection".to_owned(), Linear::param_count(c.n_mels, d)),
        ("embedding".to_owned(), c.vocab_size * d),
    ];
    if !c.tie_embeddings {
        breakdown.push(("output_projection".to_owned(), d * c.vocab_size));
    }
    breakdown.extend([
        ("encoder.attention".to_owned(), c.n_enc_layers * (attn + 2 * ln)),
        ("encoder.ffn".to_owned(), c.n_enc_layers * enc_copies * enc_ffn),
        ("decoder.attention".to_owned(), c.n_dec_layers * (2 * attn + 3 * ln)),
        ("decoder.ffn".to_owned(), c.n_dec_layers * dec_copies * dec_ffn),
        ("final_norms".to_owned(), 2 * ln),
    ]);
    let trainable = breakdown.iter().map(|(_, n)| n).sum::<usize>();
    let idle = c.n_enc_layers * (enc_copies - 1) * enc_ffn + c.n_dec_layers * (dec_copies - 1) * dec_ffn;
    ParamCount {
        trainable,
        active: trainable - idle,
        breakdown,
    }
}

/// Human-readable count with an M suffix.
pub fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}
