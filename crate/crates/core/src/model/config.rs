use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::seqio::MERGE_BASE;
use crate::smoe::DEFAULT_EXPERTS;

/// Splits `key = value` lines, dropping blank lines and `#` comments.
/// Returns `(line number, key, value)` triples in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        out.push((i + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_owned(), v.trim().to_owned()))
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Decoder FFN width; `None` means `d_ff`.
    pub dec_d_ff: Option<usize>,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub n_mels: usize,
    pub dropout: f64,
    pub glu: bool,
    pub activation: Activation,
    pub tie_embeddings: bool,
    pub enc_smoe: bool,
    pub dec_smoe: bool,
    pub n_experts: usize,
    pub max_src_frames: usize,
    pub max_tgt_tokens: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            n_enc_layers: 2,
            n_dec_layers: 2,
            d_model: 64,
            d_ff: 128,
            dec_d_ff: None,
            n_heads: 4,
            vocab_size: MERGE_BASE as usize + 32,
            n_mels: 80,
            dropout: 0.15,
            glu: true,
            activation: Activation::Silu,
            tie_embeddings: true,
            enc_smoe: false,
            dec_smoe: false,
            n_experts: DEFAULT_EXPERTS,
            max_src_frames: 3000,
            max_tgt_tokens: 120,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            n_enc_layers: 12,
            n_dec_layers: 6,
            d_model: 512,
            d_ff: 2048,
            n_heads: 8,
            vocab_size: 40_000,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }

    pub fn dec_ff(&self) -> usize {
        self.dec_d_ff.unwrap_or(self.d_ff)
    }

    pub fn keys() -> &'static [&'static str] {
        &[
            "n_enc_layers",
            "n_dec_layers",
            "d_model",
            "d_ff",
            "dec_d_ff",
            "n_heads",
            "vocab_size",
            "n_mels",
            "dropout",
            "glu",
            "activation",
            "tie_embeddings",
            "enc_smoe",
            "dec_smoe",
            "n_experts",
            "max_src_frames",
            "max_tgt_tokens",
        ]
    }

    /// Applies one key. Returns `Ok(false)` if the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "preset" => *self = Self::preset(value)?,
            "n_enc_layers" => self.n_enc_layers = parse_value(key, value)?,
            "n_dec_layers" => self.n_dec_layers = parse_value(key, value)?,
            "d_model" => self.d_model = parse_value(key, value)?,
            "d_ff" => self.d_ff = parse_value(key, value)?,
            "dec_d_ff" => {
                self.dec_d_ff = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "n_heads" => self.n_heads = parse_value(key, value)?,
            "vocab_size" => self.vocab_size = parse_value(key, value)?,
            "n_mels" => self.n_mels = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "glu" => self.glu = parse_value(key, value)?,
            "activation" => self.activation = value.parse()?,
            "tie_embeddings" => self.tie_embeddings = parse_value(key, value)?,
            "enc_smoe" => self.enc_smoe = parse_value(key, value)?,
            "dec_smoe" => self.dec_smoe = parse_value(key, value)?,
            "n_experts" => self.n_experts = parse_value(key, value)?,
            "max_src_frames" => self.max_src_frames = parse_value(key, value)?,
            "max_tgt_tokens" => self.max_tgt_tokens = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_enc_layers == 0 || self.n_dec_layers == 0 {
            return bad("layer counts must be positive".into());
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff == 0 || self.dec_ff() == 0 || self.n_mels == 0 {
            return bad("d_ff, dec_d_ff and n_mels must be positive".into());
        }
        if self.vocab_size < MERGE_BASE as usize {
            return bad(format!(
                "vocab_size {} is below the byte vocabulary ({MERGE_BASE})",
                self.vocab_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.n_experts == 0 {
            return bad("n_experts must be at least 1".into());
        }
        if self.max_src_frames == 0 || self.max_tgt_tokens < 4 {
            return bad("length limits too small".into());
        }
        Ok(())
    }

    /// Parses a config file. A `preset` key, wherever it appears, is applied
    /// first; all other keys follow in file order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::toy();
        let entries = parse_kv(text)?;
        if let Some((_, _, v)) = entries.iter().find(|(_, k, _)| k == "preset") {
            cfg = Self::preset(v)?;
        }
        for (line, k, v) in entries.iter().filter(|(_, k, _)| k != "preset") {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_enc_layers", self.n_enc_layers.to_string());
        kv("n_dec_layers", self.n_dec_layers.to_string());
        kv("d_model", self.d_model.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("dec_d_ff", self.dec_d_ff.map_or("auto".into(), |v| v.to_string()));
        kv("n_heads", self.n_heads.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("n_mels", self.n_mels.to_string());
        kv("dropout", self.dropout.to_string());
        kv("glu", self.glu.to_string());
        kv("activation", self.activation.as_str().into());
        kv("tie_embeddings", self.tie_embeddings.to_string());
        kv("enc_smoe", self.enc_smoe.to_string());
        kv("dec_smoe", self.dec_smoe.to_string());
        kv("n_experts", self.n_experts.to_string());
        kv("max_src_frames", self.max_src_frames.to_string());
        kv("max_tgt_tokens", self.max_tgt_tokens.to_string());
        s
    }

    /// True when `other` differs from `self` only in which FFNs are expert banks.
    pub fn same_trunk(&self, other: &ModelConfig) -> bool {
        let strip = |c: &ModelConfig| ModelConfig {
            enc_smoe: false,
            dec_smoe: false,
            n_experts: DEFAULT_EXPERTS,
            dropout: 0.0,
            max_src_frames: 0,
            max_tgt_tokens: 0,
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}
