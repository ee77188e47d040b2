use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{parse_kv, parse_value};
use crate::train::optim::OptimizerKind;

/// Batches per task in one interleaving cycle. `(1, 1)` is strict
/// alternation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterleavePattern {
    pub asr: usize,
    pub st: usize,
}

impl InterleavePattern {
    pub const STRICT: InterleavePattern = InterleavePattern { asr: 1, st: 1 };

    fn parse(s: &str) -> Result<Self> {
        if s == "strict" {
            return Ok(Self::STRICT);
        }
        let bad = || Error::Config(format!("interleave must be `strict` or `A:S` counts, got `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let p = InterleavePattern {
            asr: a.trim().parse().map_err(|_| bad())?,
            st: b.trim().parse().map_err(|_| bad())?,
        };
        if p.asr == 0 || p.st == 0 {
            return Err(bad());
        }
        Ok(p)
    }

    fn as_text(&self) -> String {
        if *self == Self::STRICT {
            "strict".into()
        } else {
            format!("{}:{}", self.asr, self.st)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Optimizer updates.
    pub steps: usize,
    pub batch_size: usize,
    /// Batches accumulated per update.
    pub grad_accum: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    pub interleave: InterleavePattern,
    /// Share of items that also get a narrowband twin.
    pub nbwb_mix_fraction: f64,
    /// Emit a log line every this many updates.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            batch_size: 8,
            grad_accum: 1,
            lr: 3e-3,
            lr_floor: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            clip_norm: 1.0,
            interleave: InterleavePattern::STRICT,
            nbwb_mix_fraction: 0.15,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        &[
            "steps",
            "batch_size",
            "grad_accum",
            "lr",
            "lr_floor",
            "seed",
            "optimizer",
            "momentum",
            "clip_norm",
            "interleave",
            "nbwb_mix_fraction",
            "log_every",
        ]
    }

    /// Applies one key. Returns `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "steps" => self.steps = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "grad_accum" => self.grad_accum = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "lr_floor" => self.lr_floor = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "interleave" => self.interleave = InterleavePattern::parse(value)?,
            "nbwb_mix_fraction" => self.nbwb_mix_fraction = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.grad_accum == 0 || self.log_every == 0 {
            return bad("batch_size, grad_accum and log_every must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr_floor.is_finite()) || self.lr < 0.0 || self.lr_floor < 0.0 {
            return bad("learning rates must be finite and non-negative".into());
        }
        if self.lr < self.lr_floor {
            return bad(format!("lr {} is below lr_floor {}", self.lr, self.lr_floor));
        }
        if !(0.0..=1.0).contains(&self.nbwb_mix_fraction) {
            return bad(format!("nbwb_mix_fraction must be in [0, 1], got {}", self.nbwb_mix_fraction));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines; unknown keys are rejected.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, k, v) in parse_kv(text)? {
            if !cfg.set(&k, &v)? {
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
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("grad_accum", self.grad_accum.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_floor", self.lr_floor.to_string());
        kv("seed", self.seed.to_string());
        kv("optimizer", self.optimizer.as_str().into());
        kv("momentum", self.momentum.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("interleave", self.interleave.as_text());
        kv("nbwb_mix_fraction", self.nbwb_mix_fraction.to_string());
        kv("log_every", self.log_every.to_string());
        s
    }
}
