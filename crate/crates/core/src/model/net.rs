use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{
    attention_forward, ffn_forward, layer_norm, pre_norm_residual, sinusoidal_positions, AttentionParams,
    FFNParams, Graph, LayerNormParams, Linear, ParamBuilder,
};
use crate::numerics::{AttnMask, ParamId, ParamStore, Tensor, Var};
use crate::rng::rng_for;
use crate::seqio::{self, Language, TargetSequence, EOS, PAD, PREFIX_LEN};
use crate::signal::FbankFeatures;
use crate::smoe::{clone_expert_bank, gate_decoder, gate_encoder, smoe_forward, SMoELayer, Task};

/// Fixed scaling of log-Mel inputs before the input projection.
pub const FEATURE_SCALE: f64 = 0.1;

/// A feedforward sub-layer: one shared FFN or a gated expert bank.
#[derive(Debug, Clone)]
pub enum FeedForward {
    Shared(FFNParams),
    Experts(SMoELayer),
}

impl FeedForward {
    fn build(pb: &mut ParamBuilder, name: &str, d: usize, ff: usize, c: &ModelConfig, experts: bool) -> Result<Self> {
        let mut s = pb.scope(name);
        if experts {
            let bank = (0..c.n_experts)
                .map(|k| {
                    let mut e = s.scope(&format!("expert.{k}"));
                    FFNParams::new(&mut e, d, ff, c.glu, c.activation)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FeedForward::Experts(SMoELayer::new(bank)?))
        } else {
            Ok(FeedForward::Shared(FFNParams::new(&mut s, d, ff, c.glu, c.activation)?))
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, gate: impl FnOnce() -> crate::smoe::GateVector) -> Result<Var> {
        match self {
            FeedForward::Shared(p) => ffn_forward(g, p, x),
            FeedForward::Experts(layer) => smoe_forward(g, layer, &gate(), x),
        }
    }

    pub fn experts(&self) -> Option<&SMoELayer> {
        match self {
            FeedForward::Experts(l) => Some(l),
            FeedForward::Shared(_) => None,
        }
    }

    fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        match self {
            FeedForward::Shared(p) => p.visit_ids(f),
            FeedForward::Experts(l) => l.visit_ids(f),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln_attn: LayerNormParams,
    pub attn: AttentionParams,
    pub ln_ff: LayerNormParams,
    pub ff: FeedForward,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln_self: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln_cross: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln_ff: LayerNormParams,
    pub ff: FeedForward,
}

/// Greedy decoding result; `ids` excludes the guiding prefix and EOS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub ids: Vec<u32>,
    /// True when `max_len` was reached before EOS.
    pub truncated: bool,
}

/// Pre-norm encoder–decoder with optional S-MoE feedforward banks.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    input: Linear,
    embed: ParamId,
    out_proj: Option<ParamId>,
    enc: Vec<EncoderLayer>,
    dec: Vec<DecoderLayer>,
    enc_norm: LayerNormParams,
    dec_norm: LayerNormParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.d_model;
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, "init");
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let input = Linear::new(&mut pb, "input", c.n_mels, d)?;
        let embed = pb.normal("embed", &[c.vocab_size, d], (d as f64).powf(-0.5))?;
        let out_proj = if c.tie_embeddings {
            None
        } else {
            Some(pb.normal("out_proj", &[d, c.vocab_size], (d as f64).powf(-0.5))?)
        };
        let mut enc = Vec::with_capacity(c.n_enc_layers);
        for i in 0..c.n_enc_layers {
            let mut s = pb.scope(&format!("enc.{i}"));
            enc.push(EncoderLayer {
                ln_attn: LayerNormParams::new(&mut s, "ln_attn", d)?,
                attn: AttentionParams::new(&mut s.scope("attn"), d, c.n_heads)?,
                ln_ff: LayerNormParams::new(&mut s, "ln_ff", d)?,
                ff: FeedForward::build(&mut s, "ffn", d, c.d_ff, c, c.enc_smoe)?,
            });
        }
        let mut dec = Vec::with_capacity(c.n_dec_layers);
        for i in 0..c.n_dec_layers {
            let mut s = pb.scope(&format!("dec.{i}"));
            dec.push(DecoderLayer {
                ln_self: LayerNormParams::new(&mut s, "ln_self", d)?,
                self_attn: AttentionParams::new(&mut s.scope("self_attn"), d, c.n_heads)?,
                ln_cross: LayerNormParams::new(&mut s, "ln_cross", d)?,
                cross_attn: AttentionParams::new(&mut s.scope("cross_attn"), d, c.n_heads)?,
                ln_ff: LayerNormParams::new(&mut s, "ln_ff", d)?,
                ff: FeedForward::build(&mut s, "ffn", d, c.dec_ff(), c, c.dec_smoe)?,
            });
        }
        let enc_norm = LayerNormParams::new(&mut pb, "enc_norm", d)?;
        let dec_norm = LayerNormParams::new(&mut pb, "dec_norm", d)?;
        Ok(Model {
            config,
            params,
            input,
            embed,
            out_proj,
            enc,
            dec,
            enc_norm,
            dec_norm,
        })
    }

    pub fn encoder_layers(&self) -> &[EncoderLayer] {
        &self.enc
    }

    pub fn decoder_layers(&self) -> &[DecoderLayer] {
        &self.dec
    }

    /// Per-layer expert call counts; empty rows for shared layers.
    pub fn encoder_call_counts(&self) -> Vec<Vec<u64>> {
        self.enc
            .iter()
            .map(|l| l.ff.experts().map(SMoELayer::call_counts).unwrap_or_default())
            .collect()
    }

    pub fn decoder_call_counts(&self) -> Vec<Vec<u64>> {
        self.dec
            .iter()
            .map(|l| l.ff.experts().map(SMoELayer::call_counts).unwrap_or_default())
            .collect()
    }

    pub fn reset_call_counts(&self) {
        let layers = self.enc.iter().map(|l| &l.ff).chain(self.dec.iter().map(|l| &l.ff));
        layers.filter_map(FeedForward::experts).for_each(SMoELayer::reset_counts);
    }

    /// Parameter ids of decoder expert `k` across all decoder S-MoE layers.
    pub fn decoder_expert_ids(&self, k: usize) -> Vec<ParamId> {
        self.dec
            .iter()
            .filter_map(|l| l.ff.experts())
            .flat_map(|e| e.experts()[k].ids())
            .collect()
    }

    /// Parameter ids of encoder expert `k` across all encoder S-MoE layers.
    pub fn encoder_expert_ids(&self, k: usize) -> Vec<ParamId> {
        self.enc
            .iter()
            .filter_map(|l| l.ff.experts())
            .flat_map(|e| e.experts()[k].ids())
            .collect()
    }

    fn check_features(&self, feats: &FbankFeatures) -> Result<()> {
        let (t, m) = feats.frames.dims2()?;
        if m != self.config.n_mels {
            return Err(Error::shape("encoder input", &[t, m], &[t, self.config.n_mels]));
        }
        if t > self.config.max_src_frames {
            return Err(Error::Limit(format!(
                "{t} source frames exceed max_src_frames {}",
                self.config.max_src_frames
            )));
        }
        Ok(())
    }

    /// Encoder output `[t_src × d_model]`, routed by bandwidth.
    pub fn encode(&self, g: &mut Graph, feats: &FbankFeatures) -> Result<Var> {
        self.check_features(feats)?;
        let bw = feats.bandwidth;
        let t = feats.n_frames();
        let mut scaled = feats.frames.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= FEATURE_SCALE);
        let x = g.tape.constant(&scaled);
        let x = self.input.forward(g, x)?;
        let pos = sinusoidal_positions(t, self.config.d_model)?;
        let x = g.tape.add_const(x, &pos)?;
        let mut x = g.dropout(x)?;
        for layer in &self.enc {
            x = pre_norm_residual(g, &layer.ln_attn, x, |g, n| {
                Ok(attention_forward(g, &layer.attn, n, n, n, &AttnMask::Full)?.0)
            })?;
            x = pre_norm_residual(g, &layer.ln_ff, x, |g, n| layer.ff.forward(g, n, || gate_encoder(bw)))?;
        }
        layer_norm(g, &self.enc_norm, x)
    }

    /// Decoder logits `[ids.len() × vocab]` given encoder memory, routed by
    /// the task tag in `ids[0]`.
    pub fn decode_logits(&self, g: &mut Graph, memory: Var, ids: &[u32]) -> Result<Var> {
        let task = seqio::task_of(ids)?;
        if ids.len() > self.config.max_tgt_tokens {
            return Err(Error::Limit(format!(
                "{} target tokens exceed max_tgt_tokens {}",
                ids.len(),
                self.config.max_tgt_tokens
            )));
        }
        let d = self.config.d_model;
        let table = g.param(self.embed);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = g.tape.gather(table, &idx)?;
        let x = g.tape.scale(x, (d as f64).sqrt());
        let pos = sinusoidal_positions(ids.len(), d)?;
        let x = g.tape.add_const(x, &pos)?;
        let mut x = g.dropout(x)?;
        for layer in &self.dec {
            x = pre_norm_residual(g, &layer.ln_self, x, |g, n| {
                Ok(attention_forward(g, &layer.self_attn, n, n, n, &AttnMask::Causal)?.0)
            })?;
            x = pre_norm_residual(g, &layer.ln_cross, x, |g, n| {
                Ok(attention_forward(g, &layer.cross_attn, n, memory, memory, &AttnMask::Full)?.0)
            })?;
            x = pre_norm_residual(g, &layer.ln_ff, x, |g, n| layer.ff.forward(g, n, || gate_decoder(task)))?;
        }
        let h = layer_norm(g, &self.dec_norm, x)?;
        match self.out_proj {
            None => g.tape.matmul_t(h, table),
            Some(w) => {
                let w = g.param(w);
                g.tape.matmul(h, w)
            }
        }
    }

    /// Teacher-forced logits `[t_tgt × vocab]`; row `r` predicts `ids[r + 1]`.
    pub fn forward(&self, g: &mut Graph, feats: &FbankFeatures, target: &TargetSequence) -> Result<Var> {
        let memory = self.encode(g, feats)?;
        self.decode_logits(g, memory, target.ids())
    }

    /// Mean cross-entropy over payload and EOS predictions, and the number
    /// of predicted tokens.
    pub fn loss(&self, g: &mut Graph, feats: &FbankFeatures, target: &TargetSequence) -> Result<(Var, usize)> {
        let logits = self.forward(g, feats, target)?;
        let targets = shifted_targets(target.ids());
        let n = targets.iter().filter(|&&t| t != PAD).count();
        Ok((g.tape.cross_entropy(logits, &targets, PAD)?, n))
    }

    /// Eval-mode logits as a tensor.
    pub fn logits(&self, feats: &FbankFeatures, target: &TargetSequence) -> Result<Tensor> {
        let mut g = Graph::eval(&self.params);
        let y = self.forward(&mut g, feats, target)?;
        Ok(g.tape.to_tensor(y))
    }

    /// Eval-mode encoder output as a tensor.
    pub fn encoder_output(&self, feats: &FbankFeatures) -> Result<Tensor> {
        let mut g = Graph::eval(&self.params);
        let y = self.encode(&mut g, feats)?;
        Ok(g.tape.to_tensor(y))
    }

    fn next_token(&self, memory: &Tensor, prefix: &[u32]) -> Result<u32> {
        let mut g = Graph::eval(&self.params);
        let m = g.tape.constant(memory);
        let logits = self.decode_logits(&mut g, m, prefix)?;
        let t = g.tape.to_tensor(logits);
        Ok(t.argmax_row(prefix.len() - 1) as u32)
    }

    /// Greedy decoding of rows that share one encoder pass. Every row is
    /// stepped until all rows have emitted EOS, as a padded batch would be.
    pub fn greedy_batch(&self, feats: &FbankFeatures, prefixes: &[Vec<u32>], max_len: usize) -> Result<Vec<Decoded>> {
        let memory = self.encoder_output(feats)?;
        let mut rows: Vec<Vec<u32>> = prefixes.to_vec();
        let mut done = vec![false; rows.len()];
        let mut out: Vec<Decoded> = rows
            .iter()
            .map(|_| Decoded {
                ids: Vec::new(),
                truncated: true,
            })
            .collect();
        let limit = max_len.min(self.config.max_tgt_tokens.saturating_sub(PREFIX_LEN));
        for _ in 0..limit {
            if done.iter().all(|d| *d) {
                break;
            }
            for (r, row) in rows.iter_mut().enumerate() {
                let next = self.next_token(&memory, row)?;
                row.push(next);
                if done[r] {
                    continue;
                }
                if next == EOS {
                    done[r] = true;
                    out[r].truncated = false;
                } else {
                    out[r].ids.push(next);
                }
            }
        }
        Ok(out)
    }

    pub fn infer_single(&self, feats: &FbankFeatures, task: Task, lang: Language, max_len: usize) -> Result<Decoded> {
        let prefix = seqio::prefix(task, lang).to_vec();
        Ok(self.greedy_batch(feats, &[prefix], max_len)?.remove(0))
    }

    /// ASR and ST in one two-row batch; returns `(asr, st)`.
    pub fn infer_dual(
        &self,
        feats: &FbankFeatures,
        asr_lang: Language,
        st_lang: Language,
        max_len: usize,
    ) -> Result<(Decoded, Decoded)> {
        let prefixes = [seqio::prefix(Task::Asr, asr_lang).to_vec(), seqio::prefix(Task::St, st_lang).to_vec()];
        let mut out = self.greedy_batch(feats, &prefixes, max_len)?;
        let st = out.pop().expect("two rows");
        let asr = out.pop().expect("two rows");
        Ok((asr, st))
    }

    /// Replaces shared FFNs with expert banks cloned from them, so the
    /// expanded model computes exactly what the donor did under any gate.
    pub fn expand_experts(&mut self, encoder: bool, decoder: bool) -> Result<()> {
        let n = self.config.n_experts;
        let mut dropped = Vec::new();
        let enc = self.enc.iter_mut().enumerate().map(|(i, l)| (format!("enc.{i}.ffn"), &mut l.ff, encoder));
        let dec = self.dec.iter_mut().enumerate().map(|(i, l)| (format!("dec.{i}.ffn"), &mut l.ff, decoder));
        for (prefix, ff, on) in enc.chain(dec) {
            if !on {
                continue;
            }
            if let FeedForward::Shared(shared) = ff {
                let bank = clone_expert_bank(&mut self.params, shared, n, &prefix)?;
                dropped.extend(shared.ids());
                *ff = FeedForward::Experts(bank);
            }
        }
        self.config.enc_smoe |= encoder;
        self.config.dec_smoe |= decoder;
        let live: Vec<ParamId> = self.params.ids().filter(|id| !dropped.contains(id)).collect();
        let map = self.params.retain(&live);
        self.visit_ids(&mut |id| *id = map[id.index()].expect("live parameter"));
        Ok(())
    }

    /// Builds a model with `target`'s expert layout from a donor whose
    /// trunk dimensions match.
    pub fn from_donor(donor: &Model, target: &ModelConfig) -> Result<Model> {
        target.validate()?;
        if !donor.config.same_trunk(target) {
            return Err(Error::Config("donor and target configs differ beyond expert layout".into()));
        }
        if (donor.config.enc_smoe && !target.enc_smoe) || (donor.config.dec_smoe && !target.dec_smoe) {
            return Err(Error::Config("cannot collapse an expert bank back into a shared FFN".into()));
        }
        if (donor.config.enc_smoe || donor.config.dec_smoe) && donor.config.n_experts != target.n_experts {
            return Err(Error::Config("donor expert count differs from target".into()));
        }
        let mut m = donor.clone();
        m.config.n_experts = target.n_experts;
        m.expand_experts(target.enc_smoe, target.dec_smoe)?;
        m.config = target.clone();
        m.reset_call_counts();
        Ok(m)
    }

    fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        self.input.visit_ids(f);
        f(&mut self.embed);
        if let Some(w) = &mut self.out_proj {
            f(w);
        }
        for l in &mut self.enc {
            l.ln_attn.visit_ids(f);
            l.attn.visit_ids(f);
            l.ln_ff.visit_ids(f);
            l.ff.visit_ids(f);
        }
        for l in &mut self.dec {
            l.ln_self.visit_ids(f);
            l.self_attn.visit_ids(f);
            l.ln_cross.visit_ids(f);
            l.cross_attn.visit_ids(f);
            l.ln_ff.visit_ids(f);
            l.ff.visit_ids(f);
        }
        self.enc_norm.visit_ids(f);
        self.dec_norm.visit_ids(f);
    }
}

/// Next-token targets: row `r` predicts `ids[r + 1]`; the task and
/// language tags and BOS are never predicted, nor anything after the end.
pub fn shifted_targets(ids: &[u32]) -> Vec<u32> {
    (0..ids.len())
        .map(|r| {
            let next = r + 1;
            if next < PREFIX_LEN || next >= ids.len() {
                PAD
            } else {
                ids[next]
            }
        })
        .collect()
}
