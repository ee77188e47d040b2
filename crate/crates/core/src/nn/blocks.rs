use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Graph;
use crate::numerics::{AttnMask, ParamId, ParamStore, Tensor, Var};
use crate::rng::Rng;

/// Creates named parameters under a dotted prefix.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: String::new(),
        }
    }

    pub fn scope<'b>(&'b mut self, name: &str) -> ParamBuilder<'b> {
        let prefix = if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        };
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_owned()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| dist.sample(rng))?;
        let full = self.full_name(name);
        self.store.insert(full, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let t = Tensor::from_fn(shape, |_| value)?;
        let full = self.full_name(name);
        self.store.insert(full, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
    Identity,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Silu => g.tape.silu(x),
            Activation::Relu => g.tape.relu(x),
            Activation::Identity => x,
        }
    }
}

/// `y = x·W + b` with `W: [d_in × d_out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let w = s.normal("w", &[d_in, d_out], (d_in as f64).powf(-0.5))?;
        let b = s.constant("b", &[d_out], 0.0)?;
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub(crate) fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Position-wise feedforward network; one expert of an S-MoE bank.
#[derive(Debug, Clone)]
pub struct FFNParams {
    pub w_in: ParamId,
    pub b_in: ParamId,
    /// Gate projection and bias, present iff the GLU variant is on.
    pub gate: Option<(ParamId, ParamId)>,
    pub w_out: ParamId,
    pub b_out: ParamId,
    pub d_model: usize,
    pub d_ff: usize,
    pub act: Activation,
}

impl FFNParams {
    pub fn new(pb: &mut ParamBuilder, d_model: usize, d_ff: usize, glu: bool, act: Activation) -> Result<Self> {
        if d_model == 0 || d_ff == 0 {
            return Err(Error::Config(format!("ffn dims must be positive ({d_model}, {d_ff})")));
        }
        let std_in = (d_model as f64).powf(-0.5);
        let w_in = pb.normal("w_in", &[d_model, d_ff], std_in)?;
        let b_in = pb.constant("b_in", &[d_ff], 0.0)?;
        let gate = if glu {
            Some((
                pb.normal("w_gate", &[d_model, d_ff], std_in)?,
                pb.constant("b_gate", &[d_ff], 0.0)?,
            ))
        } else {
            None
        };
        let w_out = pb.normal("w_out", &[d_ff, d_model], (d_ff as f64).powf(-0.5))?;
        let b_out = pb.constant("b_out", &[d_model], 0.0)?;
        Ok(FFNParams {
            w_in,
            b_in,
            gate,
            w_out,
            b_out,
            d_model,
            d_ff,
            act,
        })
    }

    pub fn glu(&self) -> bool {
        self.gate.is_some()
    }

    /// `d_model·d_ff·(2|3) + d_ff·(1|2) + d_model`.
    pub fn param_count(d_model: usize, d_ff: usize, glu: bool) -> usize {
        let mats = if glu { 3 } else { 2 };
        let ff_biases = if glu { 2 } else { 1 };
        d_model * d_ff * mats + d_ff * ff_biases + d_model
    }

    /// Parameter ids in a fixed order: in, gate, out.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.w_in, self.b_in];
        if let Some((w, b)) = self.gate {
            v.extend([w, b]);
        }
        v.extend([self.w_out, self.b_out]);
        v
    }

    pub(crate) fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.w_in);
        f(&mut self.b_in);
        if let Some((w, b)) = &mut self.gate {
            f(w);
            f(b);
        }
        f(&mut self.w_out);
        f(&mut self.b_out);
    }
}

/// `act(x·W_in + b_in) ∘ (x·W_gate + b_gate) · W_out + b_out`, or without
/// the gate factor when GLU is off.
pub fn ffn_forward(g: &mut Graph, p: &FFNParams, x: Var) -> Result<Var> {
    let d = g.tape.shape(x).last().copied().unwrap_or(0);
    if d != p.d_model {
        return Err(Error::shape("ffn input", g.tape.shape(x), &[p.d_model]));
    }
    let w_in = g.param(p.w_in);
    let b_in = g.param(p.b_in);
    let h = g.tape.matmul(x, w_in)?;
    let h = g.tape.add_row(h, b_in)?;
    let mut h = p.act.apply(g, h);
    if let Some((wg, bg)) = p.gate {
        let wg = g.param(wg);
        let bg = g.param(bg);
        let gate = g.tape.matmul(x, wg)?;
        let gate = g.tape.add_row(gate, bg)?;
        h = g.tape.mul(h, gate)?;
    }
    let w_out = g.param(p.w_out);
    let b_out = g.param(p.b_out);
    let y = g.tape.matmul(h, w_out)?;
    g.tape.add_row(y, b_out)
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
}

impl AttentionParams {
    pub fn new(pb: &mut ParamBuilder, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        Ok(AttentionParams {
            q: Linear::new(pb, "q", d_model, d_model)?,
            k: Linear::new(pb, "k", d_model, d_model)?,
            v: Linear::new(pb, "v", d_model, d_model)?,
            o: Linear::new(pb, "o", d_model, d_model)?,
            n_heads,
        })
    }

    pub fn param_count(d_model: usize) -> usize {
        4 * Linear::param_count(d_model, d_model)
    }

    pub(crate) fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.o] {
            l.visit_ids(f);
        }
    }
}

/// Returns the attention output and the node that holds the per-head
/// probabilities (see [`crate::numerics::Tape::attention_probs`]).
pub fn attention_forward(
    g: &mut Graph,
    p: &AttentionParams,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    mask: &AttnMask,
) -> Result<(Var, Var)> {
    let q = p.q.forward(g, q_in)?;
    let k = p.k.forward(g, k_in)?;
    let v = p.v.forward(g, v_in)?;
    let ctx = g.tape.attention(q, k, v, p.n_heads, mask)?;
    Ok((p.o.forward(g, ctx)?, ctx))
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNormParams {
    pub const EPS: f64 = 1e-5;

    pub fn new(pb: &mut ParamBuilder, name: &str, d_model: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        Ok(LayerNormParams {
            gain: s.constant("gain", &[d_model], 1.0)?,
            bias: s.constant("bias", &[d_model], 0.0)?,
            eps: Self::EPS,
        })
    }

    pub fn param_count(d_model: usize) -> usize {
        2 * d_model
    }

    pub(crate) fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

pub fn layer_norm(g: &mut Graph, p: &LayerNormParams, x: Var) -> Result<Var> {
    let gain = g.param(p.gain);
    let bias = g.param(p.bias);
    g.tape.layer_norm(x, gain, bias, p.eps)
}

/// `x + dropout(block(layer_norm(x)))`.
pub fn pre_norm_residual<F>(g: &mut Graph, ln: &LayerNormParams, x: Var, block: F) -> Result<Var>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let n = layer_norm(g, ln, x)?;
    let y = block(g, n)?;
    let y = g.dropout(y)?;
    g.tape.add(x, y)
}

/// Channel `2i` holds `sin(p / 10000^(2i/d))`, channel `2i+1` the cosine.
pub fn sinusoidal_positions(t: usize, d_model: usize) -> Result<Tensor> {
    if t == 0 || d_model == 0 {
        return Err(Error::Config("positions need t > 0 and d_model > 0".into()));
    }
    if !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("sinusoidal positions need even d_model, got {d_model}")));
    }
    let mut data = vec![0.0; t * d_model];
    for p in 0..t {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[p * d_model + 2 * i] = angle.sin();
            data[p * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::matrix(t, d_model, data)
}
