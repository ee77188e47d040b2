//! Supervised mixture of experts.
//!
//! Routing is a fixed function of labels known ahead of time: the encoder
//! bank is selected by input bandwidth, the decoder bank by the task tag.
//! Gates are one-hot, and an expert whose gate weight is zero is never
//! evaluated, so active compute matches a single shared feedforward block.
//!
//! | gate              | label | weights  |
//! |-------------------|-------|----------|
//! | [`gate_encoder`]  | WB    | `[1, 0]` |
//! | [`gate_encoder`]  | NB    | `[0, 1]` |
//! | [`gate_decoder`]  | ST    | `[1, 0]` |
//! | [`gate_decoder`]  | ASR   | `[0, 1]` |

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::nn::{ffn_forward, FFNParams, Graph};
use crate::numerics::{ParamId, ParamStore, Var};

/// Experts per S-MoE layer throughout the model.
pub const DEFAULT_EXPERTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bandwidth {
    /// 8 kHz narrowband.
    Nb,
    /// 16 kHz wideband.
    Wb,
}

impl Bandwidth {
    pub fn sample_rate(self) -> u32 {
        match self {
            Bandwidth::Nb => 8000,
            Bandwidth::Wb => 16000,
        }
    }

    pub fn from_sample_rate(rate: u32) -> Result<Self> {
        match rate {
            8000 => Ok(Bandwidth::Nb),
            16000 => Ok(Bandwidth::Wb),
            other => Err(Error::Input(format!("unsupported sample rate {other} Hz"))),
        }
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bandwidth::Nb => "NB",
            Bandwidth::Wb => "WB",
        })
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NB" | "nb" => Ok(Bandwidth::Nb),
            "WB" | "wb" => Ok(Bandwidth::Wb),
            other => Err(Error::Config(format!("unknown bandwidth `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Asr,
    St,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Asr, Task::St];

    /// One-letter code used in the metrics log.
    pub fn code(self) -> char {
        match self {
            Task::Asr => 'A',
            Task::St => 'S',
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Asr => "ASR",
            Task::St => "ST",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ASR" | "asr" => Ok(Task::Asr),
            "ST" | "st" => Ok(Task::St),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// One-hot routing weights. Soft gates are not representable.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector {
    weights: Vec<f64>,
    selected: usize,
}

impl GateVector {
    pub fn one_hot(n: usize, selected: usize) -> Result<Self> {
        if selected >= n {
            return Err(Error::Routing(format!("expert {selected} out of range for {n} experts")));
        }
        let mut weights = vec![0.0; n];
        weights[selected] = 1.0;
        Ok(GateVector { weights, selected })
    }

    /// Accepts only weights with a single 1.0 and zeros elsewhere.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] == 1.0).collect();
        let zeros = weights.iter().filter(|w| **w == 0.0).count();
        match ones.as_slice() {
            [k] if zeros + 1 == weights.len() => Ok(GateVector {
                weights: weights.to_vec(),
                selected: *k,
            }),
            _ => Err(Error::Routing(format!("gate {weights:?} is not one-hot"))),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the single active expert.
    pub fn selected(&self) -> usize {
        self.selected
    }
}

/// WB → expert 0, NB → expert 1.
pub fn gate_encoder(bw: Bandwidth) -> GateVector {
    let k = match bw {
        Bandwidth::Wb => 0,
        Bandwidth::Nb => 1,
    };
    GateVector::one_hot(DEFAULT_EXPERTS, k).expect("index below expert count")
}

/// ST → expert 0, ASR → expert 1.
pub fn gate_decoder(task: Task) -> GateVector {
    let k = match task {
        Task::St => 0,
        Task::Asr => 1,
    };
    GateVector::one_hot(DEFAULT_EXPERTS, k).expect("index below expert count")
}

/// Bank of same-shaped feedforward experts with per-expert call counters.
///
/// Counters are instrumentation only; they are not saved in checkpoints.
#[derive(Debug)]
pub struct SMoELayer {
    experts: Vec<FFNParams>,
    call_counts: Vec<AtomicU64>,
}

impl Clone for SMoELayer {
    fn clone(&self) -> Self {
        SMoELayer {
            experts: self.experts.clone(),
            call_counts: self
                .call_counts
                .iter()
                .map(|c| AtomicU64::new(c.load(Ordering::Relaxed)))
                .collect(),
        }
    }
}

impl SMoELayer {
    pub fn new(experts: Vec<FFNParams>) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::Config("an expert bank needs at least one expert".into()))?;
        let dims = (first.d_model, first.d_ff, first.glu());
        if experts.iter().any(|e| (e.d_model, e.d_ff, e.glu()) != dims) {
            return Err(Error::Config("experts must share d_model, d_ff and glu".into()));
        }
        let call_counts = experts.iter().map(|_| AtomicU64::new(0)).collect();
        Ok(SMoELayer { experts, call_counts })
    }

    pub fn experts(&self) -> &[FFNParams] {
        &self.experts
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn call_counts(&self) -> Vec<u64> {
        self.call_counts.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn reset_counts(&self) {
        self.call_counts.iter().for_each(|c| c.store(0, Ordering::Relaxed));
    }

    pub(crate) fn visit_ids(&mut self, f: &mut dyn FnMut(&mut ParamId)) {
        self.experts.iter_mut().for_each(|e| e.visit_ids(f));
    }
}

/// `y = Σ gᵢ·Eᵢ(x)` with one-hot `g`: evaluates only the selected expert.
pub fn smoe_forward(g: &mut Graph, layer: &SMoELayer, gate: &GateVector, x: Var) -> Result<Var> {
    if gate.len() != layer.n_experts() {
        return Err(Error::Routing(format!(
            "gate has {} weights for {} experts",
            gate.len(),
            layer.n_experts()
        )));
    }
    let k = gate.selected();
    let y = ffn_forward(g, &layer.experts[k], x)?;
    layer.call_counts[k].fetch_add(1, Ordering::Relaxed);
    Ok(y)
}

/// Deep-copies `shared` into `n` experts named `{prefix}.expert.{i}.*`.
pub fn clone_expert_bank(store: &mut ParamStore, shared: &FFNParams, n: usize, prefix: &str) -> Result<SMoELayer> {
    if n < 1 {
        return Err(Error::Config("expert bank size must be at least 1".into()));
    }
    let mut experts = Vec::with_capacity(n);
    for i in 0..n {
        let mut copy = shared.clone();
        let mut err = None;
        copy.visit_ids(&mut |id| {
            if err.is_some() {
                return;
            }
            let leaf = store.name(*id).rsplit('.').next().unwrap_or_default().to_owned();
            let t = store.get(*id).clone();
            match store.insert(format!("{prefix}.expert.{i}.{leaf}"), t) {
                Ok(new) => *id = new,
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        experts.push(copy);
    }
    SMoELayer::new(experts)
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::nn::{Activation, ParamBuilder};
    use crate::numerics::Tensor;
    use crate::rng::rng_for;

    fn bank(store: &mut ParamStore, n: usize) -> SMoELayer {
        let mut rng = rng_for(3, "init");
        let mut pb = ParamBuilder::new(store, &mut rng);
        let experts = (0..n)
            .map(|i| {
                let mut s = pb.scope(&format!("moe.expert.{i}"));
                FFNParams::new(&mut s, 6, 10, true, Activation::Silu).unwrap()
            })
            .collect();
        SMoELayer::new(experts).unwrap()
    }

    fn input(seed: u64) -> Tensor {
        let mut rng = rng_for(seed, "x");
        Tensor::from_fn(&[4, 6], |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn gating_truth_table() {
        assert_eq!(gate_encoder(Bandwidth::Wb).weights(), &[1.0, 0.0]);
        assert_eq!(gate_encoder(Bandwidth::Nb).weights(), &[0.0, 1.0]);
        assert_eq!(gate_decoder(Task::St).weights(), &[1.0, 0.0]);
        assert_eq!(gate_decoder(Task::Asr).weights(), &[0.0, 1.0]);
        assert_ne!(gate_decoder(Task::Asr), gate_decoder(Task::St));
        for g in [
            gate_encoder(Bandwidth::Wb),
            gate_encoder(Bandwidth::Nb),
            gate_decoder(Task::St),
            gate_decoder(Task::Asr),
        ] {
            assert_eq!(g.weights().iter().filter(|w| **w != 0.0).count(), 1);
        }
    }

    #[test]
    fn soft_gates_are_rejected() {
        assert!(GateVector::from_weights(&[0.5, 0.5]).is_err());
        assert!(GateVector::from_weights(&[1.0, 1.0]).is_err());
        assert!(GateVector::from_weights(&[0.0, 0.0]).is_err());
        assert!(GateVector::one_hot(2, 2).is_err());
        assert_eq!(GateVector::from_weights(&[0.0, 1.0]).unwrap().selected(), 1);
    }

    #[test]
    fn forward_equals_selected_expert_bitwise() {
        let mut store = ParamStore::new();
        let layer = bank(&mut store, 2);
        let x = input(1);
        for k in 0..2 {
            layer.reset_counts();
            let mut g = Graph::eval(&store);
            let xv = g.tape.constant(&x);
            let y = smoe_forward(&mut g, &layer, &GateVector::one_hot(2, k).unwrap(), xv).unwrap();
            let direct = ffn_forward(&mut g, &layer.experts()[k], xv).unwrap();
            assert_eq!(g.tape.value(y), g.tape.value(direct));
            let mut expected = vec![0, 0];
            expected[k] = 1;
            assert_eq!(layer.call_counts(), expected);
        }
    }

    #[test]
    fn call_counts_follow_gate_tally() {
        let mut store = ParamStore::new();
        let layer = bank(&mut store, 2);
        let x = input(2);
        let mut rng = rng_for(4, "gates");
        let mut tally = [0u64; 2];
        for _ in 0..100 {
            let k = rng.random_range(0..2);
            tally[k] += 1;
            let before = layer.call_counts();
            let mut g = Graph::eval(&store);
            let xv = g.tape.constant(&x);
            smoe_forward(&mut g, &layer, &GateVector::one_hot(2, k).unwrap(), xv).unwrap();
            let after = layer.call_counts();
            assert_eq!(after[1 - k], before[1 - k]);
        }
        assert_eq!(layer.call_counts(), tally.to_vec());
        assert_eq!(layer.call_counts().iter().sum::<u64>(), 100);
    }

    #[test]
    fn gate_length_must_match_bank() {
        let mut store = ParamStore::new();
        let layer = bank(&mut store, 3);
        let mut g = Graph::eval(&store);
        let xv = g.tape.constant(&input(1));
        assert!(matches!(
            smoe_forward(&mut g, &layer, &gate_decoder(Task::Asr), xv),
            Err(Error::Routing(_))
        ));
    }

    #[test]
    fn only_routed_expert_receives_gradient() {
        let mut store = ParamStore::new();
        let layer = bank(&mut store, 2);
        let x = input(5);
        for k in 0..2 {
            let mut g = Graph::eval(&store);
            let xv = g.tape.constant(&x);
            let y = smoe_forward(&mut g, &layer, &GateVector::one_hot(2, k).unwrap(), xv).unwrap();
            let y = g.tape.mul(y, y).unwrap();
            let loss = g.tape.sum(y);
            let mut tape = g.into_tape();
            store.zero_grads();
            tape.backward(loss, &mut store).unwrap();
            for id in layer.experts()[1 - k].ids() {
                assert!(store.get(id).grad().unwrap().iter().all(|v| *v == 0.0));
            }
            for id in layer.experts()[k].ids() {
                assert!(store.get(id).grad().unwrap().iter().any(|v| *v != 0.0));
            }
        }
    }

    #[test]
    fn cloned_bank_is_a_deep_copy() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(8, "init");
        let shared = {
            let mut pb = ParamBuilder::new(&mut store, &mut rng);
            let mut s = pb.scope("ffn");
            FFNParams::new(&mut s, 6, 10, false, Activation::Silu).unwrap()
        };
        assert!(clone_expert_bank(&mut store, &shared, 0, "moe").is_err());
        let layer = clone_expert_bank(&mut store, &shared, 2, "moe").unwrap();
        assert_eq!(layer.call_counts(), vec![0, 0]);
        assert!(store.lookup("moe.expert.1.w_out").is_some());
        let x = input(3);
        for k in 0..2 {
            let mut g = Graph::eval(&store);
            let xv = g.tape.constant(&x);
            let y = smoe_forward(&mut g, &layer, &GateVector::one_hot(2, k).unwrap(), xv).unwrap();
            let base = ffn_forward(&mut g, &shared, xv).unwrap();
            assert_eq!(g.tape.value(y), g.tape.value(base));
        }
        let e0 = layer.experts()[0].w_in;
        let e1 = layer.experts()[1].w_in;
        let before = store.get(e1).clone();
        store.get_mut(e0).data_mut()[0] += 1.0;
        assert_eq!(store.get(e1), &before);
        assert_eq!(store.get(shared.w_in).data(), before.data());
    }
}
