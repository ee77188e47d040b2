use rand::Rng as _;

use crate::error::Result;
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport, ParamId, ParamStore, Tape, Var};
use crate::rng::{rng_for, Rng};

/// Inverted dropout; `None` rng means eval mode (identity).
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    rng: Option<Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn train(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: Some(rng_for(seed, "dropout")),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    /// Keep-mask scaled by `1/(1-rate)`.
    pub fn mask(&mut self, n: usize) -> Option<Vec<f64>> {
        if !self.active() {
            return None;
        }
        let keep = 1.0 - self.rate;
        let rng = self.rng.as_mut()?;
        Some(
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect(),
        )
    }
}

/// One forward pass: a fresh tape over a borrowed parameter store.
pub struct Graph<'p> {
    pub tape: Tape,
    params: &'p ParamStore,
    dropout: Dropout,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, dropout: Dropout) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            dropout,
        }
    }

    pub fn eval(params: &'p ParamStore) -> Self {
        Self::new(params, Dropout::off())
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn training(&self) -> bool {
        self.dropout.active()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.tape.param(self.params, id)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.dropout.mask(self.tape.value(x).len()) {
            Some(mask) => self.tape.mul_const(x, mask),
            None => Ok(x),
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }
}

/// [`grad_check`] over a closure that builds its forward pass on a [`Graph`]
/// in eval mode.
pub fn grad_check_graph<F>(store: &mut ParamStore, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    grad_check(
        store,
        |tape, ps| {
            let mut g = Graph::eval(ps);
            g.tape = std::mem::take(tape);
            let out = f(&mut g);
            *tape = g.into_tape();
            out
        },
        opts,
    )
}
