use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// `floor + ½(peak − floor)(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total_steps: usize, peak: f64, floor: f64) -> Result<f64> {
    if peak < floor {
        return Err(Error::Config(format!("peak lr {peak} is below the floor {floor}")));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} is past total_steps {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(peak);
    }
    let phase = PI * step as f64 / total_steps as f64;
    Ok(floor + 0.5 * (peak - floor) * (1.0 + phase.cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Per-parameter optimizer state. A parameter whose gradient is absent
/// (it was not on the tape) is skipped outright: its value and its state
/// are left untouched.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        momentum: f64,
        velocity: Vec<Option<Vec<f64>>>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<Option<Vec<f64>>>,
        v: Vec<Option<Vec<f64>>>,
        steps: Vec<u64>,
    },
}

impl Optimizer {
    pub fn sgd(momentum: f64, n_params: usize) -> Self {
        Optimizer::Sgd {
            momentum,
            velocity: vec![None; n_params],
        }
    }

    pub fn adam(n_params: usize) -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            m: vec![None; n_params],
            v: vec![None; n_params],
            steps: vec![0; n_params],
        }
    }

    pub fn new(kind: OptimizerKind, momentum: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(momentum, n_params),
            OptimizerKind::Adam => Self::adam(n_params),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        let n = params.len();
        match self {
            Optimizer::Sgd { momentum, velocity } => {
                if velocity.len() != n {
                    return Err(Error::Contract("optimizer state does not match the store".into()));
                }
                for (id, t) in params.iter_mut() {
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
                    let vel = velocity[id.index()].get_or_insert_with(|| vec![0.0; g.len()]);
                    for ((w, v), g) in t.data_mut().iter_mut().zip(vel.iter_mut()).zip(&g) {
                        *v = *momentum * *v + g;
                        *w -= lr * *v;
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                m,
                v,
                steps,
            } => {
                if m.len() != n {
                    return Err(Error::Contract("optimizer state does not match the store".into()));
                }
                for (id, t) in params.iter_mut() {
                    let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
                    let i = id.index();
                    steps[i] += 1;
                    let k = steps[i] as i32;
                    let (c1, c2) = (1.0 - beta1.powi(k), 1.0 - beta2.powi(k));
                    let mi = m[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    let vi = v[i].get_or_insert_with(|| vec![0.0; g.len()]);
                    for (((w, mm), vv), g) in t.data_mut().iter_mut().zip(mi.iter_mut()).zip(vi.iter_mut()).zip(&g) {
                        *mm = *beta1 * *mm + (1.0 - *beta1) * g;
                        *vv = *beta2 * *vv + (1.0 - *beta2) * g * g;
                        *w -= lr * (*mm / c1) / ((*vv / c2).sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales every present gradient so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|(_, _, t)| t.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / norm;
        for (_, t) in params.iter_mut() {
            t.scale_grad(k);
        }
    }
    norm
}
