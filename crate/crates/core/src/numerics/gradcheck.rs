//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};
use crate::rng::rng_for;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates probed per tensor; `None` probes every entry.
    pub samples_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_param: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub probed: usize,
    /// max |analytic − numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// Compares backward-pass gradients of `f` against central differences
/// for every parameter in `store`.
///
/// `f` must be deterministic and return a scalar node.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    store.clear_grads();
    tape.backward(loss, store)?;
    drop(tape);

    let eval = |f: &mut F, store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, store)?;
        t.scalar(l)
    };

    let mut rng = rng_for(opts.seed, "gradcheck");
    let ids: Vec<_> = store.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let name = store.name(id).to_owned();
        let analytic = store.get(id).grad_or_zeros();
        let n = analytic.len();
        let coords: Vec<usize> = match opts.samples_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut worst: f64 = 0.0;
        for &c in &coords {
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + opts.step;
            let up = eval(&mut f, store)?;
            store.get_mut(id).data_mut()[c] = orig - opts.step;
            let down = eval(&mut f, store)?;
            store.get_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            if !numeric.is_finite() || !analytic[c].is_finite() {
                return Err(Error::Numeric(format!("gradient of `{name}`[{c}]")));
            }
            let rel = (analytic[c] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(rel);
        }
        out.push(ParamCheck {
            name,
            probed: coords.len(),
            max_rel_error: worst,
            passed: worst < opts.tolerance,
        });
    }
    Ok(GradCheckReport {
        params: out,
        tolerance: opts.tolerance,
    })
}
