use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_for};
use crate::seqio::{TargetSequence, PAD};
use crate::signal::FbankFeatures;
use crate::smoe::{Bandwidth, Task};
use crate::train::config::InterleavePattern;

/// One training or evaluation utterance.
#[derive(Debug, Clone)]
pub struct Example {
    pub feats: FbankFeatures,
    pub target: TargetSequence,
    /// Reference payload text.
    pub text: String,
}

impl Example {
    pub fn task(&self) -> Task {
        self.target.task()
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.feats.bandwidth
    }
}

/// Indices of same-task examples. Mixed-task batches cannot be built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    task: Task,
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(data: &[Example], task: Task, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        for &i in &indices {
            let ex = data.get(i).ok_or(Error::Index {
                what: "dataset",
                index: i,
                bound: data.len(),
            })?;
            if ex.task() != task {
                return Err(Error::Config(format!(
                    "example {i} is {} in a {task} batch",
                    ex.task()
                )));
            }
        }
        Ok(Batch { task, indices })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn bandwidths(&self, data: &[Example]) -> Vec<Bandwidth> {
        self.indices.iter().map(|&i| data[i].bandwidth()).collect()
    }

    /// Targets right-padded with PAD, and their true lengths.
    pub fn padded_targets(&self, data: &[Example]) -> (Vec<Vec<u32>>, Vec<usize>) {
        let lens: Vec<usize> = self.indices.iter().map(|&i| data[i].target.len()).collect();
        let max = lens.iter().copied().max().unwrap_or(0);
        let rows = self
            .indices
            .iter()
            .map(|&i| {
                let mut ids = data[i].target.ids().to_vec();
                ids.resize(max, PAD);
                ids
            })
            .collect();
        (rows, lens)
    }

    /// Feature matrices zero-padded to the longest, and their frame counts.
    pub fn padded_features(&self, data: &[Example]) -> (Vec<Vec<f64>>, Vec<usize>) {
        let lens: Vec<usize> = self.indices.iter().map(|&i| data[i].feats.n_frames()).collect();
        let max = lens.iter().copied().max().unwrap_or(0);
        let rows = self
            .indices
            .iter()
            .map(|&i| {
                let f = &data[i].feats.frames;
                let mut v = f.data().to_vec();
                v.resize(max * f.shape()[1], 0.0);
                v
            })
            .collect();
        (rows, lens)
    }
}

fn shuffled_batches(data: &[Example], task: Task, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].task() == task).collect();
    if idx.is_empty() {
        return Err(Error::Config(format!("no {task} samples in the dataset")));
    }
    let purpose = match task {
        Task::Asr => "shuffle-asr",
        Task::St => "shuffle-st",
    };
    idx.shuffle(&mut rng_for(seed, purpose));
    idx.chunks(batch_size)
        .map(|c| Batch::new(data, task, c.to_vec()))
        .collect()
}

/// One epoch of strictly alternating ASR, ST, ASR, … batches. Within-task
/// order is shuffled by `seed`; the epoch ends when either task runs out.
pub fn make_interleaved_stream(data: &[Example], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    make_patterned_stream(data, batch_size, seed, InterleavePattern::STRICT)
}

/// Like [`make_interleaved_stream`] but with `pattern.asr` ASR batches then
/// `pattern.st` ST batches per cycle. Ends at the first cycle that cannot
/// be completed.
pub fn make_patterned_stream(
    data: &[Example],
    batch_size: usize,
    seed: u64,
    pattern: InterleavePattern,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if pattern.asr == 0 || pattern.st == 0 {
        return Err(Error::Config("interleave counts must be positive".into()));
    }
    let asr = shuffled_batches(data, Task::Asr, batch_size, seed)?;
    let st = shuffled_batches(data, Task::St, batch_size, seed)?;
    let cycles = (asr.len() / pattern.asr).min(st.len() / pattern.st).max(1);
    let mut out = Vec::with_capacity(asr.len() + st.len());
    let mut a = asr.into_iter();
    let mut s = st.into_iter();
    'outer: for _ in 0..cycles {
        for _ in 0..pattern.asr {
            match a.next() {
                Some(b) => out.push(b),
                None => break 'outer,
            }
        }
        for _ in 0..pattern.st {
            match s.next() {
                Some(b) => out.push(b),
                None => break 'outer,
            }
        }
    }
    Ok(out)
}

/// One shuffled epoch over a single task.
pub fn make_task_stream(data: &[Example], task: Task, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    shuffled_batches(data, task, batch_size, seed)
}

/// Which batches a training run draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Interleaved(InterleavePattern),
    Only(Task),
}

/// Endless epoch-by-epoch batch supply; epoch `e` is shuffled with a seed
/// derived from `(seed, e)`.
pub struct BatchStream<'a> {
    data: &'a [Example],
    kind: StreamKind,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    pending: std::vec::IntoIter<Batch>,
}

impl<'a> BatchStream<'a> {
    pub fn new(data: &'a [Example], kind: StreamKind, batch_size: usize, seed: u64) -> Result<Self> {
        let mut s = BatchStream {
            data,
            kind,
            batch_size,
            seed,
            epoch: 0,
            pending: Vec::new().into_iter(),
        };
        s.refill()?;
        Ok(s)
    }

    fn refill(&mut self) -> Result<()> {
        let seed = derive_seed(self.seed, &format!("epoch-{}", self.epoch));
        let batches = match self.kind {
            StreamKind::Interleaved(p) => make_patterned_stream(self.data, self.batch_size, seed, p)?,
            StreamKind::Only(t) => make_task_stream(self.data, t, self.batch_size, seed)?,
        };
        self.epoch += 1;
        self.pending = batches.into_iter();
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        if let Some(b) = self.pending.next() {
            return Ok(b);
        }
        self.refill()?;
        self.pending
            .next()
            .ok_or_else(|| Error::Config("stream produced an empty epoch".into()))
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}
