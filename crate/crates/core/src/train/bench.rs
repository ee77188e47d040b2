use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::wer;
use crate::model::{count_params, parse_kv, parse_value, Model, ModelConfig};
use crate::rng::derive_seed;
use crate::seqio::Vocabulary;
use crate::smoe::{Bandwidth, Task};
use crate::train::batch::{Example, StreamKind};
use crate::train::config::TrainConfig;
use crate::train::data::{examples_at, generate_items, mixed_examples, SyntheticTaskSpec};
use crate::train::step::{train, LogEntry};

/// Token-weighted greedy-decode accuracy per task, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskAccuracy {
    pub asr: f64,
    pub st: f64,
}

impl TaskAccuracy {
    pub fn joint(&self) -> f64 {
        0.5 * (self.asr + self.st)
    }

    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Asr => self.asr,
            Task::St => self.st,
        }
    }
}

/// Decodes every example with its own task prefix and scores payload
/// tokens: `100·Σ(N − S − D) / ΣN`. A task absent from `data` scores 0.
pub fn evaluate(model: &Model, data: &[Example]) -> Result<TaskAccuracy> {
    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for ex in data {
        let reference = ex.target.payload();
        let max_len = reference.len() + 4;
        let hyp = model.infer_single(&ex.feats, ex.task(), ex.target.language(), max_len)?;
        let a = wer(reference, &hyp.ids)?.alignment;
        let k = match ex.task() {
            Task::Asr => 0,
            Task::St => 1,
        };
        correct[k] += a.reference_len - a.substitutions - a.deletions;
        total[k] += a.reference_len;
    }
    let pct = |k: usize| {
        if total[k] == 0 {
            0.0
        } else {
            100.0 * correct[k] as f64 / total[k] as f64
        }
    };
    Ok(TaskAccuracy { asr: pct(0), st: pct(1) })
}

pub const BASE: &str = "Base";
pub const DEC_FFN_X2: &str = "DecFFNx2";
pub const DEC_SMOE: &str = "DecS-MoE";
pub const CONTROL_ASR: &str = "Control-ASR";
pub const CONTROL_ST: &str = "Control-ST";

/// Accuracy a single-task control must reach for the spec to count as
/// learnable in isolation.
pub const CONTROL_TARGET: f64 = 99.0;

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub spec: SyntheticTaskSpec,
    /// The shared-decoder baseline; variants are derived from it.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
    /// Also train the baseline on each task alone.
    pub controls: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let model = ModelConfig {
            n_enc_layers: 1,
            n_dec_layers: 1,
            d_model: 32,
            d_ff: 16,
            dec_d_ff: Some(8),
            n_heads: 2,
            dropout: 0.0,
            max_src_frames: 64,
            max_tgt_tokens: 16,
            ..ModelConfig::toy()
        };
        BenchmarkConfig {
            spec: SyntheticTaskSpec::default(),
            model,
            train: TrainConfig {
                steps: 800,
                batch_size: 8,
                lr: 1e-2,
                lr_floor: 1e-4,
                ..TrainConfig::default()
            },
            n_train: 256,
            n_eval: 128,
            seeds: vec![0, 1, 2],
            controls: true,
        }
    }
}

fn set_seeds(seeds: &mut Vec<u64>, key: &str, value: &str) -> Result<()> {
    *seeds = value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect::<Result<_>>()?;
    Ok(())
}

impl BenchmarkConfig {
    /// Applies one key to the benchmark, the task spec, the training
    /// schedule or the baseline model, in that order of precedence.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_eval" => self.n_eval = parse_value(key, value)?,
            "seeds" => set_seeds(&mut self.seeds, key, value)?,
            "controls" => self.controls = parse_value(key, value)?,
            _ => {
                return Ok(self.spec.set(key, value)? || self.train.set(key, value)? || self.model.set(key, value)?);
            }
        }
        Ok(true)
    }

    /// Every key, grouped by section. Model keys come last so a `preset`
    /// line is harmless when read back.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "# benchmark\nn_train = {}\nn_eval = {}\nseeds = {}\ncontrols = {}\n# task\n{}# training\n{}# model\n{}",
            self.n_train,
            self.n_eval,
            seeds.join(","),
            self.controls,
            self.spec.to_text(),
            self.train.to_text(),
            self.model.to_text()
        )
    }

    /// Parses `key = value` lines over the defaults; unknown keys are
    /// rejected. A model `preset` is applied before everything else.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut entries = parse_kv(text)?;
        entries.sort_by_key(|(_, k, _)| k != "preset");
        for (line, k, v) in entries {
            if !cfg.set(&k, &v)? {
                return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    /// The compared models, by report name.
    pub fn variants(&self) -> Vec<(&'static str, ModelConfig)> {
        let base = ModelConfig {
            dec_smoe: false,
            enc_smoe: false,
            ..self.model.clone()
        };
        let wide = ModelConfig {
            dec_d_ff: Some(2 * base.dec_ff()),
            ..base.clone()
        };
        let smoe = ModelConfig {
            dec_smoe: true,
            ..base.clone()
        };
        vec![(BASE, base), (DEC_FFN_X2, wide), (DEC_SMOE, smoe)]
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: String,
    pub seed: u64,
    pub trainable: usize,
    pub active: usize,
    pub accuracy: TaskAccuracy,
    pub log: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    /// Measured disagreement between the two task mappings.
    pub disagreement: f64,
}

impl BenchmarkReport {
    pub fn rows_for<'a>(&'a self, model: &'a str) -> impl Iterator<Item = &'a BenchRow> + 'a {
        self.rows.iter().filter(move |r| r.model == model)
    }

    /// Seed-averaged accuracy of one model.
    pub fn mean(&self, model: &str) -> Option<TaskAccuracy> {
        let rows: Vec<&BenchRow> = self.rows_for(model).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(TaskAccuracy {
            asr: rows.iter().map(|r| r.accuracy.asr).sum::<f64>() / n,
            st: rows.iter().map(|r| r.accuracy.st).sum::<f64>() / n,
        })
    }

    /// Whether each single-task control reached [`CONTROL_TARGET`] on its
    /// own task, averaged over seeds. `None` when controls were not run.
    pub fn controls_converged(&self) -> Option<bool> {
        let asr = self.mean(CONTROL_ASR)?.asr;
        let st = self.mean(CONTROL_ST)?.st;
        Some(asr >= CONTROL_TARGET && st >= CONTROL_TARGET)
    }

    /// Tab-separated comparison: one row per model and seed, then one mean
    /// row per model.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\tseed\ttrainable\tactive\tasr_acc\tst_acc\tjoint_acc\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
                r.model,
                r.seed,
                r.trainable,
                r.active,
                r.accuracy.asr,
                r.accuracy.st,
                r.accuracy.joint()
            );
        }
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if seen.contains(&r.model.as_str()) {
                continue;
            }
            seen.push(&r.model);
            let m = self.mean(&r.model).expect("row exists");
            let _ = writeln!(
                s,
                "{}\tmean\t{}\t{}\t{:.2}\t{:.2}\t{:.2}",
                r.model,
                r.trainable,
                r.active,
                m.asr,
                m.st,
                m.joint()
            );
        }
        s
    }

    /// Every run's metrics log, each preceded by a `# run=<model> seed=<n>`
    /// header.
    pub fn metrics_log(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(s, "# run={} seed={}", r.model, r.seed);
            for e in &r.log {
                s.push_str(&e.line());
                s.push('\n');
            }
        }
        s
    }
}

fn check_vocab(model: &ModelConfig, vocab: &Vocabulary) -> Result<()> {
    if model.vocab_size < vocab.size() {
        return Err(Error::Config(format!(
            "vocab_size {} is smaller than the tokenizer's {}",
            model.vocab_size,
            vocab.size()
        )));
    }
    Ok(())
}

fn run_one(
    name: &str,
    cfg: &ModelConfig,
    seed: u64,
    kind: StreamKind,
    train_cfg: &TrainConfig,
    train_set: &[Example],
    eval_set: &[Example],
) -> Result<BenchRow> {
    let mut model = Model::new(cfg.clone(), derive_seed(seed, "model"))?;
    let log = train(&mut model, train_set, kind, train_cfg)?;
    let accuracy = evaluate(&model, eval_set)?;
    let pc = count_params(cfg);
    Ok(BenchRow {
        model: name.into(),
        seed,
        trainable: pc.trainable,
        active: pc.active,
        accuracy,
        log,
    })
}

/// Trains every variant on the identical interleaved stream for each seed
/// and reports greedy-decode token accuracy per task. `progress` receives
/// one line per finished run.
pub fn run_interference_benchmark(cfg: &BenchmarkConfig, progress: &mut dyn FnMut(&BenchRow)) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let vocab = Vocabulary::bytes_only();
    check_vocab(&cfg.model, &vocab)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data_seed = derive_seed(seed, "data");
        let train_items = generate_items(&cfg.spec, cfg.n_train, derive_seed(data_seed, "train"), 0.0)?;
        let eval_items = generate_items(&cfg.spec, cfg.n_eval, derive_seed(data_seed, "eval"), 0.0)?;
        let train_set = examples_at(&cfg.spec, &train_items, Bandwidth::Wb, &vocab)?;
        let eval_set = examples_at(&cfg.spec, &eval_items, Bandwidth::Wb, &vocab)?;
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut runs: Vec<(&str, ModelConfig, StreamKind)> = cfg
            .variants()
            .into_iter()
            .map(|(n, c)| (n, c, StreamKind::Interleaved(tc.interleave)))
            .collect();
        if cfg.controls {
            let base = cfg.variants().remove(0).1;
            runs.push((CONTROL_ASR, base.clone(), StreamKind::Only(Task::Asr)));
            runs.push((CONTROL_ST, base, StreamKind::Only(Task::St)));
        }
        for (name, mc, kind) in runs {
            let row = run_one(name, &mc, seed, kind, &tc, &train_set, &eval_set)?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(BenchmarkReport {
        rows,
        disagreement: cfg.spec.disagreement(1000, derive_seed(cfg.seeds[0], "disagreement")),
    })
}

/// Expands a donor's encoder FFNs into bandwidth-routed expert banks (and
/// its decoder FFNs too if `target` asks for it), then trains on `data`
/// with encoder routing active.
pub fn finetune_nbwb(donor: &Model, data: &[Example], target: &ModelConfig, cfg: &TrainConfig) -> Result<(Model, Vec<LogEntry>)> {
    if !target.enc_smoe {
        return Err(Error::Config("fine-tuning target must have encoder experts".into()));
    }
    let mut model = Model::from_donor(donor, target)?;
    let log = train(&mut model, data, StreamKind::Interleaved(cfg.interleave), cfg)?;
    Ok((model, log))
}

#[derive(Debug, Clone)]
pub struct NbwbConfig {
    pub spec: SyntheticTaskSpec,
    /// The donor, trained on wideband only.
    pub donor: ModelConfig,
    pub pretrain: TrainConfig,
    /// Fine-tuning schedule; its `nbwb_mix_fraction` sets the twin share.
    pub finetune: TrainConfig,
    pub n_train: usize,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
}

impl Default for NbwbConfig {
    fn default() -> Self {
        let donor = ModelConfig {
            dec_smoe: true,
            ..BenchmarkConfig::default().model
        };
        NbwbConfig {
            spec: SyntheticTaskSpec::default(),
            donor,
            pretrain: TrainConfig {
                steps: 1000,
                lr: 1e-2,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                steps: 300,
                lr: 3e-3,
                ..TrainConfig::default()
            },
            n_train: 256,
            n_eval: 128,
            seeds: vec![0, 1, 2],
        }
    }
}

impl NbwbConfig {
    /// Like [`BenchmarkConfig::set`]; training keys prefixed `pre.` or
    /// `ft.` go to the pretraining or fine-tuning schedule.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n_train" => self.n_train = parse_value(key, value)?,
            "n_eval" => self.n_eval = parse_value(key, value)?,
            "seeds" => set_seeds(&mut self.seeds, key, value)?,
            _ => {
                if let Some(k) = key.strip_prefix("pre.") {
                    return self.pretrain.set(k, value);
                }
                if let Some(k) = key.strip_prefix("ft.") {
                    return self.finetune.set(k, value);
                }
                return Ok(self.spec.set(key, value)? || self.donor.set(key, value)?);
            }
        }
        Ok(true)
    }
}

#[derive(Debug, Clone)]
pub struct NbwbRow {
    pub seed: u64,
    pub donor_wb: f64,
    pub donor_nb: f64,
    /// Wideband accuracy right after expansion, before any update.
    pub expanded_wb: f64,
    pub tuned_wb: f64,
    pub tuned_nb: f64,
    /// Encoder expert calls per layer during fine-tuning, `[WB, NB]`.
    pub encoder_calls: Vec<Vec<u64>>,
    pub nb_examples: usize,
    pub wb_examples: usize,
    pub pretrain_log: Vec<LogEntry>,
    pub finetune_log: Vec<LogEntry>,
}

#[derive(Debug, Clone)]
pub struct NbwbReport {
    pub rows: Vec<NbwbRow>,
}

impl NbwbReport {
    fn mean(&self, f: impl Fn(&NbwbRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn donor_wb(&self) -> f64 {
        self.mean(|r| r.donor_wb)
    }

    pub fn donor_nb(&self) -> f64 {
        self.mean(|r| r.donor_nb)
    }

    pub fn tuned_wb(&self) -> f64 {
        self.mean(|r| r.tuned_wb)
    }

    pub fn tuned_nb(&self) -> f64 {
        self.mean(|r| r.tuned_nb)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("seed\tdonor_wb\tdonor_nb\texpanded_wb\ttuned_wb\ttuned_nb\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
                r.seed, r.donor_wb, r.donor_nb, r.expanded_wb, r.tuned_wb, r.tuned_nb
            );
        }
        let _ = writeln!(
            s,
            "mean\t{:.2}\t{:.2}\t{:.2}\t{:.2}\t{:.2}",
            self.donor_wb(),
            self.donor_nb(),
            self.mean(|r| r.expanded_wb),
            self.tuned_wb(),
            self.tuned_nb()
        );
        s
    }
}

/// Trains a wideband-only donor per seed, fine-tunes it on the mixed set,
/// and scores both on wideband and narrowband renderings of held-out items.
/// Accuracies are joint over the two tasks.
pub fn run_nbwb_experiment(cfg: &NbwbConfig, progress: &mut dyn FnMut(&NbwbRow)) -> Result<NbwbReport> {
    cfg.spec.validate()?;
    cfg.pretrain.validate()?;
    cfg.finetune.validate()?;
    let vocab = Vocabulary::bytes_only();
    check_vocab(&cfg.donor, &vocab)?;
    let target = ModelConfig {
        enc_smoe: true,
        ..cfg.donor.clone()
    };
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let data_seed = derive_seed(seed, "data");
        let items = generate_items(
            &cfg.spec,
            cfg.n_train,
            derive_seed(data_seed, "train"),
            cfg.finetune.nbwb_mix_fraction,
        )?;
        let eval_items = generate_items(&cfg.spec, cfg.n_eval, derive_seed(data_seed, "eval"), 0.0)?;
        let wb_train = examples_at(&cfg.spec, &items, Bandwidth::Wb, &vocab)?;
        let mixed = mixed_examples(&cfg.spec, &items, &vocab)?;
        let wb_eval = examples_at(&cfg.spec, &eval_items, Bandwidth::Wb, &vocab)?;
        let nb_eval = examples_at(&cfg.spec, &eval_items, Bandwidth::Nb, &vocab)?;

        let mut donor = Model::new(cfg.donor.clone(), derive_seed(seed, "model"))?;
        let pre = TrainConfig {
            seed,
            ..cfg.pretrain.clone()
        };
        let pretrain_log = train(&mut donor, &wb_train, StreamKind::Interleaved(pre.interleave), &pre)?;
        let donor_wb = evaluate(&donor, &wb_eval)?.joint();
        let donor_nb = evaluate(&donor, &nb_eval)?.joint();

        let expanded = Model::from_donor(&donor, &target)?;
        let expanded_wb = evaluate(&expanded, &wb_eval)?.joint();

        let ft = TrainConfig {
            seed: derive_seed(seed, "finetune"),
            ..cfg.finetune.clone()
        };
        let (tuned, finetune_log) = finetune_nbwb(&donor, &mixed, &target, &ft)?;
        let encoder_calls = tuned.encoder_call_counts();
        let tuned_wb = evaluate(&tuned, &wb_eval)?.joint();
        let tuned_nb = evaluate(&tuned, &nb_eval)?.joint();
        let nb_examples = mixed.iter().filter(|e| e.bandwidth() == Bandwidth::Nb).count();
        let row = NbwbRow {
            seed,
            donor_wb,
            donor_nb,
            expanded_wb,
            tuned_wb,
            tuned_nb,
            encoder_calls,
            nb_examples,
            wb_examples: mixed.len() - nb_examples,
            pretrain_log,
            finetune_log,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(NbwbReport { rows })
}
