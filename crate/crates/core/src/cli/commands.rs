use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cli::manifest::{self, Manifest, ManifestRecord};
use crate::cli::{resolve_config, BandwidthArg, CliError, CliResult, Common, TaskArg, EXIT_NUMERIC, RESOLVED_CONFIG};
use crate::error::Error;
use crate::metrics::{bleu, token_accuracy, wer, BleuOptions};
use crate::model::{checkpoint, count_params, Model, ModelConfig};
use crate::nn::grad_check_graph;
use crate::numerics::GradCheckOptions;
use crate::rng::derive_seed;
use crate::seqio::Vocabulary;
use crate::signal::{fbank, read_wav, write_wav};
use crate::smoe::{Bandwidth, Task};
use crate::train::{
    examples_for, finetune_nbwb, format_log, generate_items, run_interference_benchmark, train, BenchmarkConfig,
    Example, StreamKind, DEC_SMOE, BASE, DEC_FFN_X2,
};

const CHECKPOINT_FILE: &str = "model.ckpt";
const METRICS_LOG: &str = "metrics.log";

fn io(e: std::io::Error) -> CliError {
    CliError::from(Error::Io(e))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(io)
}

fn out_dir(common: &Common) -> CliResult<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| CliError::from(Error::Config("--out DIR is required".into())))?;
    fs::create_dir_all(&dir).map_err(io)?;
    Ok(dir)
}

/// Writes `config.resolved`, with `model` replacing the configured model
/// section when the model came from a checkpoint.
fn snapshot(dir: &Path, cfg: &BenchmarkConfig, model: Option<&ModelConfig>) -> CliResult<()> {
    let mut cfg = cfg.clone();
    if let Some(m) = model {
        cfg.model = m.clone();
    }
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text()).map_err(io)
}

fn load_checkpoint(path: &Path) -> CliResult<checkpoint::Checkpoint> {
    checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => CliError::checkpoint(Error::format("checkpoint", None, format!("{}: {io}", path.display()))),
        other => CliError::checkpoint(other),
    })
}

fn load_data(dir: &Path, cfg: &BenchmarkConfig) -> CliResult<(Manifest, Vec<Example>)> {
    let m = Manifest::load(&dir.join(manifest::FILE_NAME)).map_err(CliError::input)?;
    let langs = (cfg.spec.asr_language, cfg.spec.st_language);
    let ex = m
        .load_examples(dir, &Vocabulary::bytes_only(), langs)
        .map_err(CliError::input)?;
    Ok((m, ex))
}

fn task(t: TaskArg) -> Task {
    match t {
        TaskArg::Asr => Task::Asr,
        TaskArg::St => Task::St,
    }
}

pub fn cmd_datagen(common: &Common, n: usize, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let items = generate_items(
        &cfg.spec,
        n,
        derive_seed(cfg.train.seed, "data"),
        cfg.train.nbwb_mix_fraction,
    )?;
    fs::create_dir_all(dir.join("audio")).map_err(io)?;
    fs::create_dir_all(dir.join("text")).map_err(io)?;
    let mut m = Manifest::default();
    for (i, it) in items.iter().enumerate() {
        let stem = format!("item-{i:05}");
        for t in Task::ALL {
            let text = cfg.spec.target_text(t, &it.symbols);
            let ext = t.to_string().to_lowercase();
            fs::write(dir.join("text").join(format!("{stem}.{ext}.txt")), format!("{text}\n")).map_err(io)?;
        }
        let mut waves = vec![(Bandwidth::Wb, &it.wave)];
        if let Some(nb) = &it.nb {
            waves.push((Bandwidth::Nb, nb));
        }
        for (bw, w) in waves {
            let rel = PathBuf::from("audio").join(format!("{stem}-{}.wav", bw.to_string().to_lowercase()));
            write_wav(&dir.join(&rel), w)?;
            for t in Task::ALL {
                m.records.push(ManifestRecord {
                    audio: rel.clone(),
                    bandwidth: bw,
                    task: t,
                    text: cfg.spec.target_text(t, &it.symbols),
                });
            }
        }
    }
    m.save(&dir.join(manifest::FILE_NAME))?;
    snapshot(&dir, &cfg, None)?;
    let (wb, nb) = m.audio_counts();
    emit(
        out,
        &format!("wrote {wb} WB and {nb} NB audio files, {} records, to {}\n", m.records.len(), dir.display()),
    )
}

pub fn cmd_train(common: &Common, data: &Path, only: Option<TaskArg>, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    let (_, examples) = load_data(data, &cfg)?;
    let mut model = Model::new(cfg.model.clone(), derive_seed(cfg.train.seed, "model"))?;
    let kind = match only {
        Some(t) => StreamKind::Only(task(t)),
        None => StreamKind::Interleaved(cfg.train.interleave),
    };
    snapshot(&dir, &cfg, None)?;
    let log = train(&mut model, &examples, kind, &cfg.train)?;
    fs::write(dir.join(METRICS_LOG), format_log(&log)).map_err(io)?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &model, cfg.train.steps as u64)?;
    let last = log.last().map_or(f64::NAN, |e| e.loss);
    emit(
        out,
        &format!("trained {} steps, final loss {last:.6}; checkpoint {}\n", cfg.train.steps, dir.join(CHECKPOINT_FILE).display()),
    )
}

pub fn cmd_finetune_nbwb(common: &Common, ckpt: &Path, data: &Path, out: &mut dyn Write) -> CliResult<()> {
    let mut cfg = resolve_config(common)?;
    let donor = load_checkpoint(ckpt)?.model;
    let mut target = donor.config.clone();
    for o in &common.overrides {
        let (k, v) = crate::model::parse_override(o)?;
        target.set(&k, &v)?;
    }
    target.enc_smoe = true;
    cfg.model = target.clone();
    let dir = out_dir(common)?;
    let (_, examples) = load_data(data, &cfg)?;
    snapshot(&dir, &cfg, None)?;
    let (model, log) = finetune_nbwb(&donor, &examples, &target, &cfg.train)?;
    fs::write(dir.join(METRICS_LOG), format_log(&log)).map_err(io)?;
    checkpoint::save(&dir.join(CHECKPOINT_FILE), &model, cfg.train.steps as u64)?;
    let calls = model.encoder_call_counts();
    emit(
        out,
        &format!(
            "fine-tuned {} steps; encoder expert calls [WB, NB] per layer {calls:?}; checkpoint {}\n",
            cfg.train.steps,
            dir.join(CHECKPOINT_FILE).display()
        ),
    )
}

pub fn cmd_eval(
    common: &Common,
    ckpt: &Path,
    data: &Path,
    bandwidth: Option<BandwidthArg>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let mut cfg = resolve_config(common)?;
    let model = load_checkpoint(ckpt)?.model;
    cfg.model = model.config.clone();
    let (_, examples) = load_data(data, &cfg)?;
    let keep = |e: &&Example| match bandwidth {
        Some(BandwidthArg::Nb) => e.bandwidth() == Bandwidth::Nb,
        Some(BandwidthArg::Wb) => e.bandwidth() == Bandwidth::Wb,
        None => true,
    };
    let mut report = String::from("task\tbandwidth\tn\ttoken_acc\twer\tbleu\n");
    for t in Task::ALL {
        for bw in [Bandwidth::Wb, Bandwidth::Nb] {
            let group: Vec<&Example> = examples.iter().filter(keep).filter(|e| e.task() == t && e.bandwidth() == bw).collect();
            if group.is_empty() {
                continue;
            }
            let (mut acc, mut errs, mut n_ref, mut bl) = (0.0, 0usize, 0usize, 0.0);
            for ex in &group {
                let reference = ex.target.payload();
                let hyp = model.infer_single(&ex.feats, t, ex.target.language(), reference.len() + 8)?;
                acc += token_accuracy(reference, &hyp.ids)?;
                let w = wer(reference, &hyp.ids)?;
                errs += w.alignment.errors();
                n_ref += reference.len();
                bl += bleu(&[reference.to_vec()], &hyp.ids, &BleuOptions::default())?.score;
            }
            let k = group.len() as f64;
            report.push_str(&format!(
                "{t}\t{bw}\t{}\t{:.2}\t{:.4}\t{:.2}\n",
                group.len(),
                100.0 * acc / k,
                errs as f64 / n_ref as f64,
                bl / k
            ));
        }
    }
    if let Some(o) = &common.out {
        fs::create_dir_all(o).map_err(io)?;
        fs::write(o.join("eval.tsv"), &report).map_err(io)?;
        snapshot(o, &cfg, None)?;
    }
    emit(out, &report)
}

pub fn cmd_infer(
    common: &Common,
    ckpt: &Path,
    audio: &Path,
    single: Option<TaskArg>,
    max_len: usize,
    out: &mut dyn Write,
) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let model = load_checkpoint(ckpt)?.model;
    let wave = read_wav(audio).map_err(|e| CliError::input(Error::Input(format!("{}: {e}", audio.display()))))?;
    let feats = fbank(&wave).map_err(CliError::input)?;
    let vocab = Vocabulary::bytes_only();
    let text = |ids: &[u32]| vocab.decode_lossy(ids);
    let (asr_lang, st_lang) = (cfg.spec.asr_language, cfg.spec.st_language);
    let lines = match single.map(task) {
        Some(Task::Asr) => format!("ASR: {}\n", text(&model.infer_single(&feats, Task::Asr, asr_lang, max_len)?.ids)?),
        Some(Task::St) => format!("ST: {}\n", text(&model.infer_single(&feats, Task::St, st_lang, max_len)?.ids)?),
        None => {
            let (a, s) = model.infer_dual(&feats, asr_lang, st_lang, max_len)?;
            format!("ASR: {}\nST: {}\n", text(&a.ids)?, text(&s.ids)?)
        }
    };
    if let Some(o) = &common.out {
        fs::create_dir_all(o).map_err(io)?;
        snapshot(o, &cfg, Some(&model.config))?;
    }
    emit(out, &lines)
}

pub fn cmd_inspect(common: &Common, ckpt: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let model_cfg = match ckpt {
        Some(p) => load_checkpoint(p)?.model.config,
        None => cfg.model.clone(),
    };
    let pc = count_params(&model_cfg);
    let mut s = format!("trainable\t{}\nactive\t{}\nidle\t{}\n", pc.trainable, pc.active, pc.idle());
    for (name, n) in &pc.breakdown {
        s.push_str(&format!("  {name}\t{n}\n"));
    }
    let bank = |on: bool, layers: usize, ff: usize| {
        if on {
            format!("{layers} layer(s) x {} experts of d_ff {ff}", model_cfg.n_experts)
        } else {
            format!("{layers} shared FFN layer(s) of d_ff {ff}")
        }
    };
    s.push_str(&format!(
        "encoder ffn\t{}\ndecoder ffn\t{}\n",
        bank(model_cfg.enc_smoe, model_cfg.n_enc_layers, model_cfg.d_ff),
        bank(model_cfg.dec_smoe, model_cfg.n_dec_layers, model_cfg.dec_ff())
    ));
    if let Some(o) = &common.out {
        fs::create_dir_all(o).map_err(io)?;
        snapshot(o, &cfg, Some(&model_cfg))?;
    }
    emit(out, &s)
}

pub fn cmd_gradcheck(common: &Common, tolerance: f64, samples: usize, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let mc = ModelConfig {
        dropout: 0.0,
        ..cfg.model.clone()
    };
    let mut model = Model::new(mc, derive_seed(cfg.train.seed, "model"))?;
    let item = &generate_items(&cfg.spec, 1, derive_seed(cfg.train.seed, "data"), 1.0)?[0];
    let vocab = Vocabulary::bytes_only();
    let nb = item.nb.as_ref().expect("fraction 1 gives a twin");
    let mut examples: Vec<Example> = examples_for(&cfg.spec, &item.symbols, &item.wave, &vocab)?.into();
    examples.extend(examples_for(&cfg.spec, &item.symbols, nb, &vocab)?);
    let shape = model.clone();
    let opts = GradCheckOptions {
        tolerance,
        samples_per_param: Some(samples),
        seed: cfg.train.seed,
        ..Default::default()
    };
    let report = grad_check_graph(
        &mut model.params,
        |g| {
            let mut total = None;
            for ex in &examples {
                let (l, _) = shape.loss(g, &ex.feats, &ex.target)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.tape.add(t, l)?,
                });
            }
            Ok(total.expect("four examples"))
        },
        &opts,
    )?;
    let mut s = String::new();
    for p in &report.params {
        s.push_str(&format!(
            "{}\t{}\t{:.3e}\t{}\n",
            p.name,
            p.probed,
            p.max_rel_error,
            if p.passed { "ok" } else { "FAIL" }
        ));
    }
    s.push_str(&format!(
        "max relative error {:.3e} (tolerance {tolerance:e}): {}\n",
        report.max_rel_error(),
        if report.passed() { "pass" } else { "fail" }
    ));
    emit(out, &s)?;
    if report.passed() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_NUMERIC,
            error: Error::Numeric(format!("gradient check failed, worst {:?}", report.worst().map(|w| &w.name))),
        })
    }
}

pub fn cmd_benchmark(common: &Common, out: &mut dyn Write) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let dir = common.out.clone();
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(io)?;
        snapshot(d, &cfg, None)?;
    }
    let report = run_interference_benchmark(&cfg, &mut |r| {
        eprintln!("{} seed {}: joint {:.2}", r.model, r.seed, r.accuracy.joint());
    })?;
    let tsv = report.to_tsv();
    if let Some(d) = &dir {
        fs::write(d.join("report.tsv"), &tsv).map_err(io)?;
        fs::write(d.join(METRICS_LOG), report.metrics_log()).map_err(io)?;
    }
    let joint = |m: &str| report.mean(m).map_or(f64::NAN, |a| a.joint());
    let mut s = tsv;
    s.push_str(&format!(
        "\ndisagreement\t{:.3}\ncontrols_converged\t{}\nsmoe_minus_base\t{:+.2}\nsmoe_minus_ffnx2\t{:+.2}\n",
        report.disagreement,
        report.controls_converged().map_or("n/a".into(), |c| c.to_string()),
        joint(DEC_SMOE) - joint(BASE),
        joint(DEC_SMOE) - joint(DEC_FFN_X2)
    ));
    if report.controls_converged() == Some(false) {
        s.push_str("warning: a single-task control missed its target; the spec is too hard for this budget\n");
    }
    emit(out, &s)
}
