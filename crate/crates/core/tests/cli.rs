use std::fs;
use std::path::Path;

use clap::Parser;

use smoe::cli::manifest::{Manifest, FILE_NAME};
use smoe::cli::{run, Cli, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC, RESOLVED_CONFIG};
use smoe::model::{checkpoint, count_params, Model, ModelConfig};
use smoe::smoe::{Bandwidth, Task};
use smoe::train::BenchmarkConfig;

const SMALL: &[&str] = &[
    "--set", "d_model=16",
    "--set", "d_ff=16",
    "--set", "n_heads=2",
    "--set", "n_enc_layers=1",
    "--set", "n_dec_layers=1",
    "--set", "steps=20",
    "--set", "batch_size=4",
];

fn smoe(args: &[&str]) -> (i32, String) {
    let cli = match Cli::try_parse_from(std::iter::once("smoe").chain(args.iter().copied())) {
        Ok(c) => c,
        Err(_) => return (EXIT_CONFIG, String::new()),
    };
    let mut out = Vec::new();
    let code = match run(cli, &mut out) {
        Ok(()) => 0,
        Err(e) => e.code,
    };
    (code, String::from_utf8(out).unwrap())
}

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn smoe_owned(args: &[String]) -> (i32, String) {
    smoe(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn datagen(dir: &Path, n: usize, seed: u64, extra: &[&str]) -> (i32, String) {
    let mut args = vec![
        "datagen".to_string(),
        "--n".into(),
        n.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--out".into(),
        dir.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    smoe_owned(&args)
}

fn trained(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    assert_eq!(datagen(&data, 12, 1, &[]).0, 0);
    let out = dir.join("run");
    let args = with(
        &["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()],
        SMALL,
    );
    let (code, text) = smoe_owned(&args);
    assert_eq!(code, 0, "{text}");
    out
}

#[test]
fn datagen_writes_the_configured_mix() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let (code, text) = datagen(&a, 100, 3, &[]);
    assert_eq!(code, 0);
    assert!(text.contains("100 WB and 15 NB"), "{text}");
    let m = Manifest::load(&a.join(FILE_NAME)).unwrap();
    assert_eq!(m.audio_counts(), (100, 15));
    assert_eq!(m.records.len(), 2 * 115);
    for task in Task::ALL {
        assert_eq!(m.records.iter().filter(|r| r.task == task).count(), 115);
    }
    assert_eq!(fs::read_dir(a.join("audio")).unwrap().count(), 115);
    assert_eq!(fs::read_dir(a.join("text")).unwrap().count(), 200);
    let nb = m.records.iter().find(|r| r.bandwidth == Bandwidth::Nb).unwrap();
    let wave = smoe::signal::read_wav(&a.join(&nb.audio)).unwrap();
    assert_eq!(wave.sample_rate(), 8000);

    let resolved = fs::read_to_string(a.join(RESOLVED_CONFIG)).unwrap();
    let cfg = BenchmarkConfig::from_text(&resolved).unwrap();
    assert_eq!(cfg.train.seed, 3);
    assert_eq!(cfg.seeds, vec![3]);
}

#[test]
fn datagen_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (d, seed) in [(&a, 5), (&b, 5), (&c, 6)] {
        assert_eq!(datagen(d, 10, seed, &[]).0, 0);
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, FILE_NAME), read(&b, FILE_NAME));
    assert_eq!(read(&a, "audio/item-00003-wb.wav"), read(&b, "audio/item-00003-wb.wav"));
    assert_ne!(read(&a, "audio/item-00003-wb.wav"), read(&c, "audio/item-00003-wb.wav"));
}

#[test]
fn datagen_without_narrowband_share() {
    let tmp = tempfile::tempdir().unwrap();
    let (code, _) = datagen(tmp.path(), 20, 0, &["--set", "nbwb_mix_fraction=0"]);
    assert_eq!(code, 0);
    let m = Manifest::load(&tmp.path().join(FILE_NAME)).unwrap();
    assert_eq!(m.audio_counts(), (20, 0));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(datagen(tmp.path(), 2, 0, &["--set", "no_such_key=1"]).0, EXIT_CONFIG);
    assert_eq!(datagen(tmp.path(), 2, 0, &["--set", "d_model=abc"]).0, EXIT_CONFIG);
    assert_eq!(datagen(tmp.path(), 2, 0, &["--set", "missing-equals"]).0, EXIT_CONFIG);
    assert_eq!(smoe(&["inspect", "--set", "n_heads=3"]).0, EXIT_CONFIG);
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "steps = 10\nbogus = 2\n").unwrap();
    assert_eq!(smoe(&["inspect", "--config", bad.to_str().unwrap()]).0, EXIT_CONFIG);
    assert_eq!(smoe(&["inspect", "--config", "/nonexistent/file.cfg"]).0, EXIT_CONFIG);
    assert_eq!(smoe(&["no-such-command"]).0, EXIT_CONFIG);
}

#[test]
fn config_file_then_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "preset = toy\nd_ff = 40\ndec_smoe = true\n").unwrap();
    let (code, text) = smoe(&["inspect", "--config", cfg.to_str().unwrap(), "--set", "d_ff=48"]);
    assert_eq!(code, 0);
    let want = count_params(&ModelConfig {
        d_ff: 48,
        dec_smoe: true,
        ..ModelConfig::toy()
    });
    assert!(text.starts_with(&format!("trainable\t{}\nactive\t{}\n", want.trainable, want.active)), "{text}");
}

#[test]
fn inspect_reports_active_parity() {
    let field = |text: &str, key: &str| -> usize {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}\t")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let (code, base) = smoe(&["inspect", "--set", "preset=paper", "--set", "glu=false"]);
    assert_eq!(code, 0);
    assert_eq!(field(&base, "trainable"), field(&base, "active"));
    assert_eq!(field(&base, "idle"), 0);
    for extra in [&["--set", "dec_smoe=true"][..], &["--set", "dec_smoe=true", "--set", "enc_smoe=true"]] {
        let args = with(&["inspect", "--set", "preset=paper", "--set", "glu=false"], extra);
        let (code, text) = smoe_owned(&args);
        assert_eq!(code, 0);
        assert_eq!(field(&text, "active"), field(&base, "trainable"));
        assert!(field(&text, "trainable") > field(&base, "trainable"));
        assert!(text.contains("x 2 experts"), "{text}");
    }
}

#[test]
fn train_eval_and_infer_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = trained(tmp.path());
    let ckpt = run_dir.join("model.ckpt");
    let log = fs::read_to_string(run_dir.join("metrics.log")).unwrap();
    assert_eq!(log.lines().count(), 20);
    for (i, line) in log.lines().enumerate() {
        let task = if i % 2 == 0 { 'A' } else { 'S' };
        assert!(line.starts_with(&format!("step={i} task={task} lr=")), "{line}");
        assert!(line.contains(" loss="));
    }
    let ck = checkpoint::load(&ckpt).unwrap();
    assert_eq!(ck.step, 20);
    assert_eq!(ck.model.config.d_model, 16);
    let resolved = BenchmarkConfig::from_text(&fs::read_to_string(run_dir.join(RESOLVED_CONFIG)).unwrap()).unwrap();
    assert_eq!(resolved.model, ck.model.config);

    let data = tmp.path().join("data");
    let (code, eval) = smoe(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = eval.lines().collect();
    assert_eq!(rows[0], "task\tbandwidth\tn\ttoken_acc\twer\tbleu");
    assert_eq!(rows.len(), 5, "{eval}");
    let (code, nb_only) = smoe(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--bandwidth",
        "nb",
    ]);
    assert_eq!(code, 0);
    assert!(nb_only.lines().skip(1).all(|l| l.split('\t').nth(1) == Some("NB")), "{nb_only}");

    let audio = data.join("audio/item-00000-wb.wav");
    let base = ["infer", "--checkpoint", ckpt.to_str().unwrap(), "--audio", audio.to_str().unwrap()];
    let (code, dual) = smoe(&base);
    assert_eq!(code, 0);
    let (_, asr) = smoe(&with(&base, &["--single-task", "asr"]).iter().map(String::as_str).collect::<Vec<_>>());
    let (_, st) = smoe(&with(&base, &["--single-task", "st"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(dual, format!("{asr}{st}"));
    assert!(dual.starts_with("ASR: ") && dual.contains("\nST: "));
}

#[test]
fn finetune_nbwb_routes_by_bandwidth() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = trained(tmp.path());
    let out = tmp.path().join("ft");
    let args = [
        "finetune-nbwb",
        "--checkpoint",
        run_dir.join("model.ckpt").to_str().unwrap(),
        "--data",
        tmp.path().join("data").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "steps=5",
    ]
    .map(str::to_owned);
    let (code, text) = smoe_owned(&args);
    assert_eq!(code, 0, "{text}");
    let tuned = checkpoint::load(&out.join("model.ckpt")).unwrap().model;
    assert!(tuned.config.enc_smoe);
    assert!(!tuned.config.dec_smoe);
    assert!(text.contains("encoder expert calls"), "{text}");
}

#[test]
fn checkpoint_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(datagen(&data, 2, 0, &[]).0, 0);
    let audio = data.join("audio/item-00000-wb.wav");
    let missing = tmp.path().join("missing.ckpt");
    let (code, _) = smoe(&["infer", "--checkpoint", missing.to_str().unwrap(), "--audio", audio.to_str().unwrap()]);
    assert_eq!(code, EXIT_CHECKPOINT);

    let m = Model::new(ModelConfig::toy(), 0).unwrap();
    let mut bytes = checkpoint::to_bytes(&m, 0);
    bytes.truncate(bytes.len() / 2);
    let broken = tmp.path().join("broken.ckpt");
    fs::write(&broken, bytes).unwrap();
    let (code, _) = smoe(&["eval", "--checkpoint", broken.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(code, EXIT_CHECKPOINT);
    assert_eq!(smoe(&["inspect", "--checkpoint", broken.to_str().unwrap()]).0, EXIT_CHECKPOINT);
}

#[test]
fn input_errors_exit_three() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    checkpoint::save(&ckpt, &Model::new(ModelConfig::toy(), 0).unwrap(), 0).unwrap();
    let missing = tmp.path().join("missing.wav");
    let (code, _) = smoe(&["infer", "--checkpoint", ckpt.to_str().unwrap(), "--audio", missing.to_str().unwrap()]);
    assert_eq!(code, EXIT_INPUT);

    let notwav = tmp.path().join("x.wav");
    fs::write(&notwav, b"RIFF nonsense").unwrap();
    let (code, _) = smoe(&["infer", "--checkpoint", ckpt.to_str().unwrap(), "--audio", notwav.to_str().unwrap()]);
    assert_eq!(code, EXIT_INPUT);

    let data = tmp.path().join("data");
    assert_eq!(datagen(&data, 2, 0, &[]).0, 0);
    let eval = |dir: &Path| smoe(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", dir.to_str().unwrap()]).0;
    let manifest = data.join(FILE_NAME);
    let good = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, good.replace("\tWB\t", "\tXB\t")).unwrap();
    assert_eq!(eval(&data), EXIT_INPUT);
    fs::write(&manifest, good.replacen("\tWB\t", "\tNB\t", 1)).unwrap();
    assert_eq!(eval(&data), EXIT_INPUT);
    assert_eq!(eval(&tmp.path().join("nowhere")), EXIT_INPUT);
}

#[test]
fn gradcheck_passes_on_a_small_model() {
    let args = with(&["gradcheck", "--samples", "2", "--set", "dec_smoe=true", "--set", "enc_smoe=true"], SMALL);
    let (code, text) = smoe_owned(&args);
    assert_eq!(code, 0, "{text}");
    assert!(text.trim_end().ends_with("pass"), "{text}");
    let strict = with(&["gradcheck", "--tolerance", "0", "--samples", "1"], SMALL);
    assert_eq!(smoe_owned(&strict).0, EXIT_NUMERIC);
}
