//! Trains a small model on the synthetic task pair, then decodes held-out
//! audio with one two-row batch and with two single-task passes.

use smoe::seqio::Vocabulary;
use smoe::smoe::{Bandwidth, Task};
use smoe::model::Model;
use smoe::train::{
    examples_at, generate_items, train, BenchmarkConfig, StreamKind, TrainConfig,
};

fn main() -> smoe::Result<()> {
    let bench = BenchmarkConfig::default();
    let spec = &bench.spec;
    let vocab = Vocabulary::bytes_only();
    let train_items = generate_items(spec, 256, 1, 0.0)?;
    let data = examples_at(spec, &train_items, Bandwidth::Wb, &vocab)?;
    let cfg = smoe::model::ModelConfig { dec_smoe: true, ..bench.model.clone() };
    let mut model = Model::new(cfg, 1)?;
    let tc = TrainConfig { steps: 1000, ..bench.train.clone() };
    let log = train(&mut model, &data, StreamKind::Interleaved(tc.interleave), &tc)?;
    println!("final loss {:.4}", log.last().map_or(f64::NAN, |e| e.loss));

    let held_out = generate_items(spec, 5, 99, 0.0)?;
    for it in &held_out {
        let feats = smoe::signal::fbank(&it.wave)?;
        model.reset_call_counts();
        let (asr, st) = model.infer_dual(&feats, spec.asr_language, spec.st_language, 16)?;
        let dual_calls = model.decoder_call_counts();
        let a1 = model.infer_single(&feats, Task::Asr, spec.asr_language, 16)?;
        let s1 = model.infer_single(&feats, Task::St, spec.st_language, 16)?;
        println!(
            "ref {} / {}  dual {} / {}  single {} / {}  decoder calls {:?}",
            spec.transcript(&it.symbols),
            spec.translation(&it.symbols),
            vocab.decode_lossy(&asr.ids)?,
            vocab.decode_lossy(&st.ids)?,
            vocab.decode_lossy(&a1.ids)?,
            vocab.decode_lossy(&s1.ids)?,
            dual_calls[0]
        );
        assert_eq!((asr.ids, st.ids), (a1.ids, s1.ids));
    }
    Ok(())
}
