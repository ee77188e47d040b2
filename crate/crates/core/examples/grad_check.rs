//! Finite-difference check of a full encoder-decoder with expert banks on
//! both sides, one sample per task and bandwidth.

use smoe::model::{Model, ModelConfig};
use smoe::nn::grad_check_graph;
use smoe::numerics::GradCheckOptions;
use smoe::seqio::Vocabulary;
use smoe::train::{examples_for, generate_items, SyntheticTaskSpec};

fn main() -> smoe::Result<()> {
    let cfg = ModelConfig {
        enc_smoe: true,
        dec_smoe: true,
        dropout: 0.0,
        ..ModelConfig::toy()
    };
    let mut model = Model::new(cfg, 7)?;
    let spec = SyntheticTaskSpec::default();
    let item = &generate_items(&spec, 1, 7, 1.0)?[0];
    let vocab = Vocabulary::bytes_only();
    let mut examples = examples_for(&spec, &item.symbols, &item.wave, &vocab)?.to_vec();
    examples.extend(examples_for(&spec, &item.symbols, item.nb.as_ref().expect("twin"), &vocab)?);

    let shape = model.clone();
    let opts = GradCheckOptions {
        tolerance: 1e-3,
        samples_per_param: Some(2),
        ..Default::default()
    };
    let report = grad_check_graph(
        &mut model.params,
        |g| {
            let mut losses = Vec::new();
            for ex in &examples {
                losses.push(shape.loss(g, &ex.feats, &ex.target)?.0);
            }
            let mut total = losses[0];
            for l in &losses[1..] {
                total = g.tape.add(total, *l)?;
            }
            Ok(total)
        },
        &opts,
    )?;
    for p in report.params.iter().filter(|p| p.name.contains("expert") || p.name == "embed") {
        println!("{:<32} {:.2e}", p.name, p.max_rel_error);
    }
    println!(
        "{} tensors, max relative error {:.2e}, {}",
        report.params.len(),
        report.max_rel_error(),
        if report.passed() { "pass" } else { "FAIL" }
    );
    Ok(())
}
