//! Trains a wideband-only donor with task-routed decoder experts, expands
//! its encoder FFNs into bandwidth-routed experts, fine-tunes on a mix of
//! wideband items and narrowband twins, and compares both conditions.
//!
//! ```text
//! cargo run --release --example nbwb_finetune -- [key=value ...]
//! ```
//!
//! Training keys prefixed `pre.` or `ft.` target the pretraining or
//! fine-tuning schedule, e.g. `ft.steps=200 ft.nbwb_mix_fraction=0.3`.

use std::time::Instant;

use smoe::model::parse_override;
use smoe::train::{run_nbwb_experiment, NbwbConfig};

fn main() -> smoe::Result<()> {
    let mut cfg = NbwbConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = parse_override(&arg)?;
        if !cfg.set(&k, &v)? {
            return Err(smoe::Error::Config(format!("unknown key `{k}`")));
        }
    }
    let start = Instant::now();
    let report = run_nbwb_experiment(&cfg, &mut |r| {
        eprintln!(
            "[{:>6.1}s] seed {}  donor WB {:6.2} NB {:6.2}  expanded WB {:6.2}  tuned WB {:6.2} NB {:6.2}  enc calls {:?}",
            start.elapsed().as_secs_f64(),
            r.seed,
            r.donor_wb,
            r.donor_nb,
            r.expanded_wb,
            r.tuned_wb,
            r.tuned_nb,
            r.encoder_calls[0]
        );
    })?;
    print!("{}", report.to_tsv());
    println!();
    println!("NB gain   {:+.2}", report.tuned_nb() - report.donor_nb());
    println!("WB change {:+.2}", report.tuned_wb() - report.donor_wb());
    Ok(())
}
