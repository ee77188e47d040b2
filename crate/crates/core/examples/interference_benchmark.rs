//! Trains the shared-decoder baseline, a double-width decoder FFN and a
//! task-routed decoder expert bank on two conflicting synthetic tasks, and
//! prints the comparison table.
//!
//! ```text
//! cargo run --release --example interference_benchmark -- [key=value ...]
//! ```
//!
//! Keys cover the benchmark (`n_train`, `n_eval`, `seeds=0,1,2`,
//! `controls`), the task spec, the training schedule and the baseline model.

use std::time::Instant;

use smoe::model::parse_override;
use smoe::train::{run_interference_benchmark, BenchmarkConfig, BASE, DEC_FFN_X2, DEC_SMOE};

fn main() -> smoe::Result<()> {
    let mut cfg = BenchmarkConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = parse_override(&arg)?;
        if !cfg.set(&k, &v)? {
            return Err(smoe::Error::Config(format!("unknown key `{k}`")));
        }
    }
    let start = Instant::now();
    let report = run_interference_benchmark(&cfg, &mut |row| {
        eprintln!(
            "[{:>6.1}s] {:<12} seed {}  asr {:6.2}  st {:6.2}  joint {:6.2}",
            start.elapsed().as_secs_f64(),
            row.model,
            row.seed,
            row.accuracy.asr,
            row.accuracy.st,
            row.accuracy.joint()
        );
    })?;
    print!("{}", report.to_tsv());
    let joint = |m: &str| report.mean(m).map_or(f64::NAN, |a| a.joint());
    println!();
    println!("task disagreement   {:.3}", report.disagreement);
    println!("controls converged  {:?}", report.controls_converged());
    println!("S-MoE minus Base    {:+.2}", joint(DEC_SMOE) - joint(BASE));
    println!("S-MoE minus FFNx2   {:+.2}", joint(DEC_SMOE) - joint(DEC_FFN_X2));
    Ok(())
}
