//! Trainable versus active parameters for the baseline and expert
//! variants, at toy and full scale.

use smoe::model::{count_params, millions, ModelConfig};

fn main() {
    for (name, base) in [("toy", ModelConfig::toy()), ("paper", ModelConfig::paper())] {
        let base = ModelConfig { glu: false, ..base };
        println!("{name} preset (glu off, tied embeddings)");
        let variants = [
            ("Base", base.clone()),
            ("DecFFNx2", ModelConfig { dec_d_ff: Some(2 * base.d_ff), ..base.clone() }),
            ("DecS-MoE", ModelConfig { dec_smoe: true, ..base.clone() }),
            ("EncDecS-MoE", ModelConfig { enc_smoe: true, dec_smoe: true, ..base.clone() }),
        ];
        for (v, cfg) in &variants {
            let pc = count_params(cfg);
            println!(
                "  {v:<12} trainable {:>12} ({:>8})  active {:>12} ({:>8})",
                pc.trainable,
                millions(pc.trainable),
                pc.active,
                millions(pc.active)
            );
        }
        let untied = count_params(&ModelConfig { tie_embeddings: false, ..base.clone() });
        println!("  Base with an untied output projection: {}", millions(untied.trainable));
        for (part, n) in count_params(&base).breakdown {
            println!("    {part:<20} {n:>12}");
        }
    }
}
