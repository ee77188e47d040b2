//! Label-driven routing: prints both gate truth tables, then runs a two-expert
//! layer and shows that only the selected expert is evaluated.

use smoe::nn::{FFNParams, Graph, ParamBuilder, Activation};
use smoe::numerics::{ParamStore, Tensor};
use smoe::rng::rng_for;
use smoe::smoe::{gate_decoder, gate_encoder, smoe_forward, Bandwidth, SMoELayer, Task};

fn main() -> smoe::Result<()> {
    for bw in [Bandwidth::Wb, Bandwidth::Nb] {
        println!("encoder  {bw}  -> {:?}", gate_encoder(bw).weights());
    }
    for task in [Task::St, Task::Asr] {
        println!("decoder  {task:<3} -> {:?}", gate_decoder(task).weights());
    }

    let mut store = ParamStore::new();
    let mut rng = rng_for(0, "init");
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let experts = (0..2)
        .map(|k| FFNParams::new(&mut pb.scope(&format!("expert.{k}")), 8, 16, true, Activation::Silu))
        .collect::<smoe::Result<Vec<_>>>()?;
    let layer = SMoELayer::new(experts)?;

    let x = Tensor::from_fn(&[3, 8], |i| (i as f64 * 0.37).sin())?;
    for task in [Task::Asr, Task::Asr, Task::St] {
        let mut g = Graph::eval(&store);
        let xv = g.tape.constant(&x);
        let y = smoe_forward(&mut g, &layer, &gate_decoder(task), xv)?;
        println!("{task:<3} output row 0 starts {:+.4}", g.tape.value(y)[0]);
    }
    println!("expert call counts {:?}", layer.call_counts());
    Ok(())
}
