//! Learns byte-pair merges from a small corpus, then builds guided target
//! sequences for both tasks and strips them back to text.

use smoe::seqio::{build_target_sequence, strip_guides, task_of, train_bpe, Language, Vocabulary};
use smoe::smoe::Task;

fn main() -> smoe::Result<()> {
    let corpus = ["the cat sat on the mat", "the dog sat on the log", "a cat and a dog"];
    let vocab = train_bpe(&corpus, 12)?;
    println!("{} merges, vocabulary size {}", vocab.n_merges(), vocab.size());
    for (a, b) in vocab.merges().iter().take(5) {
        println!("  merge {:?} + {:?}", String::from_utf8_lossy(a), String::from_utf8_lossy(b));
    }
    let text = "the cat sat";
    for (task, lang) in [(Task::Asr, Language::Ko), (Task::St, Language::En)] {
        let seq = build_target_sequence(task, lang, text.as_bytes(), &vocab);
        let back = vocab.decode(&strip_guides(seq.ids()))?;
        println!(
            "{task}: ids {:?} routed as {} -> {:?}",
            seq.ids(),
            task_of(seq.ids())?,
            String::from_utf8_lossy(&back)
        );
    }
    let restored = Vocabulary::from_text(&vocab.to_text())?;
    println!("round trip through text: {}", restored == vocab);
    Ok(())
}
