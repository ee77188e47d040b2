//! Word error rate with its alignment, BLEU with and without smoothing,
//! and token accuracy.

use smoe::metrics::{bleu_str, token_accuracy, wer_str, BleuOptions};

fn main() -> smoe::Result<()> {
    for (r, h) in [("a b c", "a b c"), ("a b c", "a x c"), ("a b c d", "a c d e"), ("a b c", "")] {
        let w = wer_str(r, h)?;
        let a = w.alignment;
        println!(
            "WER {r:?} vs {h:?}: {:.3} (S={} D={} I={})",
            w.rate, a.substitutions, a.deletions, a.insertions
        );
    }
    let plain = BleuOptions::default();
    let smooth = BleuOptions { smoothing: Some(1.0), ..plain };
    for (r, h) in [
        ("the cat sat on the mat", "the cat sat on the mat"),
        ("the cat sat", "the the the"),
        ("the cat sat on the mat", "the cat sat on a mat"),
    ] {
        println!(
            "BLEU {h:?}: {:.2} (smoothed {:.2})",
            bleu_str(&[r], h, &plain)?.score,
            bleu_str(&[r], h, &smooth)?.score
        );
    }
    let r: Vec<&str> = "a b c d".split(' ').collect();
    let h: Vec<&str> = "a b x d".split(' ').collect();
    println!("token accuracy {:.3}", token_accuracy(&r, &h)?);
    Ok(())
}
