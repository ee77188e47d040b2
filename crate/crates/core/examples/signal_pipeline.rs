//! Synthesizes a two-tone signal, converts it to narrowband, and compares
//! the log-Mel features of both versions band by band.

use smoe::signal::{band_mean, fbank, mel_centers, synth_wave, to_narrowband, ToneMix, Tone, LOG_FLOOR};

fn main() -> smoe::Result<()> {
    let mix = ToneMix {
        tones: vec![Tone { freq: 1000.0, amp: 0.4 }, Tone { freq: 6000.0, amp: 0.4 }],
        noise_std: 0.0,
    };
    let wb = synth_wave(&mix, 0, 1.0)?;
    let nb = to_narrowband(&wb)?;
    println!("WB {} samples @ {} Hz, NB {} samples @ {} Hz", wb.len(), wb.sample_rate(), nb.len(), nb.sample_rate());
    let fw = fbank(&wb)?;
    let fnb = fbank(&nb)?;
    println!("features {:?} (WB) and {:?} (NB)", fw.frames.shape(), fnb.frames.shape());
    println!("log floor {:.2}", LOG_FLOOR.ln());
    println!("{:>4} {:>9} {:>9} {:>9}", "bin", "Hz", "WB", "NB");
    for (m, hz) in mel_centers().iter().enumerate().step_by(8) {
        println!("{m:>4} {hz:>9.0} {:>9.2} {:>9.2}", band_mean(&fw, m), band_mean(&fnb, m));
    }
    Ok(())
}
