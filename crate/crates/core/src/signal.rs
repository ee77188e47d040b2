//! Synthetic audio, NB simulation by 2:1 decimation, log-Mel filterbanks,
//! and 16-bit PCM WAV interchange.

use std::f64::consts::PI;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::rng_for;
use crate::smoe::Bandwidth;

pub const WB_RATE: u32 = 16_000;
pub const NB_RATE: u32 = 8_000;
/// 25 ms at 16 kHz.
pub const WINDOW: usize = 400;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MAX_SECONDS: f64 = 30.0;
pub const MAX_FRAMES: usize = 3000;
/// Resampling lowpass: order 63, cutoff as a fraction of the 16 kHz Nyquist.
pub const FIR_ORDER: usize = 63;
pub const FIR_CUTOFF: f64 = 0.475;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Bandwidth::from_sample_rate(sample_rate)?;
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Input(format!("sample {i} is outside [-1, 1]")));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn bandwidth(&self) -> Bandwidth {
        Bandwidth::from_sample_rate(self.sample_rate).expect("validated at construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tone {
    pub freq: f64,
    pub amp: f64,
}

/// Sum of sinusoids plus white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToneMix {
    pub tones: Vec<Tone>,
    pub noise_std: f64,
}

impl ToneMix {
    pub fn tone(freq: f64, amp: f64) -> Self {
        ToneMix {
            tones: vec![Tone { freq, amp }],
            noise_std: 0.0,
        }
    }
}

const PEAK: f64 = 0.95;

/// Renders consecutive segments of `seg_seconds` each at 16 kHz. Phases run
/// continuously per segment start; output is scaled down if its peak
/// exceeds 0.95.
pub fn synth_segments(segments: &[ToneMix], seg_seconds: f64, seed: u64) -> Result<Waveform> {
    if segments.is_empty() {
        return Err(Error::Config("no segments to synthesize".into()));
    }
    if segments.iter().any(|s| s.tones.is_empty() && s.noise_std == 0.0) {
        return Err(Error::Config("tone mixture has no tones and no noise".into()));
    }
    if !(seg_seconds > 0.0) {
        return Err(Error::Config(format!("duration must be positive, got {seg_seconds}")));
    }
    let per = (seg_seconds * WB_RATE as f64).round() as usize;
    if per == 0 {
        return Err(Error::Config("duration is shorter than one sample".into()));
    }
    let mut rng = rng_for(seed, "synth");
    let mut out = Vec::with_capacity(per * segments.len());
    for seg in segments {
        let noise = Normal::new(0.0, seg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for n in 0..per {
            let t = n as f64 / WB_RATE as f64;
            let mut v: f64 = seg.tones.iter().map(|tn| tn.amp * (2.0 * PI * tn.freq * t).sin()).sum();
            if seg.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            out.push(v);
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK {
        let k = PEAK / peak;
        out.iter_mut().for_each(|v| *v *= k);
    }
    Waveform::new(out, WB_RATE)
}

pub fn synth_wave(spec: &ToneMix, seed: u64, duration_s: f64) -> Result<Waveform> {
    synth_segments(std::slice::from_ref(spec), duration_s, seed)
}

/// Hamming-windowed sinc lowpass with unit DC gain.
pub fn lowpass_taps(order: usize, cutoff: f64) -> Vec<f64> {
    let m = order as f64;
    let fc = cutoff / 2.0; // cycles per sample
    let mut h: Vec<f64> = (0..=order)
        .map(|n| {
            let x = n as f64 - m / 2.0;
            let sinc = if x == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * x).sin() / (PI * x) };
            let w = 0.54 - 0.46 * (2.0 * PI * n as f64 / m).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// `y[n] = Σ h[j]·x[n + d − j]` with `d = ⌈order/2⌉`, zero-padded.
fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = h.len() / 2;
    (0..x.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .filter_map(|(j, hj)| (n + d).checked_sub(j).and_then(|k| x.get(k)).map(|xk| hj * xk))
                .sum()
        })
        .collect()
}

/// Anti-alias lowpass at 3.8 kHz then keep every second sample.
pub fn to_narrowband(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != WB_RATE {
        return Err(Error::Contract(format!(
            "narrowband conversion needs 16 kHz input, got {} Hz",
            w.sample_rate
        )));
    }
    let h = lowpass_taps(FIR_ORDER, FIR_CUTOFF);
    let y = filter_centered(&w.samples, &h);
    let out = y.iter().step_by(2).take(w.len() / 2).map(|v| v.clamp(-1.0, 1.0)).collect();
    Waveform::new(out, NB_RATE)
}

/// Zero-insertion, the same lowpass, and ×2 gain.
pub fn to_wideband(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate != NB_RATE {
        return Err(Error::Contract(format!(
            "wideband conversion needs 8 kHz input, got {} Hz",
            w.sample_rate
        )));
    }
    let mut up = vec![0.0; w.len() * 2];
    for (i, s) in w.samples.iter().enumerate() {
        up[2 * i] = 2.0 * s;
    }
    let h = lowpass_taps(FIR_ORDER, FIR_CUTOFF);
    let out = filter_centered(&up, &h).into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Waveform::new(out, WB_RATE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbankFeatures {
    /// `[n_frames × 80]` natural-log Mel energies.
    pub frames: Tensor,
    pub bandwidth: Bandwidth,
}

impl FbankFeatures {
    pub fn n_frames(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// `1 + ⌊(n − 400) / 160⌋` for `n ≥ 400`.
pub fn frame_count(n_samples: usize) -> Option<usize> {
    (n_samples >= WINDOW).then(|| 1 + (n_samples - WINDOW) / HOP)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the `N_FFT/2 + 1` power bins, `[80 × 257]`.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let top = hz_to_mel(WB_RATE as f64 / 2.0);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = WB_RATE as f64 / N_FFT as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=N_FFT / 2)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Centre frequency of each Mel filter in Hz.
pub fn mel_centers() -> Vec<f64> {
    let top = hz_to_mel(WB_RATE as f64 / 2.0);
    (1..=N_MELS)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// 80-dim log-Mel features. NB input is first brought to 16 kHz with
/// [`to_wideband`] so every input shares one frame geometry.
pub fn fbank(w: &Waveform) -> Result<FbankFeatures> {
    let bandwidth = w.bandwidth();
    let wide;
    let x = match bandwidth {
        Bandwidth::Wb => w.samples(),
        Bandwidth::Nb => {
            wide = to_wideband(w)?;
            wide.samples()
        }
    };
    if w.duration() > MAX_SECONDS {
        return Err(Error::Limit(format!(
            "audio is {:.2} s, longer than the {MAX_SECONDS} s limit",
            w.duration()
        )));
    }
    let n_frames = frame_count(x.len()).ok_or(Error::TooShort {
        samples: x.len(),
        window: WINDOW,
    })?;
    if n_frames > MAX_FRAMES {
        return Err(Error::Limit(format!("{n_frames} frames exceed the {MAX_FRAMES} cap")));
    }
    let window = hann(WINDOW);
    let filters = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(N_FFT);
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = vec![0.0; N_FFT / 2 + 1];
    let mut data = Vec::with_capacity(n_frames * N_MELS);
    for f in 0..n_frames {
        let frame = &x[f * HOP..f * HOP + WINDOW];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < WINDOW { frame[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for filt in &filters {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            data.push(e.max(LOG_FLOOR).ln());
        }
    }
    Ok(FbankFeatures {
        frames: Tensor::matrix(n_frames, N_MELS, data)?,
        bandwidth,
    })
}

/// 16-bit PCM mono.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |e: hound::Error| Error::Input(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in &w.samples {
        writer
            .write_sample((s * i16::MAX as f64).round() as i16)
            .map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Input(format!("{}: {other}", path.display())),
    };
    let reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Input(format!(
            "{}: expected 16-bit PCM mono, got {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| (v as f64 / i16::MAX as f64).max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Waveform::new(samples, spec.sample_rate)
}

/// Mean log energy of Mel bin `m` over all frames.
pub fn band_mean(f: &FbankFeatures, m: usize) -> f64 {
    let n = f.n_frames();
    (0..n).map(|t| f.frames.at(t, m)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    /// O(n²) DFT power at integer bin `k`.
    fn dft_power(x: &[f64], k: usize) -> f64 {
        let n = x.len() as f64;
        let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
            let a = -2.0 * PI * k as f64 * i as f64 / n;
            (re + v * a.cos(), im + v * a.sin())
        });
        re * re + im * im
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    /// Steady-state slice, away from filter edge effects.
    fn interior(x: &[f64]) -> &[f64] {
        &x[64..x.len() - 64]
    }

    #[test]
    fn pure_tone_peaks_at_its_frequency() {
        let w = synth_wave(&ToneMix::tone(440.0, 0.5), 1, 1.0).unwrap();
        assert_eq!(w.len(), 16_000);
        // 1 s at 16 kHz: bin k is k Hz
        let best = (400..480).max_by(|&a, &b| dft_power(w.samples(), a).total_cmp(&dft_power(w.samples(), b)));
        assert_eq!(best, Some(440));
    }

    #[test]
    fn synth_is_deterministic_and_bounded() {
        let spec = ToneMix {
            tones: vec![Tone { freq: 300.0, amp: 2.0 }, Tone { freq: 5000.0, amp: 1.0 }],
            noise_std: 0.1,
        };
        let a = synth_wave(&spec, 9, 0.2).unwrap();
        assert_eq!(a, synth_wave(&spec, 9, 0.2).unwrap());
        assert_ne!(a, synth_wave(&spec, 10, 0.2).unwrap());
        assert!(a.samples().iter().all(|v| v.abs() <= 0.95 + 1e-12));
        let z = synth_wave(&ToneMix::tone(440.0, 0.0), 1, 0.1).unwrap();
        assert!(z.samples().iter().all(|v| *v == 0.0));
        assert!(synth_wave(&ToneMix::default(), 1, 0.1).is_err());
        assert!(synth_wave(&ToneMix::tone(1.0, 1.0), 1, 0.0).is_err());
    }

    #[test]
    fn narrowband_length_and_rate() {
        let w = synth_wave(&ToneMix::tone(1000.0, 0.5), 1, 2.0).unwrap();
        let nb = to_narrowband(&w).unwrap();
        assert_eq!(nb.len(), 16_000);
        assert_eq!(nb.sample_rate(), 8000);
        assert_eq!(nb.bandwidth(), Bandwidth::Nb);
        assert!(matches!(to_narrowband(&nb), Err(Error::Contract(_))));
        assert!(to_wideband(&w).is_err());
    }

    #[test]
    fn narrowband_keeps_1k_and_removes_6k() {
        let low = synth_wave(&ToneMix::tone(1000.0, 0.5), 1, 1.0).unwrap();
        let nb = to_narrowband(&low).unwrap();
        // amplitude from energy: A = sqrt(2·E/n)
        let amp = |x: &[f64]| (2.0 * energy(x) / x.len() as f64).sqrt();
        let ratio = amp(interior(nb.samples())) / amp(interior(low.samples()));
        assert!((ratio - 1.0).abs() < 0.05, "{ratio}");

        let high = synth_wave(&ToneMix::tone(6000.0, 0.5), 1, 1.0).unwrap();
        let nb = to_narrowband(&high).unwrap();
        // per-sample energy, since the output has half the samples
        let e_in = energy(interior(high.samples())) / (high.len() - 128) as f64;
        let e_out = energy(interior(nb.samples())) / (nb.len() - 128) as f64;
        assert!(e_out < 0.01 * e_in, "{e_out} vs {e_in}");
    }

    #[test]
    fn narrowband_features_lose_the_high_band() {
        let spec = ToneMix {
            tones: vec![
                Tone { freq: 500.0, amp: 0.2 },
                Tone { freq: 1500.0, amp: 0.2 },
                Tone { freq: 5500.0, amp: 0.2 },
            ],
            noise_std: 0.05,
        };
        let w = synth_wave(&spec, 1, 1.0).unwrap();
        let wb = fbank(&w).unwrap();
        let nb = fbank(&to_narrowband(&w).unwrap()).unwrap();
        let floor = LOG_FLOOR.ln();
        let (mut high_wb, mut high_nb, mut n_high) = (0.0, 0.0, 0.0);
        for (m, centre) in mel_centers().into_iter().enumerate() {
            let (a, b) = (band_mean(&wb, m), band_mean(&nb, m));
            if centre < 3300.0 {
                assert!(((b - a).exp() - 1.0).abs() < 0.10, "bin {m}: {a} vs {b}");
            } else if centre >= 4500.0 {
                assert!(a - b > 10.0, "bin {m}: {a} vs {b}");
                high_wb += a;
                high_nb += b;
                n_high += 1.0;
            }
        }
        let (high_wb, high_nb) = (high_wb / n_high, high_nb / n_high);
        assert!(high_nb - floor <= 0.5 * (high_wb - floor), "{high_nb} vs {high_wb}");
    }

    #[test]
    fn lowpass_is_symmetric_with_unit_dc() {
        let h = lowpass_taps(FIR_ORDER, FIR_CUTOFF);
        assert_eq!(h.len(), 64);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..32 {
            assert!((h[i] - h[63 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn fbank_frame_geometry() {
        let w = synth_wave(&ToneMix::tone(440.0, 0.3), 1, 1.0).unwrap();
        let f = fbank(&w).unwrap();
        assert_eq!(f.frames.shape(), &[98, 80]);
        assert!(f.frames.all_finite());
        for n in [400, 401, 559, 560, 561, 4000] {
            let w = Waveform::new(vec![0.1; n], WB_RATE).unwrap();
            assert_eq!(fbank(&w).unwrap().n_frames(), 1 + (n - 400) / 160);
        }
        let short = Waveform::new(vec![0.0; 399], WB_RATE).unwrap();
        assert!(matches!(fbank(&short), Err(Error::TooShort { .. })));
        let long = Waveform::new(vec![0.0; 16_000 * 30 + 1], WB_RATE).unwrap();
        assert!(matches!(fbank(&long), Err(Error::Limit(_))));
        let nb = to_narrowband(&w).unwrap();
        assert_eq!(fbank(&nb).unwrap().n_frames(), 98);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let w = Waveform::new(vec![0.0; 1600], WB_RATE).unwrap();
        let f = fbank(&w).unwrap();
        assert!(f.frames.data().iter().all(|v| *v == LOG_FLOOR.ln()));
    }

    #[test]
    fn fbank_matches_naive_dft() {
        let w = synth_wave(
            &ToneMix {
                tones: vec![Tone { freq: 700.0, amp: 0.3 }],
                noise_std: 0.05,
            },
            4,
            0.05,
        )
        .unwrap();
        let f = fbank(&w).unwrap();
        let win = hann(WINDOW);
        let filters = mel_filterbank();
        for frame in [0, f.n_frames() - 1] {
            let mut padded = vec![0.0; N_FFT];
            for i in 0..WINDOW {
                padded[i] = w.samples()[frame * HOP + i] * win[i];
            }
            let power: Vec<f64> = (0..=N_FFT / 2).map(|k| dft_power(&padded, k)).collect();
            for (m, filt) in filters.iter().enumerate() {
                let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
                let want = e.max(LOG_FLOOR).ln();
                assert!((f.frames.at(frame, m) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mel_filters_cover_the_band() {
        let filters = mel_filterbank();
        assert_eq!(filters.len(), 80);
        assert!(filters.iter().all(|f| f.len() == 257 && f.iter().any(|v| *v > 0.0)));
        assert!((hz_to_mel(mel_to_hz(1234.5)) - 1234.5).abs() < 1e-9);
        assert!((hz_to_mel(1000.0) - 1000.0).abs() < 0.1);
    }

    #[test]
    fn wav_round_trip() {
        let w = synth_wave(&ToneMix::tone(300.0, 0.5), 2, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.sample_rate(), WB_RATE);
        assert_eq!(r.len(), w.len());
        for (a, b) in r.samples().iter().zip(w.samples()) {
            assert!((a - b).abs() <= 0.5 / i16::MAX as f64 + 1e-12);
        }
        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
        std::fs::write(dir.path().join("bad.wav"), b"not a wav").unwrap();
        assert!(matches!(read_wav(&dir.path().join("bad.wav")), Err(Error::Input(_))));
    }
}
