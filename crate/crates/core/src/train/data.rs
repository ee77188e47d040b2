use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::parse_value;
use crate::rng::{derive_seed, rng_for};
use crate::seqio::{build_target_sequence, Language, Vocabulary};
use crate::signal::{fbank, synth_segments, to_narrowband, Tone, ToneMix, Waveform};
use crate::smoe::{Bandwidth, Task};
use crate::train::batch::Example;

/// A pair of conflicting transformations over one input distribution.
///
/// Inputs are strings over an alphabet of `alphabet` symbols, each rendered
/// as a segment holding one low-band and one high-band tone. The ASR analog
/// emits the symbols as letters; the ST analog emits each symbol's image
/// under a fixed derangement.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub alphabet: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seg_seconds: f64,
    /// Low-band tone frequencies span this range, in Hz.
    pub low_band: (f64, f64),
    /// High-band tone frequencies span this range, in Hz.
    pub high_band: (f64, f64),
    pub low_amp: f64,
    pub high_amp: f64,
    pub noise_std: f64,
    /// `derangement[s]` is the ST image of symbol `s`.
    pub derangement: Vec<usize>,
    pub asr_language: Language,
    pub st_language: Language,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            alphabet: 16,
            min_len: 3,
            max_len: 5,
            seg_seconds: 0.05,
            low_band: (300.0, 3000.0),
            high_band: (4700.0, 7500.0),
            low_amp: 0.3,
            high_amp: 0.3,
            noise_std: 0.01,
            derangement: derangement(16, DERANGEMENT_SEED),
            asr_language: Language::Ko,
            st_language: Language::En,
        }
    }
}

const DERANGEMENT_SEED: u64 = 0x5eed;

/// A seeded permutation of `0..n` with no fixed points.
pub fn derangement(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, "derangement");
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(&mut rng);
        if p.iter().enumerate().all(|(i, &v)| i != v) {
            return p;
        }
    }
}

impl SyntheticTaskSpec {
    /// Applies one key. Returns `Ok(false)` if the key is not a spec key.
    /// Changing `alphabet` redraws the derangement; `derangement_seed`
    /// draws a different one.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "alphabet" => {
                self.alphabet = parse_value(key, value)?;
                self.derangement = derangement(self.alphabet, DERANGEMENT_SEED);
            }
            "derangement_seed" => self.derangement = derangement(self.alphabet, parse_value(key, value)?),
            "min_len" => self.min_len = parse_value(key, value)?,
            "max_len" => self.max_len = parse_value(key, value)?,
            "seg_seconds" => self.seg_seconds = parse_value(key, value)?,
            "low_amp" => self.low_amp = parse_value(key, value)?,
            "high_amp" => self.high_amp = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "derangement" => {
                self.derangement = value
                    .split(',')
                    .map(|v| parse_value(key, v.trim()))
                    .collect::<Result<_>>()?;
            }
            "asr_language" => self.asr_language = value.parse()?,
            "st_language" => self.st_language = value.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let d: Vec<String> = self.derangement.iter().map(usize::to_string).collect();
        [
            format!("alphabet = {}", self.alphabet),
            format!("derangement = {}", d.join(",")),
            format!("min_len = {}", self.min_len),
            format!("max_len = {}", self.max_len),
            format!("seg_seconds = {}", self.seg_seconds),
            format!("low_amp = {}", self.low_amp),
            format!("high_amp = {}", self.high_amp),
            format!("noise_std = {}", self.noise_std),
            format!("asr_language = {}", self.asr_language),
            format!("st_language = {}", self.st_language),
        ]
        .iter()
        .map(|l| format!("{l}\n"))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=26).contains(&self.alphabet) {
            return Err(Error::Config(format!("alphabet must be 2..=26, got {}", self.alphabet)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 0 < min_len <= max_len".into()));
        }
        let mut seen = vec![false; self.alphabet];
        if self.derangement.len() != self.alphabet {
            return Err(Error::Config("derangement length differs from the alphabet".into()));
        }
        for &v in &self.derangement {
            if v >= self.alphabet || std::mem::replace(&mut seen[v], true) {
                return Err(Error::Config("derangement is not a permutation".into()));
            }
        }
        Ok(())
    }

    fn letter(s: usize) -> char {
        (b'a' + s as u8) as char
    }

    pub fn transcript(&self, symbols: &[usize]) -> String {
        symbols.iter().map(|&s| Self::letter(s)).collect()
    }

    pub fn translation(&self, symbols: &[usize]) -> String {
        symbols.iter().map(|&s| Self::letter(self.derangement[s])).collect()
    }

    pub fn target_text(&self, task: Task, symbols: &[usize]) -> String {
        match task {
            Task::Asr => self.transcript(symbols),
            Task::St => self.translation(symbols),
        }
    }

    pub fn language(&self, task: Task) -> Language {
        match task {
            Task::Asr => self.asr_language,
            Task::St => self.st_language,
        }
    }

    fn band_freq(&self, band: (f64, f64), s: usize) -> f64 {
        band.0 + (band.1 - band.0) * s as f64 / (self.alphabet - 1) as f64
    }

    pub fn sample_symbols(&self, rng: &mut impl rand::Rng) -> Vec<usize> {
        let n = rng.random_range(self.min_len..=self.max_len);
        (0..n).map(|_| rng.random_range(0..self.alphabet)).collect()
    }

    /// Renders symbols to 16 kHz audio.
    pub fn render(&self, symbols: &[usize], seed: u64) -> Result<Waveform> {
        let segs: Vec<ToneMix> = symbols
            .iter()
            .map(|&s| ToneMix {
                tones: vec![
                    Tone {
                        freq: self.band_freq(self.low_band, s),
                        amp: self.low_amp,
                    },
                    Tone {
                        freq: self.band_freq(self.high_band, s),
                        amp: self.high_amp,
                    },
                ],
                noise_std: self.noise_std,
            })
            .collect();
        synth_segments(&segs, self.seg_seconds, seed)
    }

    /// Fraction of `n` sampled inputs on which the two tasks' targets differ.
    pub fn disagreement(&self, n: usize, seed: u64) -> f64 {
        let mut rng = rng_for(seed, "disagreement");
        let differ = (0..n)
            .filter(|_| {
                let x = self.sample_symbols(&mut rng);
                self.transcript(&x) != self.translation(&x)
            })
            .count();
        differ as f64 / n.max(1) as f64
    }
}

/// One synthetic utterance and its optional narrowband twin.
#[derive(Debug, Clone)]
pub struct SyntheticItem {
    pub symbols: Vec<usize>,
    pub wave: Waveform,
    pub nb: Option<Waveform>,
}

/// Which of `n` items get narrowband twins: `round(fraction·n)` of them,
/// chosen by `seed`, in ascending order.
pub fn nb_twin_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "nb-twins"));
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}

/// Generates `n` items; item `i` depends only on `(seed, i)`.
pub fn generate_items(spec: &SyntheticTaskSpec, n: usize, seed: u64, nb_fraction: f64) -> Result<Vec<SyntheticItem>> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&nb_fraction) {
        return Err(Error::Config(format!("nb fraction must be in [0, 1], got {nb_fraction}")));
    }
    let twins = nb_twin_indices(n, nb_fraction, seed);
    (0..n)
        .map(|i| {
            let item_seed = derive_seed(seed, &format!("item-{i}"));
            let symbols = spec.sample_symbols(&mut rng_for(item_seed, "symbols"));
            let wave = spec.render(&symbols, item_seed)?;
            let nb = if twins.binary_search(&i).is_ok() {
                Some(to_narrowband(&wave)?)
            } else {
                None
            };
            Ok(SyntheticItem { symbols, wave, nb })
        })
        .collect()
}

/// The ASR and ST examples of one waveform.
pub fn examples_for(spec: &SyntheticTaskSpec, symbols: &[usize], wave: &Waveform, vocab: &Vocabulary) -> Result<[Example; 2]> {
    let feats = fbank(wave)?;
    let make = |task: Task| {
        let text = spec.target_text(task, symbols);
        Example {
            feats: feats.clone(),
            target: build_target_sequence(task, spec.language(task), text.as_bytes(), vocab),
            text,
        }
    };
    Ok([make(Task::Asr), make(Task::St)])
}

/// Examples at one bandwidth. Items without a narrowband twin are
/// converted on the fly when `bandwidth` is NB.
pub fn examples_at(
    spec: &SyntheticTaskSpec,
    items: &[SyntheticItem],
    bandwidth: Bandwidth,
    vocab: &Vocabulary,
) -> Result<Vec<Example>> {
    let mut out = Vec::with_capacity(items.len() * 2);
    for it in items {
        let wave = match (bandwidth, &it.nb) {
            (Bandwidth::Wb, _) => it.wave.clone(),
            (Bandwidth::Nb, Some(nb)) => nb.clone(),
            (Bandwidth::Nb, None) => to_narrowband(&it.wave)?,
        };
        out.extend(examples_for(spec, &it.symbols, &wave, vocab)?);
    }
    Ok(out)
}

/// Every wideband example plus the examples of every narrowband twin.
pub fn mixed_examples(spec: &SyntheticTaskSpec, items: &[SyntheticItem], vocab: &Vocabulary) -> Result<Vec<Example>> {
    let mut out = examples_at(spec, items, Bandwidth::Wb, vocab)?;
    for it in items {
        if let Some(nb) = &it.nb {
            out.extend(examples_for(spec, &it.symbols, nb, vocab)?);
        }
    }
    Ok(out)
}
