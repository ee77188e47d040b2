//! Dataset manifest: a `smoe-manifest v1` header line, then one
//! tab-separated record per line:
//!
//! ```text
//! <audio path>\t<NB|WB>\t<ASR|ST>\t<target text>
//! ```
//!
//! Audio paths are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::seqio::{build_target_sequence, Language, Vocabulary};
use crate::signal::{fbank, read_wav, FbankFeatures};
use crate::smoe::{Bandwidth, Task};
use crate::train::Example;

pub const HEADER: &str = "smoe-manifest v1";
pub const FILE_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub audio: PathBuf,
    pub bandwidth: Bandwidth,
    pub task: Task,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

fn clean(field: &str, what: &str) -> Result<()> {
    if field.is_empty() || field.contains(['\t', '\n', '\r']) {
        return Err(Error::Input(format!("{what} `{field}` is empty or holds a tab or newline")));
    }
    Ok(())
}

impl Manifest {
    pub fn to_text(&self) -> Result<String> {
        let mut s = format!("{HEADER}\n");
        for r in &self.records {
            let audio = r
                .audio
                .to_str()
                .ok_or_else(|| Error::Input(format!("audio path {:?} is not UTF-8", r.audio)))?;
            clean(audio, "audio path")?;
            clean(&r.text, "target text")?;
            s.push_str(&format!("{audio}\t{}\t{}\t{}\n", r.bandwidth, r.task, r.text));
        }
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::format("manifest", None, format!("line {line}: {msg}"));
        let mut lines = text.lines();
        match lines.next() {
            Some(HEADER) => {}
            other => return Err(err(1, format!("expected `{HEADER}`, got {other:?}"))),
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(n, format!("expected 4 tab-separated fields, got {}", f.len())));
            }
            records.push(ManifestRecord {
                audio: PathBuf::from(f[0]),
                bandwidth: f[1].parse().map_err(|e: Error| err(n, e.to_string()))?,
                task: f[2].parse().map_err(|e: Error| err(n, e.to_string()))?,
                text: f[3].to_owned(),
            });
        }
        Ok(Manifest { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Distinct audio files per bandwidth, as `(WB, NB)`.
    pub fn audio_counts(&self) -> (usize, usize) {
        let mut seen = BTreeMap::new();
        for r in &self.records {
            seen.insert(&r.audio, r.bandwidth);
        }
        let wb = seen.values().filter(|b| **b == Bandwidth::Wb).count();
        (wb, seen.len() - wb)
    }

    /// Reads every referenced file (relative to `dir`) once and builds the
    /// examples. A file whose sample rate disagrees with its record is an
    /// input error.
    pub fn load_examples(&self, dir: &Path, vocab: &Vocabulary, languages: (Language, Language)) -> Result<Vec<Example>> {
        let mut cache: BTreeMap<&Path, FbankFeatures> = BTreeMap::new();
        let mut out = Vec::with_capacity(self.records.len());
        for r in &self.records {
            if !cache.contains_key(r.audio.as_path()) {
                let path = dir.join(&r.audio);
                let wave = read_wav(&path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
                if wave.bandwidth() != r.bandwidth {
                    return Err(Error::Input(format!(
                        "{} is {} but the manifest says {}",
                        path.display(),
                        wave.bandwidth(),
                        r.bandwidth
                    )));
                }
                cache.insert(&r.audio, fbank(&wave)?);
            }
            let lang = match r.task {
                Task::Asr => languages.0,
                Task::St => languages.1,
            };
            out.push(Example {
                feats: cache[r.audio.as_path()].clone(),
                target: build_target_sequence(r.task, lang, r.text.as_bytes(), vocab),
                text: r.text.clone(),
            });
        }
        Ok(out)
    }
}
