//! Guiding tokens, a byte-level BPE tokenizer, and target sequences of the
//! form `[task tag, language tag, BOS] ++ payload ++ [EOS]`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::smoe::Task;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const TRANSCRIBE: u32 = 3;
pub const TRANSLATE: u32 = 4;
pub const LANG_EN: u32 = 5;
pub const LANG_KO: u32 = 6;
/// Ids 7..16 are reserved and never emitted.
pub const N_RESERVED: u32 = 16;
/// Byte `b` has id `BYTE_BASE + b`.
pub const BYTE_BASE: u32 = N_RESERVED;
/// Merge of rank `r` has id `MERGE_BASE + r`.
pub const MERGE_BASE: u32 = BYTE_BASE + 256;
/// Length of the guiding prefix `[task, language, BOS]`.
pub const PREFIX_LEN: usize = 3;

const VOCAB_MAGIC: &str = "smoe-vocab v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GuidingToken {
    Pad,
    Bos,
    Eos,
    Transcribe,
    Translate,
    LangEn,
    LangKo,
}

impl GuidingToken {
    pub const ALL: [GuidingToken; 7] = [
        GuidingToken::Pad,
        GuidingToken::Bos,
        GuidingToken::Eos,
        GuidingToken::Transcribe,
        GuidingToken::Translate,
        GuidingToken::LangEn,
        GuidingToken::LangKo,
    ];

    pub fn id(self) -> u32 {
        match self {
            GuidingToken::Pad => PAD,
            GuidingToken::Bos => BOS,
            GuidingToken::Eos => EOS,
            GuidingToken::Transcribe => TRANSCRIBE,
            GuidingToken::Translate => TRANSLATE,
            GuidingToken::LangEn => LANG_EN,
            GuidingToken::LangKo => LANG_KO,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.id() == id)
    }

    pub fn task_tag(task: Task) -> Self {
        match task {
            Task::Asr => GuidingToken::Transcribe,
            Task::St => GuidingToken::Translate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GuidingToken::Pad => "<pad>",
            GuidingToken::Bos => "<bos>",
            GuidingToken::Eos => "<eos>",
            GuidingToken::Transcribe => "<transcribe>",
            GuidingToken::Translate => "<translate>",
            GuidingToken::LangEn => "<en>",
            GuidingToken::LangKo => "<ko>",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Language {
    En,
    Ko,
}

impl Language {
    pub fn tag(self) -> GuidingToken {
        match self {
            Language::En => GuidingToken::LangEn,
            Language::Ko => GuidingToken::LangKo,
        }
    }

    fn from_tag(id: u32) -> Option<Self> {
        match id {
            LANG_EN => Some(Language::En),
            LANG_KO => Some(Language::Ko),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::En => "en",
            Language::Ko => "ko",
        })
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "en" | "EN" => Ok(Language::En),
            "ko" | "KO" => Ok(Language::Ko),
            other => Err(Error::Config(format!("unknown language `{other}`"))),
        }
    }
}

/// Byte-level BPE vocabulary. Merge rules are keyed by the byte strings of
/// their two sides, so the on-disk form fully determines encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    ranks: HashMap<(Vec<u8>, Vec<u8>), u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::bytes_only()
    }
}

impl Vocabulary {
    pub fn bytes_only() -> Self {
        Vocabulary {
            merges: Vec::new(),
            ranks: HashMap::new(),
        }
    }

    pub fn from_merges(merges: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (r, (a, b)) in merges.iter().enumerate() {
            if a.is_empty() || b.is_empty() {
                return Err(Error::Config(format!("merge {r} has an empty side")));
            }
            if ranks.insert((a.clone(), b.clone()), r as u32).is_some() {
                return Err(Error::Config(format!("merge {r} duplicates an earlier rule")));
            }
        }
        Ok(Vocabulary { merges, ranks })
    }

    pub fn merges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.merges
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn size(&self) -> usize {
        MERGE_BASE as usize + self.merges.len()
    }

    /// Bytes spelled by a payload id.
    pub fn piece(&self, id: u32) -> Result<Vec<u8>> {
        if id < BYTE_BASE || id as usize >= self.size() {
            return Err(Error::Index {
                what: "payload token id",
                index: id as usize,
                bound: self.size(),
            });
        }
        if id < MERGE_BASE {
            return Ok(vec![(id - BYTE_BASE) as u8]);
        }
        let (a, b) = &self.merges[(id - MERGE_BASE) as usize];
        Ok([a.as_slice(), b.as_slice()].concat())
    }

    pub fn encode(&self, text: &[u8]) -> Vec<u32> {
        let mut pieces: Vec<(u32, Vec<u8>)> = text.iter().map(|&b| (BYTE_BASE + b as u32, vec![b])).collect();
        while pieces.len() > 1 {
            let best = pieces
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].1.clone(), w[1].1.clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank as usize];
            pieces = apply_merge(pieces, a, b, MERGE_BASE + rank);
        }
        pieces.into_iter().map(|(id, _)| id).collect()
    }

    /// Inverse of [`Vocabulary::encode`]; guiding ids are rejected.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend(self.piece(id)?);
        }
        Ok(out)
    }

    /// Payload as text, invalid UTF-8 replaced.
    pub fn decode_lossy(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode(ids)?).into_owned())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{VOCAB_MAGIC} merges={}\n", self.merges.len());
        for (a, b) in &self.merges {
            s.push_str(&hex(a));
            s.push('\t');
            s.push_str(&hex(b));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "vocabulary";
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format(ctx, None, "empty file"))?;
        let n: usize = header
            .strip_prefix(VOCAB_MAGIC)
            .and_then(|r| r.trim().strip_prefix("merges="))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::format(ctx, None, format!("bad header `{header}`")))?;
        let mut merges = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let entry = format!("merge {i}");
            let (a, b) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(ctx, Some(&entry), "expected two tab-separated fields"))?;
            let a = unhex(a).map_err(|m| Error::format(ctx, Some(&entry), m))?;
            let b = unhex(b).map_err(|m| Error::format(ctx, Some(&entry), m))?;
            merges.push((a, b));
        }
        if merges.len() != n {
            return Err(Error::format(
                ctx,
                None,
                format!("header declares {n} merges, found {}", merges.len()),
            ));
        }
        Self::from_merges(merges).map_err(|e| Error::format(ctx, None, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn apply_merge(pieces: Vec<(u32, Vec<u8>)>, a: &[u8], b: &[u8], id: u32) -> Vec<(u32, Vec<u8>)> {
    let mut out = Vec::with_capacity(pieces.len());
    let mut it = pieces.into_iter().peekable();
    while let Some(cur) = it.next() {
        if cur.1 == a && it.peek().is_some_and(|next| next.1 == b) {
            let next = it.next().expect("peeked");
            out.push((id, [cur.1, next.1].concat()));
        } else {
            out.push(cur);
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> std::result::Result<Vec<u8>, String> {
    if s.is_empty() || !s.len().is_multiple_of(2) {
        return Err(format!("bad hex string `{s}`"));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| format!("bad hex string `{s}`")))
        .collect()
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair, counting
/// overlapping occurrences; ties go to the lexicographically smallest pair.
/// Stops early when no pair remains.
pub fn train_bpe<S: AsRef<[u8]>>(corpus: &[S], n_merges: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::Config("bpe corpus is empty".into()));
    }
    let mut seqs: Vec<Vec<(u32, Vec<u8>)>> = corpus
        .iter()
        .map(|s| s.as_ref().iter().map(|&b| (BYTE_BASE + b as u32, vec![b])).collect())
        .collect();
    let mut merges = Vec::with_capacity(n_merges);
    while merges.len() < n_merges {
        let mut counts: HashMap<(&[u8], &[u8]), usize> = HashMap::new();
        for s in &seqs {
            for w in s.windows(2) {
                *counts.entry((&w[0].1, &w[1].1)).or_default() += 1;
            }
        }
        let Some(((a, b), _)) = counts
            .into_iter()
            .max_by(|(p, c), (q, d)| c.cmp(d).then_with(|| q.cmp(p)))
        else {
            break;
        };
        let (a, b) = (a.to_vec(), b.to_vec());
        let id = MERGE_BASE + merges.len() as u32;
        seqs = seqs.into_iter().map(|s| apply_merge(s, &a, &b, id)).collect();
        merges.push((a, b));
    }
    Vocabulary::from_merges(merges)
}

/// Well-formed target: `[task, language, BOS] ++ payload ++ [EOS]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetSequence {
    task: Task,
    language: Language,
    ids: Vec<u32>,
}

impl TargetSequence {
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let task = task_of(&ids)?;
        let malformed = |m: &str| Err(Error::MalformedSequence(format!("{m}: {ids:?}")));
        if ids.len() < PREFIX_LEN + 1 {
            return malformed("too short");
        }
        let Some(language) = Language::from_tag(ids[1]) else {
            return malformed("second id is not a language tag");
        };
        if ids[2] != BOS {
            return malformed("third id is not BOS");
        }
        if ids[ids.len() - 1] != EOS {
            return malformed("last id is not EOS");
        }
        if ids[PREFIX_LEN..ids.len() - 1].iter().any(|&id| id < N_RESERVED) {
            return malformed("reserved id inside payload");
        }
        Ok(TargetSequence { task, language, ids })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn payload(&self) -> &[u32] {
        &self.ids[PREFIX_LEN..self.ids.len() - 1]
    }
}

pub fn prefix(task: Task, language: Language) -> [u32; PREFIX_LEN] {
    [GuidingToken::task_tag(task).id(), language.tag().id(), BOS]
}

pub fn build_target_sequence(task: Task, language: Language, text: &[u8], vocab: &Vocabulary) -> TargetSequence {
    let mut ids = prefix(task, language).to_vec();
    ids.extend(vocab.encode(text));
    ids.push(EOS);
    TargetSequence { task, language, ids }
}

/// Task named by the leading tag of a raw id sequence.
pub fn task_of(ids: &[u32]) -> Result<Task> {
    match ids.first() {
        Some(&TRANSCRIBE) => Ok(Task::Asr),
        Some(&TRANSLATE) => Ok(Task::St),
        Some(other) => Err(Error::MalformedSequence(format!("first id {other} is not a task tag"))),
        None => Err(Error::MalformedSequence("empty sequence".into())),
    }
}

/// Drops guiding and reserved ids, keeping payload ids in order.
pub fn strip_guides(ids: &[u32]) -> Vec<u32> {
    ids.iter().copied().filter(|&id| id >= N_RESERVED).collect()
}
