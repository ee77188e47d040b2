//! Token error rate and BLEU over whitespace-split tokens.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Counts from a minimal edit alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditAlignment {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditAlignment {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerResult {
    pub rate: f64,
    pub alignment: EditAlignment,
}

/// `(S+D+I)/N` under unit costs. When several alignments are minimal the
/// reported one prefers substitution, then insertion, then deletion.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerResult> {
    let (n, m) = (reference.len(), hypothesis.len());
    if n == 0 {
        return Err(Error::Undefined("error rate against an empty reference"));
    }
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }

    let mut a = EditAlignment {
        reference_len: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let differ = reference[i - 1] != hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(differ) == here {
                a.substitutions += usize::from(differ);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            a.insertions += 1;
            j -= 1;
        } else {
            a.deletions += 1;
            i -= 1;
        }
    }
    debug_assert_eq!(a.errors(), d[n * w + m]);
    Ok(WerResult {
        rate: a.errors() as f64 / n as f64,
        alignment: a,
    })
}

/// [`wer`] over whitespace tokens.
pub fn wer_str(reference: &str, hypothesis: &str) -> Result<WerResult> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    wer(&r, &h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add-k smoothing of the n ≥ 2 precisions; `None` disables it.
    pub smoothing: Option<f64>,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    /// In `[0, 100]`.
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Set when the hypothesis was empty.
    pub empty_hypothesis: bool,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n <= tokens.len() {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU: geometric mean of clipped n-gram precisions times
/// `exp(min(0, 1 − r/h))`, with `r` the reference length closest to `h`.
pub fn bleu<T: Eq + Hash>(references: &[Vec<T>], hypothesis: &[T], opts: &BleuOptions) -> Result<BleuScore> {
    if references.is_empty() {
        return Err(Error::Input("BLEU needs at least one reference".into()));
    }
    if opts.max_n == 0 {
        return Err(Error::Config("BLEU max_n must be positive".into()));
    }
    let h = hypothesis.len();
    let r = references
        .iter()
        .map(|x| x.len())
        .min_by_key(|&len| (len.abs_diff(h), len))
        .unwrap_or(0);
    if h == 0 {
        return Ok(BleuScore {
            score: 0.0,
            precisions: vec![0.0; opts.max_n],
            brevity_penalty: 0.0,
            hyp_len: 0,
            ref_len: r,
            empty_hypothesis: true,
        });
    }
    let mut precisions = Vec::with_capacity(opts.max_n);
    for n in 1..=opts.max_n {
        let hyp = ngram_counts(hypothesis, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for reference in references {
            for (g, c) in ngram_counts(reference, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total: usize = hyp.values().sum();
        let matched: usize = hyp
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = match opts.smoothing {
            Some(k) if n > 1 => (matched as f64 + k) / (total as f64 + k),
            _ if total == 0 => 0.0,
            _ => matched as f64 / total as f64,
        };
        precisions.push(p);
    }
    let brevity_penalty = (1.0 - r as f64 / h as f64).min(0.0).exp();
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / opts.max_n as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len: h,
        ref_len: r,
        empty_hypothesis: false,
    })
}

/// [`bleu`] over whitespace tokens.
pub fn bleu_str(references: &[&str], hypothesis: &str, opts: &BleuOptions) -> Result<BleuScore> {
    let refs: Vec<Vec<&str>> = references.iter().map(|r| r.split_whitespace().collect()).collect();
    let hyp: Vec<&str> = hypothesis.split_whitespace().collect();
    bleu(&refs, &hyp, opts)
}

/// Aligned match rate `(N − S − D) / N` under the [`wer`] alignment.
pub fn token_accuracy<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    let a = wer(reference, hypothesis)?.alignment;
    Ok((a.reference_len - a.substitutions - a.deletions) as f64 / a.reference_len as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Minimum over every alignment path; no table.
    fn brute_distance(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ar)), Some((y, br))) => {
                let sub = brute_distance(ar, br) + usize::from(x != y);
                let del = brute_distance(ar, b) + 1;
                let ins = brute_distance(a, br) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    fn all_sequences(max_len: usize, alphabet: &[u8]) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut layer = vec![vec![]];
        for _ in 0..max_len {
            layer = layer
                .iter()
                .flat_map(|s: &Vec<u8>| {
                    alphabet.iter().map(move |&c| {
                        let mut t = s.clone();
                        t.push(c);
                        t
                    })
                })
                .collect();
            out.extend(layer.iter().cloned());
        }
        out
    }

    #[test]
    fn wer_fixtures() {
        assert_eq!(wer_str("a b c", "a b c").unwrap().rate, 0.0);
        let r = wer_str("a b c", "a x c").unwrap();
        assert!((r.rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.alignment.substitutions, 1);
        let r = wer_str("a b c", "").unwrap();
        assert_eq!(r.rate, 1.0);
        assert_eq!(r.alignment.deletions, 3);
        assert!(matches!(wer_str("", "a"), Err(Error::Undefined(_))));
    }

    #[test]
    fn wer_tie_break_prefers_substitution() {
        // "a b" → "b c": either two substitutions or one deletion plus one
        // insertion; both cost 2.
        let a = wer_str("a b", "b c").unwrap().alignment;
        assert_eq!((a.substitutions, a.insertions, a.deletions), (2, 0, 0));
        let a = wer_str("a", "b b").unwrap().alignment;
        assert_eq!((a.substitutions, a.insertions, a.deletions), (1, 1, 0));
    }

    #[test]
    fn wer_matches_brute_force_exhaustively() {
        let seqs = all_sequences(6, b"ab");
        for r in seqs.iter().filter(|s| !s.is_empty()) {
            for h in &seqs {
                let res = wer(r, h).unwrap();
                let a = res.alignment;
                assert_eq!(a.errors(), brute_distance(r, h), "{r:?} {h:?}");
                let matches = r.len() - a.substitutions - a.deletions;
                assert_eq!(matches + a.substitutions + a.insertions, h.len());
            }
        }
    }

    #[test]
    fn bleu_fixtures() {
        let o = BleuOptions::default();
        let b = bleu_str(&["the cat sat on the mat"], "the cat sat on the mat", &o).unwrap();
        assert_eq!(b.score, 100.0);

        let b = bleu_str(&["the cat sat"], "the the the", &o).unwrap();
        assert!((b.precisions[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(&b.precisions[1..], &[0.0, 0.0, 0.0]);
        assert_eq!(b.score, 0.0);

        // 4/5 · 3/4 · 2/3 · 1/2 = 1/5, no brevity penalty
        let b = bleu_str(&["a b c d e"], "a b c d x", &o).unwrap();
        assert!((b.score - 100.0 * 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!((b.score - 66.874_030_497_642_2).abs() < 1e-9);

        // perfect precisions, h=4, r=8 → 100·e^(1−2)
        let b = bleu_str(&["a b c d e f g h"], "a b c d", &o).unwrap();
        assert!((b.score - 100.0 * (-1f64).exp()).abs() < 1e-12);

        // p = 5/7, (3+1)/(6+1), (1+1)/(5+1), (0+1)/(4+1)
        let s = BleuOptions {
            smoothing: Some(1.0),
            ..o
        };
        let b = bleu_str(&["the cat is on the mat"], "the cat the cat on the mat", &s).unwrap();
        let want = 100.0 * (5.0 / 7.0 * 4.0 / 7.0 * 1.0 / 3.0 * 1.0 / 5.0f64).powf(0.25);
        assert!((b.score - want).abs() < 1e-12, "{} vs {want}", b.score);
    }

    #[test]
    fn bleu_edge_cases() {
        let o = BleuOptions::default();
        let b = bleu_str(&["a b"], "", &o).unwrap();
        assert!(b.empty_hypothesis);
        assert_eq!(b.score, 0.0);
        assert!(bleu_str(&[], "a", &o).is_err());
        // clipping takes the max count over references
        let b = bleu_str(&["a b c d", "a a e f"], "a a", &BleuOptions { max_n: 1, smoothing: None }).unwrap();
        assert_eq!(b.precisions[0], 1.0);
    }

    #[test]
    fn token_accuracy_counts_aligned_matches() {
        assert_eq!(token_accuracy(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(token_accuracy(&[1, 2, 3, 4], &[1, 9, 3]).unwrap(), 0.5);
        assert_eq!(token_accuracy(&[1, 2], &[1, 2, 7, 7, 7]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn identity_scores(x in proptest::collection::vec(0u8..6, 4..20)) {
            prop_assert_eq!(wer(&x, &x).unwrap().rate, 0.0);
            prop_assert_eq!(bleu(std::slice::from_ref(&x), &x, &BleuOptions::default()).unwrap().score, 100.0);
        }

        #[test]
        fn single_corruption_never_increases_bleu(
            x in proptest::collection::vec(0u8..6, 4..20),
            pos in any::<prop::sample::Index>(),
            tok in 0u8..8,
        ) {
            let o = BleuOptions::default();
            let perfect = bleu(std::slice::from_ref(&x), &x, &o).unwrap().score;
            let mut y = x.clone();
            y[pos.index(x.len())] = tok;
            prop_assert!(bleu(std::slice::from_ref(&x), &y, &o).unwrap().score <= perfect);
            let smooth = BleuOptions { smoothing: Some(1.0), ..o };
            prop_assert!(bleu(std::slice::from_ref(&x), &y, &smooth).unwrap().score <= bleu(std::slice::from_ref(&x), &x, &smooth).unwrap().score);
        }
    }
}
