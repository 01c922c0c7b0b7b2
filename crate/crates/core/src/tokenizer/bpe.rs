//! Trainable byte-pair encoding.
//!
//! Words are whitespace-pretokenized and expanded to a character symbol
//! sequence followed by the end-of-word marker. Training repeatedly merges the
//! most frequent adjacent pair (ties broken by lexicographic pair order) and
//! stops early once no pair occurs at least twice.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// End-of-word marker symbol.
pub const EOW: &str = "</w>";

/// An ordered list of merge rules over the character base vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

/// Train a BPE model on a corpus with at most `num_merges` merges.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> BpeModel {
    // Word-type counts; BTreeMap keeps every later iteration deterministic.
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for text in corpus {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (word_symbols(&w), c))
        .collect();

    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, count) in &words {
            for pair in syms.windows(2) {
                *pair_counts
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += count;
            }
        }
        // Highest count wins; on ties the lexicographically smallest pair is
        // seen first in the BTreeMap walk and kept by the strict comparison.
        let mut best: Option<((&str, &str), u64)> = None;
        for (pair, count) in &pair_counts {
            if best.is_none_or(|(_, c)| *count > c) {
                best = Some((*pair, *count));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let pair = (pair.0.to_string(), pair.1.to_string());
        for (syms, _) in &mut words {
            merge_pass(syms, &pair);
        }
        merges.push(pair);
    }
    BpeModel { merges }
}

impl BpeModel {
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Tokenize a char slice: whitespace words, each encoded by applying the
    /// merge list in order. Offsets are char spans into the source; the
    /// end-of-word marker carries the empty span at the word end until a merge
    /// absorbs it.
    pub(super) fn tokenize_chars(&self, chars: &[char]) -> (Vec<String>, Vec<(usize, usize)>) {
        let mut tokens = Vec::new();
        let mut offsets = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let end = i;
            let mut syms: Vec<(String, usize, usize)> = (start..end)
                .map(|p| (chars[p].to_string(), p, p + 1))
                .collect();
            syms.push((EOW.to_string(), end, end));
            for merge in &self.merges {
                loop {
                    let mut changed = false;
                    let mut k = 0;
                    while k + 1 < syms.len() {
                        if syms[k].0 == merge.0 && syms[k + 1].0 == merge.1 {
                            let (right, _, rend) = syms.remove(k + 1);
                            syms[k].0.push_str(&right);
                            syms[k].2 = rend.max(syms[k].2);
                            changed = true;
                        }
                        k += 1;
                    }
                    if !changed {
                        break;
                    }
                }
            }
            for (sym, s, e) in syms {
                tokens.push(sym);
                offsets.push((s, e));
            }
        }
        (tokens, offsets)
    }

    /// One merge rule per line, the two symbols space-separated.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (a, b) in &self.merges {
            writeln!(out, "{a} {b}").expect("write to string");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BpeModel> {
        let content = std::fs::read_to_string(path)?;
        let mut merges = Vec::new();
        for (lineno, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => merges.push((a.to_string(), b.to_string())),
                _ => {
                    return Err(Error::Parse {
                        row: Some(lineno + 1),
                        message: "expected two space-separated symbols".into(),
                    })
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for pair in &merges {
            if !seen.insert(pair) {
                return Err(Error::Parse {
                    row: None,
                    message: format!("duplicate merge rule '{} {}'", pair.0, pair.1),
                });
            }
        }
        Ok(BpeModel { merges })
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    syms.push(EOW.to_string());
    syms
}

/// Merge all adjacent occurrences of `pair`, left to right, until none remain.
fn merge_pass(syms: &mut Vec<String>, pair: &(String, String)) {
    loop {
        let mut changed = false;
        let mut k = 0;
        while k + 1 < syms.len() {
            if syms[k] == pair.0 && syms[k + 1] == pair.1 {
                let right = syms.remove(k + 1);
                syms[k].push_str(&right);
                changed = true;
            }
            k += 1;
        }
        if !changed {
            break;
        }
    }
}
