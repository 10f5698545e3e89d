//! Word-level tokenization and pair encoding.
//!
//! Text is split into maximal runs of alphanumeric characters and
//! lowercased; everything else separates words. `AutoTest_SplitScreen`
//! becomes `autotest`, `splitscreen`.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::domain::McqaSample;
use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Markers added around a pair: start, separator, end.
pub const PAIR_MARKERS: usize = 3;

/// Lowercased alphanumeric words of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Default vocabulary cap for models trained from a corpus.
pub const DEFAULT_MAX_VOCABULARY: usize = 4096;

/// A fixed word vocabulary with four reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary of at most `max_size` entries (specials
    /// included) from the most frequent words. Ties break alphabetically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let budget = max_size.saturating_sub(SPECIALS.len());
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(budget).map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("built vocabulary is well-formed")
    }

    /// Vocabulary over the error texts and candidate messages of `samples`.
    pub fn from_samples(samples: &[McqaSample], max_size: usize) -> Self {
        let texts = samples.iter().flat_map(|s| {
            std::iter::once(s.error_text.as_str()).chain(s.candidates.iter().map(|c| c.message_text.as_str()))
        });
        Self::build(texts, max_size)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::invalid("vocabulary must start with the four special tokens"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        words(text).map(|w| self.id(&w)).collect()
    }

    /// One token per line.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let tokens = input.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }
}

/// Token ids of an encoded `(error, candidate)` pair plus the segment each
/// token belongs to (0 for the start marker and the error, 1 for the
/// candidate and the final marker).
///
/// `shared[t]` is 1 when token `t` is a known word that also occurs in the
/// other segment; markers and unknown words are always 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segments: Vec<u8>,
    pub shared: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Drops tokens from the tail of whichever segment is longer until both fit
/// in `budget`. On a tie the second segment loses a token.
pub fn truncate_longest_first(first: &mut Vec<u32>, second: &mut Vec<u32>, budget: usize) {
    while first.len() + second.len() > budget {
        if first.len() > second.len() {
            first.pop();
        } else {
            second.pop();
        }
    }
}

/// Encodes `[CLS] error [SEP] candidate [SEP]`, truncated longest-first to
/// at most `max_tokens` ids.
pub fn encode_pair(
    vocab: &Vocabulary,
    error_text: &str,
    candidate_text: &str,
    max_tokens: usize,
) -> Result<TokenSequence> {
    if error_text.trim().is_empty() || candidate_text.trim().is_empty() {
        return Err(Error::invalid("encode_pair needs two non-empty texts"));
    }
    if max_tokens < PAIR_MARKERS {
        return Err(Error::invalid(format!("max_tokens {max_tokens} leaves no room for markers")));
    }
    Ok(pair_from_ids(vocab.encode(error_text), vocab.encode(candidate_text), max_tokens))
}

pub(crate) fn pair_from_ids(mut a: Vec<u32>, mut b: Vec<u32>, max_tokens: usize) -> TokenSequence {
    truncate_longest_first(&mut a, &mut b, max_tokens - PAIR_MARKERS);
    let mut ids = Vec::with_capacity(a.len() + b.len() + PAIR_MARKERS);
    let mut segments = Vec::with_capacity(ids.capacity());
    ids.push(CLS);
    ids.extend_from_slice(&a);
    ids.push(SEP);
    segments.resize(ids.len(), 0);
    ids.extend_from_slice(&b);
    ids.push(SEP);
    segments.resize(ids.len(), 1);
    let in_a: HashSet<u32> = a.iter().copied().collect();
    let in_b: HashSet<u32> = b.iter().copied().collect();
    let flag = |id: u32, other: &HashSet<u32>| (id > SEP && other.contains(&id)) as u8;
    let mut shared = Vec::with_capacity(ids.len());
    shared.push(0);
    shared.extend(a.iter().map(|&id| flag(id, &in_b)));
    shared.push(0);
    shared.extend(b.iter().map(|&id| flag(id, &in_a)));
    shared.push(0);
    TokenSequence { ids, segments, shared }
}
