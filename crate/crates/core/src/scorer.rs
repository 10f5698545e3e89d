//! Pair scoring.
//!
//! A [`PairScorer`] maps one `(error, candidate)` pair to a real number and
//! never looks at the other candidates, so the same scorer ranks any number
//! of suspects. [`score_candidates`] scores a suspect list pairwise and
//! normalizes with [`softmax`].

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::domain::{ChangeCandidate, FailureEvent, ScoredCandidate};
use crate::encoder::{Encoder, EncoderConfig, EncoderInit};
use crate::tokenizer::{encode_pair, words, TokenSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    EncoderMc,
    LexicalOverlap,
    Random,
    Constant,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::EncoderMc => "encoder_mc",
            ScorerKind::LexicalOverlap => "lexical_overlap",
            ScorerKind::Random => "random",
            ScorerKind::Constant => "constant",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder_mc" => Ok(ScorerKind::EncoderMc),
            "lexical_overlap" | "lexical" => Ok(ScorerKind::LexicalOverlap),
            "random" => Ok(ScorerKind::Random),
            "constant" => Ok(ScorerKind::Constant),
            other => Err(Error::invalid(format!("unknown scorer kind {other:?}"))),
        }
    }
}

/// Scores one `(error, candidate)` pair. Implementations must be pure
/// functions of their parameters and the two texts.
pub trait PairScorer: Send + Sync {
    fn kind(&self) -> ScorerKind;

    /// Human-readable identifier, e.g. for report rows.
    fn identifier(&self) -> String {
        self.kind().to_string()
    }

    fn score(&self, error_text: &str, candidate_text: &str) -> f64;
}

impl<S: PairScorer + ?Sized> PairScorer for Box<S> {
    fn kind(&self) -> ScorerKind {
        (**self).kind()
    }
    fn identifier(&self) -> String {
        (**self).identifier()
    }
    fn score(&self, e: &str, c: &str) -> f64 {
        (**self).score(e, c)
    }
}

impl<S: PairScorer + ?Sized> PairScorer for std::sync::Arc<S> {
    fn kind(&self) -> ScorerKind {
        (**self).kind()
    }
    fn identifier(&self) -> String {
        (**self).identifier()
    }
    fn score(&self, e: &str, c: &str) -> f64 {
        (**self).score(e, c)
    }
}

/// Numerically stable softmax (the maximum is subtracted before
/// exponentiation).
///
/// ```
/// let p = culprit::scorer::softmax(&[0.0, 3f64.ln()]).unwrap();
/// assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12);
/// ```
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::NumericInput("softmax of an empty list".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NumericInput(format!("non-finite score {bad}")));
    }
    let mut out = scores.to_vec();
    crate::encoder::softmax_in_place(&mut out);
    Ok(out)
}

/// `log(softmax(scores))`, computed without forming the probabilities.
pub fn log_softmax(scores: &[f64]) -> Result<Vec<f64>> {
    softmax(scores)?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(scores.iter().map(|s| s - lse).collect())
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores every suspect against the failure, preserving suspect order.
pub fn score_candidates(
    scorer: &(impl PairScorer + ?Sized),
    failure: &FailureEvent,
    suspects: &[ChangeCandidate],
) -> Result<Vec<ScoredCandidate>> {
    if suspects.is_empty() {
        return Err(Error::invalid("score_candidates needs at least one suspect"));
    }
    let raw: Vec<f64> = suspects
        .iter()
        .map(|s| scorer.score(&failure.error_text, &s.message_text))
        .collect();
    let probs = softmax(&raw)?;
    Ok(suspects
        .iter()
        .zip(raw.into_iter().zip(probs))
        .map(|(s, (raw_score, probability))| ScoredCandidate {
            change_id: s.change_id.clone(),
            raw_score,
            probability,
        })
        .collect())
}

/// Sorts by raw score, highest first; equal scores keep list order.
pub fn rank(mut scored: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    scored.sort_by(|a, b| b.raw_score.total_cmp(&a.raw_score));
    scored
}

// ---------------------------------------------------------------------------
// Baselines

/// Jaccard similarity between the lowercased alphanumeric word sets of the
/// two texts.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalOverlapScorer;

pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<String> = words(a).collect();
    let sb: HashSet<String> = words(b).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

impl PairScorer for LexicalOverlapScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::LexicalOverlap
    }
    fn score(&self, error_text: &str, candidate_text: &str) -> f64 {
        jaccard(error_text, candidate_text)
    }
}

/// Seeded uniform score in `[0, 1)` per pair: the random-agent baseline.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl PairScorer for RandomScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Random
    }
    fn identifier(&self) -> String {
        format!("random(seed={})", self.seed)
    }
    fn score(&self, error_text: &str, candidate_text: &str) -> f64 {
        let mut h = fnv1a(0xcbf2_9ce4_8422_2325 ^ splitmix64(self.seed), error_text.as_bytes());
        h = fnv1a(h, &[0xff]);
        h = fnv1a(h, candidate_text.as_bytes());
        (splitmix64(h) >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Returns the same value for every pair.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantScorer {
    pub value: f64,
}

impl PairScorer for ConstantScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Constant
    }
    fn identifier(&self) -> String {
        format!("constant({})", self.value)
    }
    fn score(&self, _: &str, _: &str) -> f64 {
        self.value
    }
}

// ---------------------------------------------------------------------------
// Encoder

/// The trainable multiple-choice scorer: tokenizer plus encoder.
#[derive(Debug, Clone)]
pub struct EncoderScorer {
    vocab: Vocabulary,
    encoder: Encoder,
    name: String,
}

impl EncoderScorer {
    /// Builds an untrained scorer. The encoder's vocabulary size is taken
    /// from `vocab`.
    pub fn new(vocab: Vocabulary, mut config: EncoderConfig, init: EncoderInit) -> Result<Self> {
        config.vocabulary_size = vocab.len();
        let encoder = Encoder::initialize(config, init)?;
        Ok(Self {
            vocab,
            encoder,
            name: "encoder_mc".into(),
        })
    }

    pub fn from_parts(vocab: Vocabulary, encoder: Encoder) -> Result<Self> {
        if vocab.len() != encoder.config().vocabulary_size {
            return Err(Error::invalid(format!(
                "vocabulary has {} entries, encoder expects {}",
                vocab.len(),
                encoder.config().vocabulary_size
            )));
        }
        Ok(Self {
            vocab,
            encoder,
            name: "encoder_mc".into(),
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn max_tokens(&self) -> usize {
        self.encoder.config().max_tokens
    }

    /// Encodes a pair with this scorer's vocabulary and context length.
    /// Texts without any word still encode (to markers only).
    pub fn encode(&self, error_text: &str, candidate_text: &str) -> TokenSequence {
        match encode_pair(&self.vocab, error_text, candidate_text, self.max_tokens()) {
            Ok(seq) => seq,
            Err(_) => crate::tokenizer::pair_from_ids(
                self.vocab.encode(error_text),
                self.vocab.encode(candidate_text),
                self.max_tokens(),
            ),
        }
    }
}

impl PairScorer for EncoderScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::EncoderMc
    }
    fn identifier(&self) -> String {
        self.name.clone()
    }
    fn score(&self, error_text: &str, candidate_text: &str) -> f64 {
        self.encoder.score(&self.encode(error_text, candidate_text))
    }
}

/// Any of the built-in scorers, as loaded from a model artifact.
#[derive(Debug, Clone)]
pub enum AnyScorer {
    Encoder(EncoderScorer),
    Lexical(LexicalOverlapScorer),
    Random(RandomScorer),
    Constant(ConstantScorer),
}

impl AnyScorer {
    fn inner(&self) -> &dyn PairScorer {
        match self {
            AnyScorer::Encoder(s) => s,
            AnyScorer::Lexical(s) => s,
            AnyScorer::Random(s) => s,
            AnyScorer::Constant(s) => s,
        }
    }
}

impl PairScorer for AnyScorer {
    fn kind(&self) -> ScorerKind {
        self.inner().kind()
    }
    fn identifier(&self) -> String {
        self.inner().identifier()
    }
    fn score(&self, e: &str, c: &str) -> f64 {
        self.inner().score(e, c)
    }
}

impl From<EncoderScorer> for AnyScorer {
    fn from(s: EncoderScorer) -> Self {
        AnyScorer::Encoder(s)
    }
}

impl From<LexicalOverlapScorer> for AnyScorer {
    fn from(s: LexicalOverlapScorer) -> Self {
        AnyScorer::Lexical(s)
    }
}

impl From<RandomScorer> for AnyScorer {
    fn from(s: RandomScorer) -> Self {
        AnyScorer::Random(s)
    }
}

impl From<ConstantScorer> for AnyScorer {
    fn from(s: ConstantScorer) -> Self {
        AnyScorer::Constant(s)
    }
}
