//! Seeded generator of labeled failure records.
//!
//! Every record belongs to a subsystem (`CharacterPhysics`, `MeshDeformer`,
//! ...) with its own identifier vocabulary. The culprit commit is tagged and
//! worded from its subsystem. With probability `signal_strength` the error
//! message is filled from the same subsystem; otherwise from a uniformly
//! drawn one, in which case the error carries no information about the
//! culprit.

use std::collections::HashSet;

use chrono::{DateTime, Duration, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::domain::{ChangeCandidate, FailureEvent, LabeledRecord};
use crate::kv::KeyValues;
use crate::{Error, Result};

const SUBSYSTEM_NAMES: &[&str] = &[
    "CharacterPhysics",
    "MeshDeformer",
    "Localization",
    "Movie",
    "Appearance",
    "MeshOperate",
    "Rendering",
    "Audio",
    "Animation",
    "Networking",
    "Vehicles",
    "Streaming",
    "Terrain",
    "Weapons",
    "Navigation",
    "Scripting",
];

const SYLLABLES: &[&str] = &[
    "ba", "ke", "lo", "mi", "nu", "ra", "so", "ti", "vu", "xe", "zo", "pa", "de", "gi", "fo",
    "hu", "ja", "wy", "tor", "mesh", "grid", "lod", "vex", "dra", "quin", "shad", "blen", "cor",
];

const VERBS: &[&str] = &[
    "Fix", "Add", "Refactor", "Remove", "Update", "Implement", "Move", "Replace", "Improve",
    "Revert", "Cleanup", "Optimize",
];

const FILLER: &[&str] = &[
    "the", "for", "in", "to", "with", "and", "of", "a", "support", "missing", "issue", "when",
    "data", "component", "entity", "runtime", "system", "module", "source", "input", "output",
    "crash", "on", "some", "devices", "new", "types", "multiple", "code", "would", "be", "less",
    "however", "that", "mean", "depend", "all", "we", "like", "separate", "container", "per",
    "existing", "collection", "conventional", "use", "building", "dependency", "issues", "updated",
    "background", "has", "changed", "reviewed", "by", "resolves", "internal", "detail", "capture",
    "individual", "variant", "layers", "ranges", "large", "box", "as", "it", "is", "unnecessary",
    "causing", "failures", "generation", "improved", "added",
];

const REASONS: &[&str] = &[
    "Please set FailureMessage on TestCaseEntity to provide reason",
    "Testcase had error in runtime!",
    "Timeout after 300 seconds",
    "Unexpected null reference",
    "Validation step returned false",
];

/// Default error templates. Placeholders: `{subsystem}`, `{test}`,
/// `{ident}`, `{ident2}`, `{reason}`.
pub const DEFAULT_TEMPLATES: &[&str] = &[
    "Testcase: \"{test}\" asserted with message: Testcase {test} failed with result: Failed - ({reason})",
    "Assert: (m_{ident}.find({ident2}) != m_{ident}.cend()) in {subsystem}::{ident2}",
    "Testcase: \"{test}\" asserted with message: Testcase had error in runtime! {ident} {ident2} reported: {reason}",
    "Assert: ({ident}_count > 0) in {subsystem}/{ident2}.cpp",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_records: usize,
    pub n_subsystems: usize,
    /// Probability that the error is worded from the culprit's subsystem.
    pub signal_strength: f64,
    pub error_templates: Vec<String>,
    /// Identifier words per subsystem.
    pub vocab_size: usize,
    /// Median word count of commit messages (log-normal).
    pub median_message_words: f64,
    /// Fraction of errors that carry a long call stack, long enough to hit
    /// the 512-token limit.
    pub long_tail_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_records: 2500,
            n_subsystems: 12,
            signal_strength: 0.8,
            error_templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            vocab_size: 24,
            median_message_words: 30.0,
            long_tail_fraction: 0.01,
        }
    }
}

const TEMPLATE_SEPARATOR: &str = " || ";

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return bad(format!("signal_strength {} outside [0, 1]", self.signal_strength));
        }
        if self.n_records < 8 {
            return bad(format!("n_records {} < 8", self.n_records));
        }
        if self.n_subsystems < 2 {
            return bad(format!("n_subsystems {} < 2", self.n_subsystems));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.error_templates.is_empty() || self.error_templates.iter().any(|t| t.trim().is_empty()) {
            return bad("error_templates must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.long_tail_fraction) {
            return bad(format!("long_tail_fraction {} outside [0, 1]", self.long_tail_fraction));
        }
        if !(self.median_message_words >= 1.0) {
            return bad(format!("median_message_words {} < 1", self.median_message_words));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("seed", self.seed)
            .set("n_records", self.n_records)
            .set("n_subsystems", self.n_subsystems)
            .set("signal_strength", self.signal_strength)
            .set("vocab_size", self.vocab_size)
            .set("median_message_words", self.median_message_words)
            .set("long_tail_fraction", self.long_tail_fraction)
            .set("error_templates", self.error_templates.join(TEMPLATE_SEPARATOR));
        kv
    }

    /// Reads a config; missing keys keep their defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = kv.parse_value("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parse_value("n_records")? {
            c.n_records = v;
        }
        if let Some(v) = kv.parse_value("n_subsystems")? {
            c.n_subsystems = v;
        }
        if let Some(v) = kv.parse_value("signal_strength")? {
            c.signal_strength = v;
        }
        if let Some(v) = kv.parse_value("vocab_size")? {
            c.vocab_size = v;
        }
        if let Some(v) = kv.parse_value("median_message_words")? {
            c.median_message_words = v;
        }
        if let Some(v) = kv.parse_value("long_tail_fraction")? {
            c.long_tail_fraction = v;
        }
        if let Some(t) = kv.get("error_templates") {
            c.error_templates = t.split(TEMPLATE_SEPARATOR).map(str::to_string).collect();
        }
        c.validate()?;
        Ok(c)
    }
}

/// One subsystem: its tag and identifier words.
#[derive(Debug, Clone)]
pub struct Subsystem {
    pub name: String,
    pub identifiers: Vec<String>,
}

/// Builds the subsystem table for a config (deterministic in the seed).
pub fn subsystems(config: &SynthConfig) -> Vec<Subsystem> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut used: HashSet<String> = HashSet::new();
    (0..config.n_subsystems)
        .map(|i| {
            let name = SUBSYSTEM_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("Subsystem{i}"));
            used.insert(name.to_lowercase());
            let mut identifiers = Vec::with_capacity(config.vocab_size);
            while identifiers.len() < config.vocab_size {
                let n = rng.random_range(2..=3);
                let mut word = String::new();
                for _ in 0..n {
                    word.push_str(SYLLABLES.choose(&mut rng).expect("non-empty"));
                }
                let word = capitalize(&word);
                if used.insert(word.to_lowercase()) && !FILLER.contains(&word.to_lowercase().as_str()) {
                    identifiers.push(word);
                }
            }
            Subsystem { name, identifiers }
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn base_time() -> DateTime<Utc> {
    DateTime::from_timestamp(1_704_067_200, 0).expect("valid timestamp") // 2024-01-01
}

/// Generates `config.n_records` labeled records.
pub fn generate(config: &SynthConfig) -> Result<Vec<LabeledRecord>> {
    config.validate()?;
    let table = subsystems(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lengths = LogNormal::new(config.median_message_words.ln(), 0.45).expect("valid params");

    let mut records = Vec::with_capacity(config.n_records);
    for i in 0..config.n_records {
        let truth = rng.random_range(0..table.len());
        let source = if rng.random_bool(config.signal_strength) {
            truth
        } else {
            rng.random_range(0..table.len())
        };
        let (error_text, test_name) = error_message(&mut rng, config, &table[source]);
        let message = commit_message(&mut rng, &table[truth], &lengths);
        let at = base_time() + Duration::seconds(i as i64 * 97);
        let failure = FailureEvent {
            event_id: format!("evt-{i:05}"),
            error_text,
            test_name,
            observed_at: at,
        };
        let culprit = ChangeCandidate {
            change_id: format!("CL{}", 100_000 + i),
            message_text: message,
            author_id: Some(format!("dev{:03}", rng.random_range(0..200))),
            submitted_at: Some(at - Duration::minutes(rng.random_range(5..600))),
        };
        records.push(LabeledRecord {
            record_id: format!("rec-{i:05}"),
            failure,
            culprit,
        });
    }
    Ok(records)
}

fn error_message(rng: &mut ChaCha8Rng, config: &SynthConfig, sub: &Subsystem) -> (String, Option<String>) {
    let template = config.error_templates.choose(rng).expect("validated non-empty");
    let ident = sub.identifiers.choose(rng).expect("non-empty").clone();
    let ident2 = sub.identifiers.choose(rng).expect("non-empty").clone();
    let test = format!("AutoTest_{}_{}", sub.name, sub.identifiers.choose(rng).expect("non-empty"));
    let reason = REASONS.choose(rng).expect("non-empty");
    let mut text = template
        .replace("{subsystem}", &sub.name)
        .replace("{test}", &test)
        .replace("{ident2}", &ident2)
        .replace("{ident}", &ident)
        .replace("{reason}", reason);
    if rng.random_bool(config.long_tail_fraction) {
        let frames = rng.random_range(80..160);
        text.push_str(" Callstack:");
        for f in 0..frames {
            let id = sub.identifiers.choose(rng).expect("non-empty");
            let filler = FILLER.choose(rng).expect("non-empty");
            text.push_str(&format!(" at {}::{id}::{filler}() line {}", sub.name, 10 + f * 3));
        }
    }
    let test_name = template.contains("{test}").then_some(test);
    (text, test_name)
}

fn commit_message(rng: &mut ChaCha8Rng, sub: &Subsystem, lengths: &LogNormal<f64>) -> String {
    let target = (lengths.sample(rng).round() as usize).clamp(4, 300);
    let mut words: Vec<String> = Vec::with_capacity(target + 2);
    if rng.random_bool(0.9) {
        words.push(format!("[{}]", sub.name));
    }
    words.push(VERBS.choose(rng).expect("non-empty").to_string());
    words.push(sub.identifiers.choose(rng).expect("non-empty").clone());
    while words.len() < target {
        let w = if rng.random_bool(0.3) {
            sub.identifiers.choose(rng).expect("non-empty").clone()
        } else {
            FILLER.choose(rng).expect("non-empty").to_string()
        };
        words.push(w);
    }
    words.join(" ")
}
