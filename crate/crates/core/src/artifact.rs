//! Model artifact directories.
//!
//! ```text
//! model/
//!   scorer_kind    one line: encoder_mc | lexical_overlap | random | constant
//!   manifest.txt   key = value: encoder config, tokenizer, baseline settings
//!   params.bin     encoder parameters, little-endian f64 (encoder only)
//!   vocab.txt      one token per line (encoder only)
//! ```

use std::fs;
use std::io::BufReader;
use std::path::Path;

use crate::encoder::{Encoder, EncoderConfig};
use crate::kv::KeyValues;
use crate::scorer::{AnyScorer, ConstantScorer, EncoderScorer, LexicalOverlapScorer, PairScorer, RandomScorer, ScorerKind};
use crate::tokenizer::Vocabulary;
use crate::{Error, Result};

pub const FORMAT: &str = "culprit-model";
pub const KIND_FILE: &str = "scorer_kind";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Writes `scorer` into `dir`, creating it if needed. `extra` entries are
/// added to the manifest (training provenance, for example).
pub fn save(dir: &Path, scorer: &AnyScorer, extra: &KeyValues) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut kv = extra.clone();
    kv.set("format", FORMAT)
        .set("version", 1)
        .set("scorer_kind", scorer.kind())
        .set("name", scorer.identifier());
    match scorer {
        AnyScorer::Encoder(s) => {
            let enc = s.encoder();
            enc.config().to_kv(&mut kv);
            kv.set("parameter_count", enc.parameters().len())
                .set("position_scale", enc.position_scale())
                .set("tokenizer", "word-alphanumeric")
                .set("casing", "lowercase")
                .set("pooling", "first-token")
                .set("pair_order", "error,candidate")
                .set("truncation", "longest-first");
            let mut blob = Vec::with_capacity(enc.parameters().len() * 8);
            for p in enc.parameters() {
                blob.extend_from_slice(&p.to_le_bytes());
            }
            fs::write(dir.join(PARAMS_FILE), blob)?;
            let mut vocab = Vec::new();
            s.vocabulary().write(&mut vocab)?;
            fs::write(dir.join(VOCAB_FILE), vocab)?;
        }
        AnyScorer::Random(r) => {
            kv.set("seed", r.seed);
        }
        AnyScorer::Constant(c) => {
            kv.set("value", c.value);
        }
        AnyScorer::Lexical(_) => {}
    }
    fs::write(dir.join(KIND_FILE), format!("{}\n", scorer.kind()))?;
    fs::write(dir.join(MANIFEST_FILE), kv.to_text())?;
    Ok(())
}

/// Reads the manifest of a model directory.
pub fn manifest(dir: &Path) -> Result<KeyValues> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(|e| artifact_err(dir, format!("manifest: {e}")))?;
    KeyValues::parse(&text).map_err(|e| artifact_err(dir, e.to_string()))
}

fn artifact_err(dir: &Path, message: impl Into<String>) -> Error {
    Error::Artifact {
        path: dir.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a model directory, checking the manifest against the stored
/// parameter and vocabulary shapes.
pub fn load(dir: &Path) -> Result<AnyScorer> {
    let err = |m: String| artifact_err(dir, m);
    let kind_tag = fs::read_to_string(dir.join(KIND_FILE)).map_err(|e| err(format!("{KIND_FILE}: {e}")))?;
    let kind: ScorerKind = kind_tag.trim().parse().map_err(|e: Error| err(e.to_string()))?;
    let kv = manifest(dir)?;
    if kv.get("format") != Some(FORMAT) {
        return Err(err(format!("manifest format is {:?}, expected {FORMAT:?}", kv.get("format"))));
    }
    if kv.get("scorer_kind") != Some(kind.as_str()) {
        return Err(err(format!(
            "manifest scorer_kind {:?} disagrees with tag {kind}",
            kv.get("scorer_kind")
        )));
    }
    let wrap = |e: Error| err(e.to_string());
    Ok(match kind {
        ScorerKind::LexicalOverlap => AnyScorer::Lexical(LexicalOverlapScorer),
        ScorerKind::Random => AnyScorer::Random(RandomScorer::new(kv.parse_value("seed").map_err(wrap)?.unwrap_or(0))),
        ScorerKind::Constant => AnyScorer::Constant(ConstantScorer {
            value: kv.parse_value("value").map_err(wrap)?.unwrap_or(0.0),
        }),
        ScorerKind::EncoderMc => {
            let config = EncoderConfig::from_kv(&kv).map_err(wrap)?;
            let blob = fs::read(dir.join(PARAMS_FILE)).map_err(|e| err(format!("{PARAMS_FILE}: {e}")))?;
            if blob.len() % 8 != 0 {
                return Err(err(format!("{PARAMS_FILE} length {} is not a multiple of 8", blob.len())));
            }
            let params: Vec<f64> = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let declared: usize = kv.parse_value("parameter_count").map_err(wrap)?.unwrap_or(params.len());
            let expected = config.parameter_count();
            if declared != expected || params.len() != expected {
                return Err(err(format!(
                    "shape mismatch: config implies {expected} parameters, manifest declares {declared}, blob holds {}",
                    params.len()
                )));
            }
            let position_scale = kv.parse_value("position_scale").map_err(wrap)?.unwrap_or(0.02);
            let vocab_file = fs::File::open(dir.join(VOCAB_FILE)).map_err(|e| err(format!("{VOCAB_FILE}: {e}")))?;
            let vocab = Vocabulary::read(BufReader::new(vocab_file)).map_err(wrap)?;
            let encoder = Encoder::from_parameters(config, params, position_scale).map_err(wrap)?;
            let mut scorer = EncoderScorer::from_parts(vocab, encoder).map_err(wrap)?;
            if let Some(name) = kv.get("name") {
                scorer = scorer.with_name(name);
            }
            AnyScorer::Encoder(scorer)
        }
    })
}
