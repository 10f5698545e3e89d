//! The synthetic reproduction protocol as one call: generate records,
//! build and split the corpus, train the encoder, and compare it with the
//! baselines on the held-out test set.
//!
//! ```no_run
//! use culprit::protocol::{run, ProtocolConfig};
//!
//! let outcome = run(&ProtocolConfig::with_seed(0)).unwrap();
//! println!("{}", outcome.comparison.to_text());
//! ```

use std::time::{Duration, Instant};

use crate::dataset::{build_samples, split, BuildConfig, Split};
use crate::domain::LabeledRecord;
use crate::encoder::{EncoderConfig, EncoderInit};
use crate::evaluator::{compare, evaluate, ComparisonEntry, ComparisonTable, EvalReport};
use crate::scorer::{EncoderScorer, LexicalOverlapScorer};
use crate::synth::{generate, SynthConfig};
use crate::tokenizer::{Vocabulary, DEFAULT_MAX_VOCABULARY};
use crate::trainer::{fit_encoder, TrainConfig, TrainReport};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub synth: SynthConfig,
    pub build: BuildConfig,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    pub init: EncoderInit,
    pub max_vocabulary: usize,
}

impl ProtocolConfig {
    /// Default settings with every seed set to `seed`.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            synth: SynthConfig {
                seed,
                ..SynthConfig::default()
            },
            build: BuildConfig::with_seed(seed),
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            encoder: EncoderConfig::tiny(0),
            init: EncoderInit {
                seed,
                ..EncoderInit::default()
            },
            max_vocabulary: DEFAULT_MAX_VOCABULARY,
        }
    }
}

pub struct ProtocolOutcome {
    pub records: Vec<LabeledRecord>,
    pub split: Split,
    /// Test-set evaluation before any optimizer step.
    pub untrained: EvalReport,
    pub model: EncoderScorer,
    pub report: TrainReport,
    pub test: EvalReport,
    /// Trained encoder, lexical overlap and the random agent on the test set.
    pub comparison: ComparisonTable,
    pub elapsed: Duration,
}

pub fn run(config: &ProtocolConfig) -> Result<ProtocolOutcome> {
    let start = Instant::now();
    let records = generate(&config.synth)?;
    let samples = build_samples(&records, &config.build)?;
    let parts = split(&samples, &config.build)?;
    let vocab = Vocabulary::from_samples(&parts.train, config.max_vocabulary);
    let scorer = EncoderScorer::new(vocab, config.encoder.clone(), config.init)?;
    let untrained = evaluate(&scorer, &parts.test)?;
    let (model, report) = fit_encoder(scorer, &parts.train, &parts.validation, &config.train)?;
    let test = evaluate(&model, &parts.test)?;
    let lexical = LexicalOverlapScorer;
    let mut trained = ComparisonEntry::new(&model);
    if let Some(loss) = report.final_train_loss() {
        trained = trained.with_train_loss(loss);
    }
    let comparison = compare(
        &[trained, ComparisonEntry::new(&lexical)],
        &parts.test,
        config.synth.seed,
    )?;
    Ok(ProtocolOutcome {
        records,
        split: parts,
        untrained,
        model,
        report,
        test,
        comparison,
        elapsed: start.elapsed(),
    })
}
