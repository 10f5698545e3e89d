//! Culprit-change ranking for failing tests.
//!
//! Given the error message of a failing test and the batch of code changes
//! that were tested together, a [`PairScorer`](scorer::PairScorer) assigns a
//! real score to each `(error, change)` pair independently; a softmax over
//! the batch turns those scores into probabilities. Models are trained as
//! four-way multiple-choice problems (one culprit plus three random
//! distractors) with cross-entropy loss, but because every pair is scored on
//! its own, inference works for any number of suspects.
//!
//! The crate is organised bottom-up:
//!
//! - [`domain`]: value types and the newline-delimited corpus formats.
//! - [`synth`]: a seeded generator of labeled failure records.
//! - [`dataset`]: turns labeled records into position-balanced samples and
//!   splits them.
//! - [`tokenizer`] and [`encoder`]: a small transformer encoder with a
//!   single-output head and hand-written backpropagation.
//! - [`scorer`]: the pair-scoring interface, softmax and baselines.
//! - [`trainer`] and [`evaluator`]: fitting with early stopping, accuracy and
//!   comparison tables.
//! - [`artifact`]: model directories on disk.
//! - [`protocol`]: the whole synthetic reproduction in one call.
//!
//! ```
//! use culprit::scorer::{score_candidates, LexicalOverlapScorer};
//! use culprit::domain::{ChangeCandidate, FailureEvent};
//!
//! let failure = FailureEvent::new("e1", "Testcase: \"AutoTest_SplitScreen\" asserted").unwrap();
//! let suspects = vec![
//!     ChangeCandidate::new("c1", "[Localization] Timestamp Formatter Entity").unwrap(),
//!     ChangeCandidate::new("c2", "[CharacterPhysics] Replace terrain in Autotest levels").unwrap(),
//! ];
//! let scored = score_candidates(&LexicalOverlapScorer, &failure, &suspects).unwrap();
//! assert!(scored[1].probability > scored[0].probability);
//! ```

pub mod artifact;
pub mod dataset;
pub mod domain;
pub mod encoder;
mod error;
pub mod evaluator;
pub mod kv;
pub mod protocol;
pub mod scorer;
pub mod synth;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
