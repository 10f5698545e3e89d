//! Accuracy and loss on multiple-choice corpora, and model comparison
//! tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{McqaSample, NUM_CHOICES};
use crate::scorer::{argmax, PairScorer, RandomScorer, ScorerKind};
use crate::trainer::mc_loss;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer_kind: String,
    pub model: String,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub n_samples: usize,
    pub correct: usize,
    /// Accuracy restricted to samples whose culprit sits in each slot.
    pub per_position_accuracy: [f64; NUM_CHOICES],
    pub position_counts: [usize; NUM_CHOICES],
}

/// Scores every candidate of every sample. A sample is correct when the
/// argmax of its raw scores (lowest index on ties) equals its label.
pub fn evaluate(scorer: &(impl PairScorer + ?Sized), corpus: &[McqaSample]) -> Result<EvalReport> {
    let scores: Vec<Vec<f64>> = corpus
        .iter()
        .map(|s| {
            s.candidates
                .iter()
                .map(|c| scorer.score(&s.error_text, &c.message_text))
                .collect()
        })
        .collect();
    let labels: Vec<usize> = corpus.iter().map(|s| s.label).collect();
    let mut report = evaluate_scores(&scores, &labels)?;
    report.scorer_kind = scorer.kind().to_string();
    report.model = scorer.identifier();
    Ok(report)
}

/// [`evaluate`] over precomputed raw scores.
pub fn evaluate_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<EvalReport> {
    if scores.is_empty() {
        return Err(Error::EmptyCorpus("evaluation corpus"));
    }
    assert_eq!(scores.len(), labels.len());
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut pos_correct = [0usize; NUM_CHOICES];
    let mut pos_count = [0usize; NUM_CHOICES];
    for (row, &label) in scores.iter().zip(labels) {
        loss_sum += mc_loss(row, label)?;
        let hit = argmax(row) == Some(label);
        correct += hit as usize;
        if label < NUM_CHOICES {
            pos_count[label] += 1;
            pos_correct[label] += hit as usize;
        }
    }
    let n = scores.len();
    let mut per_position_accuracy = [0.0; NUM_CHOICES];
    for p in 0..NUM_CHOICES {
        if pos_count[p] > 0 {
            per_position_accuracy[p] = pos_correct[p] as f64 / pos_count[p] as f64;
        }
    }
    Ok(EvalReport {
        scorer_kind: String::new(),
        model: String::new(),
        accuracy: correct as f64 / n as f64,
        mean_loss: loss_sum / n as f64,
        n_samples: n,
        correct,
        per_position_accuracy,
        position_counts: pos_count,
    })
}

/// One scorer to compare, with the final-epoch training loss when it was
/// trained.
pub struct ComparisonEntry<'a> {
    pub name: String,
    pub scorer: &'a dyn PairScorer,
    pub train_loss: Option<f64>,
}

impl<'a> ComparisonEntry<'a> {
    pub fn new(scorer: &'a dyn PairScorer) -> Self {
        Self {
            name: scorer.identifier(),
            scorer,
            train_loss: None,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_train_loss(mut self, loss: f64) -> Self {
        self.train_loss = Some(loss);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub kind: String,
    pub train_loss: Option<f64>,
    pub eval_loss: f64,
    pub accuracy: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Evaluates each scorer on `corpus`. Rows are sorted by accuracy, best
/// first; a random-agent row (seeded with `random_seed`) is added unless a
/// random scorer is already present.
pub fn compare(entries: &[ComparisonEntry<'_>], corpus: &[McqaSample], random_seed: u64) -> Result<ComparisonTable> {
    if entries.is_empty() {
        return Err(Error::invalid("compare needs at least one scorer"));
    }
    let mut rows = Vec::with_capacity(entries.len() + 1);
    for e in entries {
        let r = evaluate(e.scorer, corpus)?;
        rows.push(ComparisonRow {
            model: e.name.clone(),
            kind: r.scorer_kind,
            train_loss: e.train_loss,
            eval_loss: r.mean_loss,
            accuracy: r.accuracy,
            n_samples: r.n_samples,
        });
    }
    if !entries.iter().any(|e| e.scorer.kind() == ScorerKind::Random) {
        let random = RandomScorer::new(random_seed);
        let r = evaluate(&random, corpus)?;
        rows.push(ComparisonRow {
            model: "Random Agent".into(),
            kind: r.scorer_kind,
            train_loss: None,
            eval_loss: r.mean_loss,
            accuracy: r.accuracy,
            n_samples: r.n_samples,
        });
    }
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let header = ["Model", "Training Loss", "Evaluation Loss", "Accuracy"];
        let cells: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    r.train_loss.map_or_else(|| "--".to_string(), |l| format!("{l:.4}")),
                    format!("{:.4}", r.eval_loss),
                    format!("{:.4}", r.accuracy),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: [&str; 4]| {
            let _ = write!(out, "{:<w0$}", row[0], w0 = widths[0]);
            for (c, w) in row[1..].iter().zip(&widths[1..]) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        };
        line(&mut out, header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3]]);
        for row in &cells {
            line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }

    /// One JSON object per row.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("rows serialize"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_samples, position_counts, BuildConfig};
    use crate::domain::{ChangeCandidate, FailureEvent, LabeledRecord};
    use crate::scorer::{ConstantScorer, LexicalOverlapScorer};

    fn corpus(n: usize) -> Vec<McqaSample> {
        let records: Vec<_> = (0..n)
            .map(|i| LabeledRecord {
                record_id: format!("r{i}"),
                failure: FailureEvent::new(format!("e{i}"), &format!("error about topic{i}")).unwrap(),
                culprit: ChangeCandidate::new(format!("c{i}"), &format!("fix topic{i}")).unwrap(),
            })
            .collect();
        build_samples(&records, &BuildConfig::with_seed(2)).unwrap()
    }

    /// Scores 1 for the culprit text of whichever sample the error belongs to.
    struct Oracle(Vec<McqaSample>);

    impl PairScorer for Oracle {
        fn kind(&self) -> ScorerKind {
            ScorerKind::Constant
        }
        fn score(&self, e: &str, c: &str) -> f64 {
            let s = self.0.iter().find(|s| s.error_text == e).unwrap();
            (s.culprit().unwrap().message_text == c) as u8 as f64
        }
    }

    #[test]
    fn perfect_scorer_is_fully_accurate() {
        let c = corpus(20);
        let r = evaluate(&Oracle(c.clone()), &c).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.correct, 20);
    }

    #[test]
    fn constant_scorer_accuracy_is_fraction_of_label_zero() {
        let c = corpus(103);
        let r = evaluate(&ConstantScorer::default(), &c).unwrap();
        let zeros = position_counts(&c)[0];
        assert_eq!(r.correct, zeros);
        assert_eq!(r.accuracy, zeros as f64 / 103.0);
        assert!((r.mean_loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(r.per_position_accuracy, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(evaluate(&ConstantScorer::default(), &[]), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn per_position_accuracy_averages_to_overall() {
        let c = corpus(57);
        let r = evaluate(&LexicalOverlapScorer, &c).unwrap();
        let weighted: f64 = (0..4)
            .map(|p| r.per_position_accuracy[p] * r.position_counts[p] as f64)
            .sum::<f64>()
            / r.n_samples as f64;
        assert!((weighted - r.accuracy).abs() < 1e-9);
    }

    #[test]
    fn evaluation_ignores_corpus_order() {
        let c = corpus(40);
        let mut shuffled = c.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let a = evaluate(&LexicalOverlapScorer, &c).unwrap();
        let b = evaluate(&LexicalOverlapScorer, &shuffled).unwrap();
        assert_eq!(a.correct, b.correct);
        assert!((a.mean_loss - b.mean_loss).abs() < 1e-12);
    }

    #[test]
    fn comparison_adds_one_random_row_and_sorts() {
        let c = corpus(60);
        let lexical = LexicalOverlapScorer;
        let table = compare(&[ComparisonEntry::new(&lexical)], &c, 1).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].kind, "lexical_overlap");
        assert_eq!(table.rows[1].model, "Random Agent");

        let random = RandomScorer::new(3);
        let table = compare(&[ComparisonEntry::new(&random)], &c, 1).unwrap();
        assert_eq!(table.rows.len(), 1);
    }

    #[test]
    fn table_renders_placeholder_for_untrained_rows() {
        let table = ComparisonTable {
            rows: vec![
                ComparisonRow {
                    model: "BERT".into(),
                    kind: "encoder_mc".into(),
                    train_loss: Some(0.72),
                    eval_loss: 1.11,
                    accuracy: 0.71,
                    n_samples: 250,
                },
                ComparisonRow {
                    model: "Random Agent".into(),
                    kind: "random".into(),
                    train_loss: None,
                    eval_loss: 1.386,
                    accuracy: 0.25,
                    n_samples: 250,
                },
            ],
        };
        let text = table.to_text();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[2].starts_with("BERT") && lines[2].contains("0.7200") && lines[2].ends_with("0.7100"));
        assert!(lines[3].contains("--"));
        let widths: Vec<_> = lines.iter().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(table.to_ndjson().lines().count(), 2);
    }
}
