//! Fine-tuning the encoder scorer as a four-way multiple-choice problem.
//!
//! For a sample with candidate scores `s` and culprit index `k`, the loss
//! is `-log softmax(s)[k]`; a batch averages it over its samples. Its
//! gradient with respect to each score is `(p_i - t_i) / N`, which is fed
//! into the encoder's backward pass for each of the four pairs.
//!
//! Parameters are updated with Adam. After every epoch the validation set
//! is evaluated and the parameters of the epoch with the best validation
//! accuracy are kept; all epochs are always run.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::resample_distractors;
use crate::domain::McqaSample;
use crate::encoder::Encoder;
use crate::evaluator::{evaluate_scores, EvalReport};
use crate::scorer::{log_softmax, softmax, AnyScorer, EncoderScorer, PairScorer};
use crate::tokenizer::TokenSequence;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub resample_distractors_per_epoch: bool,
    /// Linear warmup length in optimizer steps; 0 disables warmup.
    pub warmup_steps: usize,
    /// Global gradient-norm clipping threshold.
    pub max_grad_norm: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 5e-5,
            batch_size: 8,
            seed: 0,
            resample_distractors_per_epoch: false,
            warmup_steps: 0,
            max_grad_norm: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        Ok(())
    }

    pub fn optimizer_description(&self) -> String {
        format!(
            "adam(lr={}, beta1={}, beta2={}, eps={}, weight_decay=0, warmup_steps={}, clip={})",
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_epsilon,
            self.warmup_steps,
            self.max_grad_norm.map_or("off".to_string(), |m| m.to_string()),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub per_epoch: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub optimizer: String,
    pub steps: usize,
}

impl TrainReport {
    /// Training loss at the end of the last epoch.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.per_epoch.last().map(|m| m.train_loss)
    }

    pub fn best(&self) -> Option<&EpochMetrics> {
        self.per_epoch.get(self.best_epoch.checked_sub(1)?)
    }

    /// One line per epoch: `epoch train_loss validation_loss validation_accuracy`.
    pub fn to_metrics_text(&self) -> String {
        let mut out = String::from("# epoch train_loss validation_loss validation_accuracy\n");
        for m in &self.per_epoch {
            out.push_str(&format!(
                "{} {:.6} {:.6} {:.6}\n",
                m.epoch, m.train_loss, m.validation_loss, m.validation_accuracy
            ));
        }
        out.push_str(&format!("# best_epoch {}\n# optimizer {}\n", self.best_epoch, self.optimizer));
        out
    }
}

/// Index (0-based) of the highest accuracy; the earliest wins ties.
pub fn best_epoch_index(accuracies: &[f64]) -> Option<usize> {
    crate::scorer::argmax(accuracies)
}

/// Cross-entropy of the softmax over `raw_scores` against `label`.
///
/// ```
/// let loss = culprit::trainer::mc_loss(&[0.0; 4], 2).unwrap();
/// assert!((loss - 4f64.ln()).abs() < 1e-12);
/// ```
pub fn mc_loss(raw_scores: &[f64], label: usize) -> Result<f64> {
    if label >= raw_scores.len() {
        return Err(Error::LabelOutOfRange {
            label,
            candidates: raw_scores.len(),
        });
    }
    Ok((-log_softmax(raw_scores)?[label]).max(0.0))
}

/// Mean of [`mc_loss`] over a batch.
pub fn batch_loss(rows: &[(Vec<f64>, usize)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyCorpus("batch"));
    }
    let mut sum = 0.0;
    for (scores, label) in rows {
        sum += mc_loss(scores, *label)?;
    }
    Ok(sum / rows.len() as f64)
}

/// Forward and backward over the candidates of one sample. Adds
/// `weight · ∂loss/∂θ` into `grads` and returns the unweighted loss.
fn sample_step(encoder: &Encoder, seqs: &[TokenSequence], label: usize, weight: f64, grads: &mut [f64]) -> Result<f64> {
    let (scores, caches): (Vec<f64>, Vec<_>) = seqs.iter().map(|s| encoder.forward(s)).unzip();
    let loss = mc_loss(&scores, label)?;
    let probs = softmax(&scores)?;
    for (i, cache) in caches.iter().enumerate() {
        let target = (i == label) as u8 as f64;
        encoder.backward(cache, weight * (probs[i] - target), grads);
    }
    Ok(loss)
}

fn encode_corpus(scorer: &EncoderScorer, corpus: &[McqaSample]) -> Vec<Vec<TokenSequence>> {
    corpus
        .iter()
        .map(|s| {
            s.candidates
                .iter()
                .map(|c| scorer.encode(&s.error_text, &c.message_text))
                .collect()
        })
        .collect()
}

fn check_corpus(corpus: &[McqaSample], what: &'static str) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(what));
    }
    let report = crate::domain::validate_corpus(corpus);
    if let Some(v) = report.violations.first() {
        return Err(Error::invalid(format!(
            "{what} has {} violation(s), first: {v}",
            report.violations.len()
        )));
    }
    Ok(())
}

/// Evaluates an encoder scorer on pre-encoded samples.
fn evaluate_encoded(encoder: &Encoder, encoded: &[Vec<TokenSequence>], labels: &[usize]) -> Result<EvalReport> {
    let scores: Vec<Vec<f64>> = encoded
        .iter()
        .map(|seqs| seqs.iter().map(|s| encoder.score(s)).collect())
        .collect();
    evaluate_scores(&scores, labels)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, c: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.adam_beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.adam_beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.adam_beta1 * self.m[i] + (1.0 - c.adam_beta1) * g;
            self.v[i] = c.adam_beta2 * self.v[i] + (1.0 - c.adam_beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + c.adam_epsilon);
        }
    }
}

/// Type-checks that `scorer` is trainable and fits it.
pub fn fit(
    scorer: AnyScorer,
    train: &[McqaSample],
    validation: &[McqaSample],
    config: &TrainConfig,
) -> Result<(EncoderScorer, TrainReport)> {
    match scorer {
        AnyScorer::Encoder(s) => fit_encoder(s, train, validation, config),
        other => Err(Error::NotTrainable(other.kind().to_string())),
    }
}

/// Trains for `config.epochs` epochs and returns the parameters of the
/// epoch with the best validation accuracy.
pub fn fit_encoder(
    mut scorer: EncoderScorer,
    train: &[McqaSample],
    validation: &[McqaSample],
    config: &TrainConfig,
) -> Result<(EncoderScorer, TrainReport)> {
    config.validate()?;
    check_corpus(train, "training corpus")?;
    check_corpus(validation, "validation corpus")?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut train_set: Vec<McqaSample> = train.to_vec();
    let mut encoded = encode_corpus(&scorer, &train_set);
    let val_encoded = encode_corpus(&scorer, validation);
    let val_labels: Vec<usize> = validation.iter().map(|s| s.label).collect();

    let n_params = scorer.encoder().parameters().len();
    let mut adam = Adam::new(n_params);
    let mut grads = vec![0.0; n_params];
    let mut per_epoch = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut steps = 0usize;

    for epoch in 1..=config.epochs {
        if config.resample_distractors_per_epoch && epoch > 1 {
            train_set = resample_distractors(train, &mut rng);
            encoded = encode_corpus(&scorer, &train_set);
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                loss_sum += sample_step(scorer.encoder(), &encoded[i], train_set[i].label, weight, &mut grads)?;
            }
            if let Some(max_norm) = config.max_grad_norm {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    grads.iter_mut().for_each(|g| *g *= s);
                }
            }
            steps += 1;
            let lr = if config.warmup_steps > 0 && steps <= config.warmup_steps {
                config.learning_rate * steps as f64 / config.warmup_steps as f64
            } else {
                config.learning_rate
            };
            adam.step(scorer.encoder_mut().parameters_mut(), &grads, lr, config);
        }

        let val = evaluate_encoded(scorer.encoder(), &val_encoded, &val_labels)?;
        per_epoch.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            validation_loss: val.mean_loss,
            validation_accuracy: val.accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _, _)| val.accuracy > *acc) {
            best = Some((val.accuracy, epoch, scorer.encoder().parameters().to_vec()));
        }
    }

    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    scorer.encoder_mut().parameters_mut().copy_from_slice(&params);
    let report = TrainReport {
        per_epoch,
        best_epoch,
        optimizer: config.optimizer_description(),
        steps,
    };
    Ok((scorer, report))
}

/// `mc_loss(a, label) - mc_loss(b, label)`, evaluated from the score
/// differences so that the two losses' common magnitude does not cancel.
pub fn loss_difference(a: &[f64], b: &[f64], label: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("score vectors differ in length"));
    }
    if label >= a.len() {
        return Err(Error::LabelOutOfRange {
            label,
            candidates: a.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NumericInput("non-finite score".into()));
    }
    let m = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let w = (y - m).exp();
        num += w * (x - y).exp_m1();
        den += w;
    }
    Ok((num / den).ln_1p() - (a[label] - b[label]))
}

/// Result of [`finite_difference_check`].
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Per-parameter relative error, in parameter order.
    pub relative_errors: Vec<f64>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Largest parameter count [`finite_difference_check`] accepts.
pub const GRADIENT_CHECK_MAX_PARAMS: usize = 5000;

/// Compares the analytic gradient of the sample loss with central finite
/// differences, parameter by parameter. Each difference of losses is taken
/// with [`loss_difference`]. The relative error of each entry
/// is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check(scorer: &EncoderScorer, sample: &McqaSample, epsilon: f64) -> Result<GradientCheck> {
    let n_params = scorer.encoder().parameters().len();
    if n_params > GRADIENT_CHECK_MAX_PARAMS {
        return Err(Error::invalid(format!(
            "{n_params} parameters exceed the exhaustive-check limit of {GRADIENT_CHECK_MAX_PARAMS}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let seqs: Vec<TokenSequence> = sample
        .candidates
        .iter()
        .map(|c| scorer.encode(&sample.error_text, &c.message_text))
        .collect();
    let mut analytic = vec![0.0; n_params];
    sample_step(scorer.encoder(), &seqs, sample.label, 1.0, &mut analytic)?;

    let scores_of = |enc: &Encoder| -> Vec<f64> { seqs.iter().map(|s| enc.score(s)).collect() };
    let mut probe = scorer.encoder().clone();
    let mut numeric = vec![0.0; n_params];
    for i in 0..n_params {
        let orig = probe.parameters()[i];
        probe.parameters_mut()[i] = orig + epsilon;
        let up = scores_of(&probe);
        probe.parameters_mut()[i] = orig - epsilon;
        let down = scores_of(&probe);
        probe.parameters_mut()[i] = orig;
        numeric[i] = loss_difference(&up, &down, sample.label)? / (2.0 * epsilon);
    }
    let relative_errors: Vec<f64> = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .collect();
    let max_relative_error = relative_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradientCheck {
        max_relative_error,
        relative_errors,
        analytic,
        numeric,
    })
}
