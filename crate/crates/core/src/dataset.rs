//! Multiple-choice sample construction and train/validation/test splits.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{CandidateText, LabeledRecord, McqaSample, NUM_CHOICES};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub seed: u64,
    pub num_candidates: usize,
    /// Train, validation and test fractions.
    pub split_ratios: [f64; 3],
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_candidates: NUM_CHOICES,
            split_ratios: [0.8, 0.1, 0.1],
        }
    }
}

impl BuildConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_candidates != NUM_CHOICES {
            return Err(Error::invalid(format!(
                "num_candidates must be {NUM_CHOICES}, got {}",
                self.num_candidates
            )));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios {:?} must be positive and sum to 1",
                self.split_ratios
            )));
        }
        Ok(())
    }
}

/// Builds one four-way sample per record.
///
/// Distractors are the culprits of three other records, drawn uniformly
/// without replacement among records whose culprit id differs from this
/// record's (and from each other's). The culprit's slot follows a
/// round-robin over a seeded shuffle of the records, so each slot is used
/// `⌊n/4⌋` or `⌈n/4⌉` times.
pub fn build_samples(records: &[LabeledRecord], config: &BuildConfig) -> Result<Vec<McqaSample>> {
    config.validate()?;
    let k = config.num_candidates;
    if records.len() < k {
        return Err(Error::InsufficientPool {
            needed: k,
            got: records.len(),
        });
    }
    let distinct: HashSet<&str> = records.iter().map(|r| r.culprit.change_id.as_str()).collect();
    if distinct.len() < k {
        return Err(Error::InsufficientDistinctPool {
            needed: k,
            got: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    let start = rng.random_range(0..k);
    let mut positions = vec![0usize; records.len()];
    for (rank, &idx) in order.iter().enumerate() {
        positions[idx] = (start + rank) % k;
    }

    let mut samples = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let mut chosen: Vec<usize> = Vec::with_capacity(k - 1);
        let mut ids: HashSet<&str> = HashSet::from([record.culprit.change_id.as_str()]);
        while chosen.len() < k - 1 {
            let j = rng.random_range(0..records.len());
            let id = records[j].culprit.change_id.as_str();
            if j != i && ids.insert(id) {
                chosen.push(j);
            }
        }
        let mut candidates: Vec<CandidateText> = chosen
            .iter()
            .map(|&j| CandidateText {
                change_id: records[j].culprit.change_id.clone(),
                message_text: records[j].culprit.message_text.clone(),
            })
            .collect();
        candidates.insert(
            positions[i],
            CandidateText {
                change_id: record.culprit.change_id.clone(),
                message_text: record.culprit.message_text.clone(),
            },
        );
        samples.push(McqaSample {
            sample_id: format!("mc-{}", record.record_id),
            error_text: record.failure.error_text.clone(),
            candidates,
            label: positions[i],
            source_issue_id: record.record_id.clone(),
        });
    }
    Ok(samples)
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<McqaSample>,
    pub validation: Vec<McqaSample>,
    pub test: Vec<McqaSample>,
}

fn floor_count(n: usize, ratio: f64) -> usize {
    // the epsilon absorbs representation error such as 0.29 * 100 = 28.999…
    (n as f64 * ratio + 1e-9).floor() as usize
}

/// Seeded shuffle of the sample groups (by `source_issue_id`) followed by a
/// contiguous cut. Validation and test receive `⌊n·r⌋` samples; train gets
/// the remainder. A group is never split; it lands in the subset in which
/// its first sample falls.
pub fn split(samples: &[McqaSample], config: &BuildConfig) -> Result<Split> {
    config.validate()?;
    let n = samples.len();
    if n < 10 {
        return Err(Error::invalid(format!("split needs at least 10 samples, got {n}")));
    }
    let n_val = floor_count(n, config.split_ratios[1]);
    let n_test = floor_count(n, config.split_ratios[2]);
    let n_train = n - n_val - n_test;

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut by_source: HashMap<&str, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        let g = *by_source.entry(s.source_issue_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    groups.shuffle(&mut rng);

    let mut out = Split {
        train: Vec::with_capacity(n_train),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
    };
    let mut cursor = 0usize;
    for group in groups {
        let target = if cursor < n_train {
            &mut out.train
        } else if cursor < n_train + n_val {
            &mut out.validation
        } else {
            &mut out.test
        };
        cursor += group.len();
        target.extend(group.into_iter().map(|i| samples[i].clone()));
    }
    Ok(out)
}

/// How often the culprit sits in each slot.
pub fn position_counts(samples: &[McqaSample]) -> [usize; NUM_CHOICES] {
    let mut counts = [0; NUM_CHOICES];
    for s in samples {
        if s.label < NUM_CHOICES {
            counts[s.label] += 1;
        }
    }
    counts
}

/// Replaces the distractors of each sample with candidates drawn from the
/// corpus-wide pool, keeping the culprit and its slot. Used for optional
/// per-epoch resampling during training.
pub fn resample_distractors(samples: &[McqaSample], rng: &mut impl Rng) -> Vec<McqaSample> {
    let mut pool: Vec<&CandidateText> = Vec::new();
    let mut seen = HashSet::new();
    for s in samples {
        for c in &s.candidates {
            if seen.insert(c.change_id.as_str()) {
                pool.push(c);
            }
        }
    }
    samples
        .iter()
        .map(|s| {
            let Some(culprit) = s.culprit() else {
                return s.clone();
            };
            if pool.len() < s.candidates.len() {
                return s.clone();
            }
            let mut ids: HashSet<&str> = HashSet::from([culprit.change_id.as_str()]);
            let mut candidates = Vec::with_capacity(s.candidates.len());
            while candidates.len() < s.candidates.len() - 1 {
                let c = pool[rng.random_range(0..pool.len())];
                if ids.insert(c.change_id.as_str()) {
                    candidates.push(c.clone());
                }
            }
            candidates.insert(s.label, culprit.clone());
            McqaSample {
                candidates,
                ..s.clone()
            }
        })
        .collect()
}
