use culprit::dataset::{build_samples, BuildConfig};
use culprit::domain::McqaSample;
use culprit::evaluator::evaluate;
use culprit::scorer::{LexicalOverlapScorer, RandomScorer};
use culprit::synth::{generate, SynthConfig};

fn corpus(signal: f64, seed: u64) -> Vec<McqaSample> {
    let records = generate(&SynthConfig {
        seed,
        signal_strength: signal,
        ..SynthConfig::default()
    })
    .unwrap();
    build_samples(&records, &BuildConfig::with_seed(seed)).unwrap()
}

#[test]
fn lexical_accuracy_grows_with_signal() {
    let acc: Vec<f64> = [1.0, 0.5, 0.0]
        .iter()
        .map(|&s| evaluate(&LexicalOverlapScorer, &corpus(s, 1)).unwrap().accuracy)
        .collect();
    assert!(acc[0] - acc[1] > 0.05, "{acc:?}");
    assert!(acc[1] - acc[2] > 0.05, "{acc:?}");
}

#[test]
fn lexical_overlap_is_at_chance_without_signal() {
    let c = corpus(0.0, 2);
    assert!(c.len() >= 2000);
    let r = evaluate(&LexicalOverlapScorer, &c).unwrap();
    assert!((r.accuracy - 0.25).abs() <= 0.05, "{}", r.accuracy);
}

#[test]
fn random_scorer_is_at_chance() {
    let c = corpus(0.8, 3);
    for seed in 0..3 {
        let r = evaluate(&RandomScorer::new(seed), &c).unwrap();
        assert!((r.accuracy - 0.25).abs() <= 0.03, "seed {seed}: {}", r.accuracy);
    }
}
