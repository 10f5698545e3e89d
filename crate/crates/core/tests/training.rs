use culprit::dataset::{build_samples, split, BuildConfig, Split};
use culprit::encoder::{EncoderConfig, EncoderInit};
use culprit::evaluator::evaluate;
use culprit::scorer::EncoderScorer;
use culprit::synth::{generate, SynthConfig};
use culprit::tokenizer::Vocabulary;
use culprit::trainer::{fit_encoder, TrainConfig};

fn corpus(n: usize, signal: f64, seed: u64) -> Split {
    let records = generate(&SynthConfig {
        seed,
        n_records: n,
        signal_strength: signal,
        ..SynthConfig::default()
    })
    .unwrap();
    let build = BuildConfig::with_seed(seed);
    split(&build_samples(&records, &build).unwrap(), &build).unwrap()
}

fn scorer(parts: &Split, seed: u64) -> EncoderScorer {
    let vocab = Vocabulary::from_samples(&parts.train, 4096);
    EncoderScorer::new(vocab, EncoderConfig::tiny(0), EncoderInit { seed, ..EncoderInit::default() }).unwrap()
}

#[test]
fn forty_samples_with_full_signal_reduce_training_loss() {
    for seed in 0..3 {
        let parts = corpus(50, 1.0, seed);
        assert_eq!(parts.train.len(), 40);
        let untrained = scorer(&parts, seed);
        let before = evaluate(&untrained, &parts.train).unwrap().mean_loss;
        let config = TrainConfig { seed, ..TrainConfig::default() };
        let (_, report) = fit_encoder(untrained, &parts.train, &parts.validation, &config).unwrap();
        let after = report.final_train_loss().unwrap();
        assert!(after < before, "seed {seed}: {after} !< {before}");
    }
}

#[test]
fn untrained_validation_loss_is_near_ln4() {
    let parts = corpus(500, 0.8, 5);
    let loss = evaluate(&scorer(&parts, 5), &parts.validation).unwrap().mean_loss;
    assert!((loss - 4f64.ln()).abs() <= 0.15, "{loss}");
}

#[test]
fn training_is_deterministic_and_restores_the_best_epoch() {
    let parts = corpus(300, 0.8, 6);
    let config = TrainConfig { seed: 6, epochs: 3, ..TrainConfig::default() };
    let (a, ra) = fit_encoder(scorer(&parts, 6), &parts.train, &parts.validation, &config).unwrap();
    let (b, rb) = fit_encoder(scorer(&parts, 6), &parts.train, &parts.validation, &config).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.encoder().parameters(), b.encoder().parameters());

    assert_eq!(ra.per_epoch.len(), 3);
    let best = ra.best().unwrap();
    assert!(ra.per_epoch.iter().all(|m| m.validation_accuracy <= best.validation_accuracy));
    let restored = evaluate(&a, &parts.validation).unwrap();
    assert_eq!(restored.accuracy, best.validation_accuracy);
    assert_eq!(restored.mean_loss, best.validation_loss);
}

#[test]
fn different_seeds_train_differently() {
    let parts = corpus(120, 0.8, 7);
    let fit = |seed| {
        let config = TrainConfig { seed, epochs: 1, ..TrainConfig::default() };
        fit_encoder(scorer(&parts, 7), &parts.train, &parts.validation, &config).unwrap().0
    };
    assert_ne!(fit(1).encoder().parameters(), fit(2).encoder().parameters());
}
