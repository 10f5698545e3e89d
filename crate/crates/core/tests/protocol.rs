use culprit::artifact;
use culprit::evaluator::evaluate;
use culprit::kv::KeyValues;
use culprit::protocol::{run, ProtocolConfig};

#[test]
fn synthetic_protocol_learns_and_beats_the_baselines() {
    let out = run(&ProtocolConfig::with_seed(0)).unwrap();
    let sizes = (out.split.train.len(), out.split.validation.len(), out.split.test.len());
    assert_eq!(sizes, (2000, 250, 250));
    assert!((out.untrained.mean_loss - 4f64.ln()).abs() <= 0.15, "{}", out.untrained.mean_loss);
    assert!(out.test.accuracy >= 0.45, "{}", out.test.accuracy);

    let rows = &out.comparison.rows;
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].kind, "encoder_mc", "{}", out.comparison.to_text());
    assert_eq!(rows[0].accuracy, out.test.accuracy);

    let best = out.report.best().unwrap();
    assert_eq!(evaluate(&out.model, &out.split.validation).unwrap().accuracy, best.validation_accuracy);

    let dir = tempfile::tempdir().unwrap();
    artifact::save(dir.path(), &out.model.clone().into(), &KeyValues::new()).unwrap();
    let loaded = artifact::load(dir.path()).unwrap();
    assert_eq!(evaluate(&loaded, &out.split.test).unwrap(), out.test);
}
