use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use culprit::artifact;
use culprit::domain::read_corpus;
use culprit::encoder::{EncoderConfig, EncoderInit};
use culprit::kv::KeyValues;
use culprit::scorer::EncoderScorer;
use culprit::tokenizer::Vocabulary;

fn culprit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_culprit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = culprit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus_len(path: &Path) -> usize {
    read_corpus(BufReader::new(fs::File::open(path).unwrap())).unwrap().len()
}

#[test]
fn synth_then_build_gives_2000_250_250() {
    let dir = tempfile::tempdir().unwrap();
    let d = p(dir.path());
    ok(&["synth", "--n", "2500", "--seed", "7", "--out", d]);
    let printed = ok(&["build", "--ratios", "0.8,0.1,0.1", "--out", d]);
    assert!(printed.contains("train 2000, validation 250, test 250"), "{printed}");
    assert_eq!(corpus_len(&dir.path().join("corpus.jsonl")), 2500);
    assert_eq!(corpus_len(&dir.path().join("corpus.train.jsonl")), 2000);
    assert_eq!(corpus_len(&dir.path().join("corpus.validation.jsonl")), 250);
    assert_eq!(corpus_len(&dir.path().join("corpus.test.jsonl")), 250);
}

#[test]
fn manifest_reruns_the_identical_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "120", "--seed", "3", "--signal-strength", "0.6", "--out", p(d)]);
    ok(&["build", "--seed", "5", "--out", p(d)]);
    let records = fs::read(d.join("records.jsonl")).unwrap();
    let train = fs::read(d.join("corpus.train.jsonl")).unwrap();
    fs::remove_file(d.join("records.jsonl")).unwrap();
    fs::remove_file(d.join("corpus.train.jsonl")).unwrap();

    ok(&["--config", p(&d.join("synth.manifest")), "synth"]);
    ok(&["--config", p(&d.join("build.manifest")), "build"]);
    assert_eq!(fs::read(d.join("records.jsonl")).unwrap(), records);
    assert_eq!(fs::read(d.join("corpus.train.jsonl")).unwrap(), train);

    let manifest = fs::read_to_string(d.join("synth.manifest")).unwrap();
    let kv = KeyValues::parse(&manifest).unwrap();
    assert_eq!(kv.get("signal-strength"), Some("0.6"));
    assert!(manifest.contains("# output"));
}

fn pipeline(root: &Path) -> (String, String, Vec<u8>) {
    let d = p(root);
    ok(&["synth", "--n", "240", "--seed", "2", "--out", d]);
    ok(&["build", "--seed", "2", "--out", d]);
    ok(&["train", "--seed", "2", "--epochs", "2", "--hidden-width", "16", "--ffn-width", "32", "--out", d]);
    let model = root.join("model");
    ok(&["eval", "--model", p(&model), "--out", d]);
    (
        fs::read_to_string(root.join("metrics.txt")).unwrap(),
        fs::read_to_string(root.join("eval.txt")).unwrap(),
        fs::read(model.join(artifact::PARAMS_FILE)).unwrap(),
    )
}

#[test]
fn pipeline_is_deterministic_end_to_end() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    assert_eq!(first.0, second.0);
    assert_eq!(first.1.replace(p(a.path()), ""), second.1.replace(p(b.path()), ""));
    assert_eq!(first.2, second.2);
    assert_eq!(first.0.lines().filter(|l| !l.starts_with('#')).count(), 2);

    let out = ok(&["compare", "--model", p(&a.path().join("model")), "--out", p(a.path())]);
    assert!(out.contains("lexical_overlap"), "{out}");
    assert!(out.contains("Random Agent"), "{out}");
    assert_eq!(fs::read_to_string(a.path().join("comparison.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn identify_with_one_suspect_prints_probability_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let vocab = Vocabulary::build(["solver assert physics audio"], 16);
    let scorer = EncoderScorer::new(vocab, EncoderConfig::tiny(0), EncoderInit::default()).unwrap();
    let model = d.join("m");
    artifact::save(&model, &scorer.into(), &KeyValues::new()).unwrap();
    fs::write(d.join("e.txt"), "Assert: solver count in Physics/Solver.cpp").unwrap();
    fs::write(d.join("s.jsonl"), "{\"change_id\": \"CL7\", \"message_text\": \"[Physics] solver fix\"}\n").unwrap();

    let out = ok(&[
        "identify",
        "--error",
        p(&d.join("e.txt")),
        "--suspects",
        p(&d.join("s.jsonl")),
        "--model",
        p(&model),
    ]);
    let row = out.lines().find(|l| !l.starts_with('#')).unwrap();
    let fields: Vec<&str> = row.split(' ').collect();
    assert_eq!(&fields[..3], ["1", "CL7", "1.000000"]);
}

#[test]
fn corrupt_corpus_line_is_a_domain_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "60", "--out", p(d)]);
    ok(&["build", "--out", p(d)]);
    let path = d.join("corpus.test.jsonl");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[2] = "{\"sample_id\": ".into();
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let out = culprit(&["eval", "--scorer", "lexical", "--corpus", p(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: format: "), "{stderr}");
    assert!(stderr.contains("line 3"), "{stderr}");
    assert_eq!(stderr.trim_end().lines().count(), 1);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(culprit(&["synth"]).status.code(), Some(2));
    assert_eq!(culprit(&["train", "--out", "x", "--epochs", "many"]).status.code(), Some(2));
    assert_eq!(culprit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(culprit(&["eval", "--corpus", "c", "--model", "m", "--scorer", "lexical"]).status.code(), Some(2));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = culprit(&["eval", "--scorer", "lexical", "--corpus", p(&dir.path().join("none.jsonl"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: io: "));
}

#[test]
fn serve_answers_health_and_persists_issues() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_culprit"))
        .args(["serve", "--port", "0", "--data-dir", p(dir.path())])
        .env_remove("CULPRIT_ADMIN_TOKEN")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("{line}")).to_string();

    let request = |method: &str, path: &str, body: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(
            s,
            "{method} {path} HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let health = request("GET", "/health", "");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"status\":\"ok\""), "{health}");
    let created = request(
        "POST",
        "/issues",
        r#"{"error_text": "boom", "suspects": [{"change_id": "A", "message_text": "m"}]}"#,
    );
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    let identify = request("POST", "/issues/iss-000001/identify", "{}");
    assert!(identify.starts_with("HTTP/1.1 503"), "{identify}");
    child.kill().unwrap();
    child.wait().unwrap();

    let log = fs::read_to_string(dir.path().join("events.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 1);
}
