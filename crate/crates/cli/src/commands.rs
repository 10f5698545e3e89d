use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use culprit::artifact;
use culprit::dataset::{build_samples, position_counts, split, BuildConfig};
use culprit::domain::{
    read_corpus, read_records, validate_corpus, validate_corpus_with_records, write_corpus, write_records,
    ChangeCandidate, FailureEvent, McqaSample, ValidationReport,
};
use culprit::encoder::{EncoderConfig, EncoderInit, MAX_TOKENS};
use culprit::evaluator::{compare, evaluate, ComparisonEntry};
use culprit::kv::KeyValues;
use culprit::scorer::{
    rank, score_candidates, AnyScorer, ConstantScorer, EncoderScorer, LexicalOverlapScorer, PairScorer, RandomScorer,
    ScorerKind,
};
use culprit::synth::{generate, SynthConfig};
use culprit::tokenizer::Vocabulary;
use culprit::trainer::{fit_encoder, TrainConfig};
use culprit::Error;
use sha2::{Digest, Sha256};

use crate::args::*;
use crate::{CliError, CliResult};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const TRAIN_FILE: &str = "corpus.train.jsonl";
pub const VALIDATION_FILE: &str = "corpus.validation.jsonl";
pub const TEST_FILE: &str = "corpus.test.jsonl";
pub const MODEL_DIR: &str = "model";
pub const METRICS_FILE: &str = "metrics.txt";

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Build(a) => build(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Identify(a) => identify(a),
        Command::Serve(a) => serve(a),
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    Error::InvalidInput(message.into()).into()
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(file_error(path))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(file_error(path))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(file_error(path))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(file_error(dir))
}

fn sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(file_error(path))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn read_corpus_file(path: &Path) -> CliResult<Vec<McqaSample>> {
    read_corpus(open(path)?).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: Error) -> CliError {
    match e {
        Error::Format { line, offset, message } => Error::Format {
            line,
            offset,
            message: format!("{}: {message}", path.display()),
        }
        .into(),
        other => other.into(),
    }
}

fn require_valid(path: &Path, report: ValidationReport) -> CliResult<()> {
    match report.violations.first() {
        None => Ok(()),
        Some(first) => Err(invalid(format!(
            "{} fails validation with {} violation(s); first: {first}",
            path.display(),
            report.violations.len()
        ))),
    }
}

fn write_corpus_file(path: &Path, samples: &[McqaSample]) -> CliResult<()> {
    let mut out = create(path)?;
    write_corpus(&mut out, samples)?;
    out.flush().map_err(file_error(path))
}

/// The resolved flags of one run, written as a config file that reruns it.
struct Manifest {
    command: &'static str,
    flags: KeyValues,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            flags: KeyValues::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn flag(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.flags.set(key, value);
        self
    }

    fn path_flag(&mut self, key: &str, path: &Path) -> &mut Self {
        self.flags.set(key, path.display());
        self
    }

    fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(format!("{}.manifest", self.command));
        let mut text = format!(
            "# culprit {} {}\n# rerun: culprit --config {} {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command,
            path.display(),
            self.command
        );
        for p in &self.inputs {
            text.push_str(&format!("# input {} sha256 {}\n", p.display(), sha256(p)?));
        }
        for p in &self.outputs {
            if p.is_file() {
                text.push_str(&format!("# output {} sha256 {}\n", p.display(), sha256(p)?));
            }
        }
        text.push_str(&self.flags.to_text());
        write_text(&path, &text)?;
        Ok(path)
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let d = SynthConfig::default();
    let config = SynthConfig {
        seed: a.seed,
        n_records: a.n.unwrap_or(d.n_records),
        n_subsystems: a.subsystems.unwrap_or(d.n_subsystems),
        signal_strength: a.signal_strength.unwrap_or(d.signal_strength),
        vocab_size: a.vocab_size.unwrap_or(d.vocab_size),
        median_message_words: a.median_message_words.unwrap_or(d.median_message_words),
        long_tail_fraction: a.long_tail_fraction.unwrap_or(d.long_tail_fraction),
        error_templates: d.error_templates,
    };
    let records = generate(&config)?;
    ensure_dir(&a.out)?;
    let path = a.out.join(RECORDS_FILE);
    let mut out = create(&path)?;
    write_records(&mut out, &records)?;
    out.flush().map_err(file_error(&path))?;

    let mut m = Manifest::new("synth");
    m.flag("n", config.n_records)
        .flag("seed", config.seed)
        .flag("signal-strength", config.signal_strength)
        .flag("subsystems", config.n_subsystems)
        .flag("vocab-size", config.vocab_size)
        .flag("median-message-words", config.median_message_words)
        .flag("long-tail-fraction", config.long_tail_fraction)
        .path_flag("out", &a.out);
    m.outputs.push(path.clone());
    m.write(&a.out)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn build(a: BuildArgs) -> CliResult<()> {
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| invalid(format!("--ratios needs three fractions, got {}", a.ratios.len())))?;
    let config = BuildConfig {
        seed: a.seed,
        split_ratios: ratios,
        ..BuildConfig::default()
    };
    let records_path = a.records.clone().unwrap_or_else(|| a.out.join(RECORDS_FILE));
    let records = read_records(open(&records_path)?).map_err(|e| in_file(&records_path, e))?;
    let samples = build_samples(&records, &config)?;
    let parts = split(&samples, &config)?;
    require_valid(&records_path, validate_corpus_with_records(&samples, &records))?;

    ensure_dir(&a.out)?;
    let files = [
        (CORPUS_FILE, &samples),
        (TRAIN_FILE, &parts.train),
        (VALIDATION_FILE, &parts.validation),
        (TEST_FILE, &parts.test),
    ];
    let mut m = Manifest::new("build");
    for (name, set) in files {
        let path = a.out.join(name);
        write_corpus_file(&path, set)?;
        m.outputs.push(path);
    }
    let ratio_text: Vec<String> = ratios.iter().map(f64::to_string).collect();
    m.path_flag("records", &records_path)
        .flag("seed", config.seed)
        .flag("ratios", ratio_text.join(","))
        .path_flag("out", &a.out);
    m.inputs.push(records_path);
    m.write(&a.out)?;
    println!(
        "built {} samples: train {}, validation {}, test {}; culprit positions {:?}",
        samples.len(),
        parts.train.len(),
        parts.validation.len(),
        parts.test.len(),
        position_counts(&samples)
    );
    Ok(())
}

fn train(a: TrainArgs) -> CliResult<()> {
    let train_path = a.train.clone().unwrap_or_else(|| a.out.join(TRAIN_FILE));
    let validation_path = a.validation.clone().unwrap_or_else(|| a.out.join(VALIDATION_FILE));
    let model_dir = a.model.clone().unwrap_or_else(|| a.out.join(MODEL_DIR));
    let train_set = read_corpus_file(&train_path)?;
    require_valid(&train_path, validate_corpus(&train_set))?;
    let validation_set = read_corpus_file(&validation_path)?;
    require_valid(&validation_path, validate_corpus(&validation_set))?;

    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
        resample_distractors_per_epoch: a.resample_distractors,
        warmup_steps: a.warmup_steps,
        max_grad_norm: a.max_grad_norm,
        ..TrainConfig::default()
    };
    let encoder = EncoderConfig {
        vocabulary_size: 0,
        layer_count: a.layers,
        hidden_width: a.hidden_width,
        attention_heads: a.heads,
        ffn_width: a.ffn_width,
        max_tokens: MAX_TOKENS,
        shared_word_embedding: a.shared_word_embedding,
    };
    let init = EncoderInit {
        seed: a.seed,
        std: a.init_std,
    };
    let vocab = Vocabulary::from_samples(&train_set, a.max_vocabulary);
    let scorer = EncoderScorer::new(vocab, encoder, init)?;
    let (trained, report) = fit_encoder(scorer, &train_set, &validation_set, &config)?;

    let mut extra = KeyValues::new();
    extra
        .set("train_seed", a.seed)
        .set("epochs", a.epochs)
        .set("best_epoch", report.best_epoch)
        .set("optimizer", &report.optimizer)
        .set("train_corpus", train_path.display());
    if let Some(loss) = report.final_train_loss() {
        extra.set("final_train_loss", loss);
    }
    artifact::save(&model_dir, &trained.into(), &extra)?;
    ensure_dir(&a.out)?;
    let metrics_path = a.out.join(METRICS_FILE);
    let metrics = report.to_metrics_text();
    write_text(&metrics_path, &metrics)?;

    let mut m = Manifest::new("train");
    m.path_flag("train", &train_path)
        .path_flag("validation", &validation_path)
        .path_flag("model", &model_dir)
        .path_flag("out", &a.out)
        .flag("seed", a.seed)
        .flag("epochs", a.epochs)
        .flag("learning-rate", a.learning_rate)
        .flag("batch-size", a.batch_size)
        .flag("warmup-steps", a.warmup_steps)
        .flag("resample-distractors", a.resample_distractors)
        .flag("max-vocabulary", a.max_vocabulary)
        .flag("layers", a.layers)
        .flag("hidden-width", a.hidden_width)
        .flag("heads", a.heads)
        .flag("ffn-width", a.ffn_width)
        .flag("init-std", a.init_std)
        .flag("shared-word-embedding", a.shared_word_embedding);
    if let Some(clip) = a.max_grad_norm {
        m.flag("max-grad-norm", clip);
    }
    m.inputs.extend([train_path, validation_path]);
    m.outputs.extend([metrics_path, model_dir.join(artifact::PARAMS_FILE)]);
    m.write(&a.out)?;
    print!("{metrics}");
    println!("model saved to {}", model_dir.display());
    Ok(())
}

fn resolve_scorer(a: &ScorerArgs) -> CliResult<AnyScorer> {
    if let Some(dir) = &a.model {
        return Ok(artifact::load(dir)?);
    }
    let name = a.scorer.as_deref().unwrap_or("lexical");
    Ok(match name.parse::<ScorerKind>()? {
        ScorerKind::LexicalOverlap => LexicalOverlapScorer.into(),
        ScorerKind::Random => RandomScorer::new(a.seed).into(),
        ScorerKind::Constant => ConstantScorer { value: 0.0 }.into(),
        ScorerKind::EncoderMc => return Err(invalid("the encoder scorer is loaded with --model DIR")),
    })
}

fn scorer_flags(m: &mut Manifest, a: &ScorerArgs) {
    match (&a.model, &a.scorer) {
        (Some(dir), _) => {
            m.path_flag("model", dir);
        }
        (None, Some(name)) => {
            m.flag("scorer", name).flag("seed", a.seed);
        }
        (None, None) => {}
    }
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let corpus_path = match (&a.corpus, &a.out) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => out.join(TEST_FILE),
        (None, None) => unreachable!("clap requires --corpus or --out"),
    };
    let corpus = read_corpus_file(&corpus_path)?;
    require_valid(&corpus_path, validate_corpus(&corpus))?;
    let scorer = resolve_scorer(&a.scorer)?;
    let report = evaluate(&scorer, &corpus)?;

    let mut kv = KeyValues::new();
    kv.set("scorer_kind", &report.scorer_kind)
        .set("model", &report.model)
        .set("corpus", corpus_path.display())
        .set("n_samples", report.n_samples)
        .set("correct", report.correct)
        .set("accuracy", format!("{:.6}", report.accuracy))
        .set("mean_loss", format!("{:.6}", report.mean_loss));
    for (i, (acc, n)) in report.per_position_accuracy.iter().zip(report.position_counts).enumerate() {
        kv.set(&format!("position_{i}_accuracy"), format!("{acc:.6}"))
            .set(&format!("position_{i}_count"), n);
    }
    let text = kv.to_text();
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        let path = out.join("eval.txt");
        write_text(&path, &text)?;
        let mut m = Manifest::new("eval");
        m.path_flag("corpus", &corpus_path).path_flag("out", out);
        scorer_flags(&mut m, &a.scorer);
        m.inputs.push(corpus_path);
        m.outputs.push(path);
        m.write(out)?;
    }
    print!("{text}");
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> CliResult<()> {
    let corpus_path = a.corpus.clone().unwrap_or_else(|| a.out.join(TEST_FILE));
    let corpus = read_corpus_file(&corpus_path)?;
    require_valid(&corpus_path, validate_corpus(&corpus))?;
    let mut models = Vec::with_capacity(a.model.len());
    for dir in &a.model {
        let loss = artifact::manifest(dir)?.parse_value::<f64>("final_train_loss")?;
        models.push((artifact::load(dir)?, loss));
    }
    let lexical = LexicalOverlapScorer;
    let mut entries: Vec<ComparisonEntry<'_>> = models
        .iter()
        .map(|(s, loss)| {
            let e = ComparisonEntry::new(s);
            match loss {
                Some(l) => e.with_train_loss(*l),
                None => e,
            }
        })
        .collect();
    entries.push(ComparisonEntry::new(&lexical));
    let table = compare(&entries, &corpus, a.seed)?;

    ensure_dir(&a.out)?;
    let text_path = a.out.join("comparison.txt");
    let json_path = a.out.join("comparison.jsonl");
    write_text(&text_path, &table.to_text())?;
    write_text(&json_path, &table.to_ndjson())?;
    let mut m = Manifest::new("compare");
    let dirs: Vec<String> = a.model.iter().map(|d| d.display().to_string()).collect();
    m.path_flag("corpus", &corpus_path)
        .path_flag("out", &a.out)
        .flag("seed", a.seed);
    if !dirs.is_empty() {
        m.flag("model", dirs.join(","));
    }
    m.inputs.push(corpus_path);
    m.inputs.extend(a.model.iter().map(|d| d.join(artifact::PARAMS_FILE)).filter(|p| p.is_file()));
    m.outputs.extend([text_path, json_path]);
    m.write(&a.out)?;
    print!("{}", table.to_text());
    Ok(())
}

/// Reads one [`ChangeCandidate`] per non-blank line.
fn read_suspects(path: &Path) -> CliResult<Vec<ChangeCandidate>> {
    let mut suspects = Vec::new();
    let mut offset = 0u64;
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(file_error(path))?;
        let len = line.len() as u64 + 1;
        if !line.trim().is_empty() {
            let c: ChangeCandidate = serde_json::from_str(&line).map_err(|e| Error::Format {
                line: i + 1,
                offset,
                message: format!("{}: {e}", path.display()),
            })?;
            suspects.push(c);
        }
        offset += len;
    }
    Ok(suspects)
}

fn identify(a: IdentifyArgs) -> CliResult<()> {
    let error_text = fs::read_to_string(&a.error).map_err(file_error(&a.error))?;
    let failure = FailureEvent::new(a.error.display().to_string(), &error_text)?;
    let suspects = read_suspects(&a.suspects)?;
    let scorer = resolve_scorer(&a.scorer)?;
    let ranked = rank(score_candidates(&scorer, &failure, &suspects)?);
    println!("# model {}", scorer.identifier());
    println!("# rank change_id probability raw_score");
    for (i, c) in ranked.iter().enumerate() {
        println!("{} {} {:.6} {}", i + 1, c.change_id, c.probability, c.raw_score);
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let mut config = culprit_service::ServiceConfig::new(a.data_dir);
    config.listen = SocketAddr::new(a.host, a.port);
    config.model_path = a.model;
    config.admin_token = a.admin_token;
    config.snapshot_every = a.snapshot_every;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Service(e.into()))?;
    runtime.block_on(culprit_service::serve(config))?;
    Ok(())
}
