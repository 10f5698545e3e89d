//! Shared value types and the newline-delimited corpus file formats.
//!
//! Two file formats live here. Both are UTF-8, one JSON object per line,
//! with a header object on the first line:
//!
//! - MCQA corpus: `{"format":"mcqa-corpus","version":1,"label_base":0}`
//!   followed by one [`McqaSample`] per line.
//! - Labeled records: `{"format":"labeled-records","version":1}` followed by
//!   `{"record_id","error_text","test_name","culprit_change_id","culprit_message"}`
//!   per line.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of candidates in every training sample.
pub const NUM_CHOICES: usize = 4;

fn require_text(field: &str, text: &str) -> Result<String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::invalid(format!("{field} is empty")));
    }
    Ok(trimmed.to_string())
}

/// Error message emitted by a failing test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub event_id: String,
    pub error_text: String,
    #[serde(default)]
    pub test_name: Option<String>,
    #[serde(default = "epoch")]
    pub observed_at: DateTime<Utc>,
}

fn epoch() -> DateTime<Utc> {
    DateTime::UNIX_EPOCH
}

impl FailureEvent {
    /// Builds an event observed now. `error_text` is trimmed and must be
    /// non-empty.
    pub fn new(event_id: impl Into<String>, error_text: &str) -> Result<Self> {
        Ok(Self {
            event_id: event_id.into(),
            error_text: require_text("error_text", error_text)?,
            test_name: None,
            observed_at: Utc::now(),
        })
    }

    pub fn with_test_name(mut self, name: impl Into<String>) -> Self {
        self.test_name = Some(name.into());
        self
    }

    pub fn observed_at(mut self, at: DateTime<Utc>) -> Self {
        self.observed_at = at;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.event_id.trim().is_empty() {
            return Err(Error::invalid("event_id is empty"));
        }
        require_text("error_text", &self.error_text).map(drop)
    }

    /// Copy with trimmed text fields.
    pub fn normalized(&self) -> Self {
        Self {
            error_text: self.error_text.trim().to_string(),
            ..self.clone()
        }
    }
}

/// A code submission described by its commit message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCandidate {
    pub change_id: String,
    pub message_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
}

impl ChangeCandidate {
    pub fn new(change_id: impl Into<String>, message_text: &str) -> Result<Self> {
        Ok(Self {
            change_id: change_id.into(),
            message_text: require_text("message_text", message_text)?,
            author_id: None,
            submitted_at: None,
        })
    }

    pub fn with_author(mut self, author: impl Into<String>) -> Self {
        self.author_id = Some(author.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.change_id.trim().is_empty() {
            return Err(Error::invalid("change_id is empty"));
        }
        require_text("message_text", &self.message_text).map(drop)
    }

    pub fn normalized(&self) -> Self {
        Self {
            message_text: self.message_text.trim().to_string(),
            ..self.clone()
        }
    }
}

/// Checks that `suspects` is non-empty, valid, and free of duplicate ids.
/// On a duplicate the offending id is named in the error.
pub fn validate_suspects(suspects: &[ChangeCandidate]) -> Result<()> {
    if suspects.is_empty() {
        return Err(Error::invalid("suspect list is empty"));
    }
    let mut seen = HashSet::new();
    for s in suspects {
        s.validate()?;
        if !seen.insert(s.change_id.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate change_id {:?} in suspects",
                s.change_id
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IssueStatus {
    Open,
    Identified,
    Claimed,
}

impl IssueStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueStatus::Open => "open",
            IssueStatus::Identified => "identified",
            IssueStatus::Claimed => "claimed",
        }
    }
}

impl std::str::FromStr for IssueStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(IssueStatus::Open),
            "identified" => Ok(IssueStatus::Identified),
            "claimed" => Ok(IssueStatus::Claimed),
            other => Err(Error::invalid(format!("unknown issue status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub change_id: String,
    pub user_id: String,
    pub claimed_at: DateTime<Utc>,
}

/// A failing test with its suspects and claim state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageIssue {
    pub issue_id: String,
    pub failure: FailureEvent,
    pub suspects: Vec<ChangeCandidate>,
    pub status: IssueStatus,
    #[serde(default)]
    pub claim: Option<Claim>,
    #[serde(default)]
    pub last_scores: Option<Vec<ScoredCandidate>>,
}

impl TriageIssue {
    pub fn suspect(&self, change_id: &str) -> Option<&ChangeCandidate> {
        self.suspects.iter().find(|s| s.change_id == change_id)
    }

    /// Change id with the highest raw score in `last_scores`.
    pub fn primary_suspect(&self) -> Option<&str> {
        let scores = self.last_scores.as_ref()?;
        let mut best: Option<&ScoredCandidate> = None;
        for s in scores {
            if best.is_none_or(|b| s.raw_score > b.raw_score) {
                best = Some(s);
            }
        }
        best.map(|b| b.change_id.as_str())
    }
}

/// One candidate inside a training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateText {
    pub change_id: String,
    pub message_text: String,
}

/// A four-way multiple-choice training example. `label` is 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqaSample {
    pub sample_id: String,
    pub error_text: String,
    pub candidates: Vec<CandidateText>,
    pub label: usize,
    pub source_issue_id: String,
}

impl McqaSample {
    pub fn culprit(&self) -> Option<&CandidateText> {
        self.candidates.get(self.label)
    }
}

/// A failure paired with the one change that caused it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record_id: String,
    pub failure: FailureEvent,
    pub culprit: ChangeCandidate,
}

/// A suspect with its raw score and softmax probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub change_id: String,
    pub raw_score: f64,
    pub probability: f64,
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    DuplicateSampleId,
    CandidateCount(usize),
    LabelOutOfRange(usize),
    DuplicateChangeId(String),
    EmptyText(&'static str),
    CulpritMismatch,
    UnknownSource,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::DuplicateSampleId => write!(f, "duplicate sample_id"),
            ViolationKind::CandidateCount(n) => write!(f, "candidate count {n} ≠ {NUM_CHOICES}"),
            ViolationKind::LabelOutOfRange(l) => write!(f, "label out of range ({l})"),
            ViolationKind::DuplicateChangeId(id) => write!(f, "duplicate candidate change_id {id:?}"),
            ViolationKind::EmptyText(field) => write!(f, "empty {field}"),
            ViolationKind::CulpritMismatch => {
                write!(f, "candidate at label is not the source record's culprit")
            }
            ViolationKind::UnknownSource => write!(f, "source_issue_id matches no record"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// 0-based position of the sample in the corpus.
    pub index: usize,
    pub sample_id: String,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sample {} ({}): {}", self.index, self.sample_id, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every invariant violation in `samples`.
pub fn validate_corpus(samples: &[McqaSample]) -> ValidationReport {
    validate_inner(samples, None)
}

/// Like [`validate_corpus`], and also checks that each sample's labeled
/// candidate is the culprit of the record named by its `source_issue_id`.
pub fn validate_corpus_with_records(
    samples: &[McqaSample],
    records: &[LabeledRecord],
) -> ValidationReport {
    let by_id: HashMap<&str, &LabeledRecord> =
        records.iter().map(|r| (r.record_id.as_str(), r)).collect();
    validate_inner(samples, Some(&by_id))
}

fn validate_inner(
    samples: &[McqaSample],
    records: Option<&HashMap<&str, &LabeledRecord>>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    for (index, s) in samples.iter().enumerate() {
        let mut push = |kind| {
            violations.push(Violation {
                index,
                sample_id: s.sample_id.clone(),
                kind,
            })
        };
        if !ids.insert(s.sample_id.as_str()) {
            push(ViolationKind::DuplicateSampleId);
        }
        if s.error_text.trim().is_empty() {
            push(ViolationKind::EmptyText("error_text"));
        }
        if s.candidates.len() != NUM_CHOICES {
            push(ViolationKind::CandidateCount(s.candidates.len()));
        }
        if s.label >= NUM_CHOICES {
            push(ViolationKind::LabelOutOfRange(s.label));
        }
        let mut seen = HashSet::new();
        for c in &s.candidates {
            if !seen.insert(c.change_id.as_str()) {
                push(ViolationKind::DuplicateChangeId(c.change_id.clone()));
            }
            if c.message_text.trim().is_empty() {
                push(ViolationKind::EmptyText("message_text"));
            }
        }
        if let Some(records) = records {
            match records.get(s.source_issue_id.as_str()) {
                None => push(ViolationKind::UnknownSource),
                Some(r) => {
                    let ok = s.culprit().is_some_and(|c| {
                        c.change_id == r.culprit.change_id
                            && c.message_text == r.culprit.message_text
                    });
                    if !ok {
                        push(ViolationKind::CulpritMismatch);
                    }
                }
            }
        }
    }
    ValidationReport { violations }
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CorpusHeader {
    format: String,
    version: u32,
    label_base: u32,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct RecordsHeader {
    format: String,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    record_id: String,
    error_text: String,
    test_name: Option<String>,
    culprit_change_id: String,
    culprit_message: String,
}

pub const CORPUS_FORMAT: &str = "mcqa-corpus";
pub const RECORDS_FORMAT: &str = "labeled-records";

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("domain types always serialize")
}

pub fn write_corpus<W: Write>(mut out: W, samples: &[McqaSample]) -> Result<()> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: 1,
        label_base: 0,
    };
    writeln!(out, "{}", to_line(&header))?;
    for s in samples {
        writeln!(out, "{}", to_line(s))?;
    }
    out.flush()?;
    Ok(())
}

pub fn corpus_to_string(samples: &[McqaSample]) -> String {
    let mut buf = Vec::new();
    write_corpus(&mut buf, samples).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Iterates non-empty lines with their 1-based line number and byte offset.
fn lines_with_offsets<R: BufRead>(
    mut input: R,
) -> impl Iterator<Item = Result<(usize, u64, String)>> {
    let mut line_no = 0usize;
    let mut offset = 0u64;
    std::iter::from_fn(move || loop {
        let mut buf = Vec::new();
        match input.read_until(b'\n', &mut buf) {
            Err(e) => return Some(Err(e.into())),
            Ok(0) => return None,
            Ok(n) => {
                line_no += 1;
                let start = offset;
                offset += n as u64;
                let text = match String::from_utf8(buf) {
                    Ok(t) => t,
                    Err(_) => {
                        return Some(Err(Error::Format {
                            line: line_no,
                            offset: start,
                            message: "invalid UTF-8".into(),
                        }))
                    }
                };
                let trimmed = text.trim_end_matches(['\n', '\r']);
                if trimmed.trim().is_empty() {
                    continue;
                }
                return Some(Ok((line_no, start, trimmed.to_string())));
            }
        }
    })
}

fn parse_line<T: for<'de> Deserialize<'de>>(line: usize, offset: u64, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Format {
        line,
        offset,
        message: e.to_string(),
    })
}

/// Reads a corpus file. Structural problems (bad JSON, wrong header) are
/// errors naming the line; invariant breaches are left to
/// [`validate_corpus`].
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<McqaSample>> {
    let mut lines = lines_with_offsets(input);
    let (line, offset, text) = lines.next().transpose()?.ok_or(Error::Format {
        line: 1,
        offset: 0,
        message: "missing header line".into(),
    })?;
    let header: CorpusHeader = parse_line(line, offset, &text)?;
    if header.format != CORPUS_FORMAT || header.version != 1 || header.label_base != 0 {
        return Err(Error::Format {
            line,
            offset,
            message: format!("unsupported corpus header {text}"),
        });
    }
    lines
        .map(|item| {
            let (line, offset, text) = item?;
            parse_line(line, offset, &text)
        })
        .collect()
}

pub fn write_records<W: Write>(mut out: W, records: &[LabeledRecord]) -> Result<()> {
    let header = RecordsHeader {
        format: RECORDS_FORMAT.into(),
        version: 1,
    };
    writeln!(out, "{}", to_line(&header))?;
    for r in records {
        writeln!(out, "{}", record_line(r))?;
    }
    out.flush()?;
    Ok(())
}

/// One labeled-record line, without trailing newline.
pub fn record_line(r: &LabeledRecord) -> String {
    to_line(&RecordLine {
        record_id: r.record_id.clone(),
        error_text: r.failure.error_text.clone(),
        test_name: r.failure.test_name.clone(),
        culprit_change_id: r.culprit.change_id.clone(),
        culprit_message: r.culprit.message_text.clone(),
    })
}

pub fn records_header_line() -> String {
    to_line(&RecordsHeader {
        format: RECORDS_FORMAT.into(),
        version: 1,
    })
}

/// Reads a labeled-record file. The line format carries no event id or
/// timestamp, so `event_id` is set to `record_id` and `observed_at` to the
/// Unix epoch.
pub fn read_records<R: BufRead>(input: R) -> Result<Vec<LabeledRecord>> {
    let mut lines = lines_with_offsets(input);
    let (line, offset, text) = lines.next().transpose()?.ok_or(Error::Format {
        line: 1,
        offset: 0,
        message: "missing header line".into(),
    })?;
    let header: RecordsHeader = parse_line(line, offset, &text)?;
    if header.format != RECORDS_FORMAT || header.version != 1 {
        return Err(Error::Format {
            line,
            offset,
            message: format!("unsupported labeled-records header {text}"),
        });
    }
    lines
        .map(|item| {
            let (line, offset, text) = item?;
            let raw: RecordLine = parse_line(line, offset, &text)?;
            let fmt_err = |e: Error| Error::Format {
                line,
                offset,
                message: e.to_string(),
            };
            Ok(LabeledRecord {
                failure: FailureEvent {
                    event_id: raw.record_id.clone(),
                    error_text: require_text("error_text", &raw.error_text).map_err(fmt_err)?,
                    test_name: raw.test_name,
                    observed_at: epoch(),
                },
                culprit: ChangeCandidate {
                    change_id: raw.culprit_change_id,
                    message_text: require_text("culprit_message", &raw.culprit_message)
                        .map_err(fmt_err)?,
                    author_id: None,
                    submitted_at: None,
                },
                record_id: raw.record_id,
            })
        })
        .collect()
}
