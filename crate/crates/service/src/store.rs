//! Durable issue store: an append-only event log plus snapshots.
//!
//! ```text
//! data_dir/
//!   events.ndjson   one StoreEvent per line, `seq` strictly increasing
//!   snapshot.json   materialized state as of some `seq`
//! ```
//!
//! Opening a store loads the snapshot, then replays every logged event with
//! a larger `seq`. A last line that fails to parse and lacks its newline is
//! a torn write and is cut off; damage anywhere else is an error.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use culprit::domain::{
    validate_suspects, ChangeCandidate, Claim, FailureEvent, IssueStatus, LabeledRecord, ScoredCandidate,
    TriageIssue,
};
use serde::{Deserialize, Serialize};

use crate::{ServiceError, ServiceResult};

pub const LOG_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
const SNAPSHOT_FORMAT: &str = "issue-store-snapshot";

/// One mutation of the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StoreEvent {
    Created {
        seq: u64,
        issue: TriageIssue,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    Identified {
        seq: u64,
        issue_id: String,
        model: String,
        scores: Vec<ScoredCandidate>,
        at: DateTime<Utc>,
    },
    Claimed {
        seq: u64,
        issue_id: String,
        claim: Claim,
    },
}

impl StoreEvent {
    pub fn seq(&self) -> u64 {
        match self {
            StoreEvent::Created { seq, .. } | StoreEvent::Identified { seq, .. } | StoreEvent::Claimed { seq, .. } => {
                *seq
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct State {
    seq: u64,
    created: u64,
    issues: BTreeMap<String, TriageIssue>,
    idempotency: BTreeMap<String, String>,
}

impl State {
    fn check(&self, event: &StoreEvent) -> ServiceResult<()> {
        if event.seq() <= self.seq {
            return Err(ServiceError::Invalid(format!(
                "event seq {} is not after {}",
                event.seq(),
                self.seq
            )));
        }
        match event {
            StoreEvent::Created { issue, .. } => {
                if self.issues.contains_key(&issue.issue_id) {
                    return Err(ServiceError::Invalid(format!("issue {} already exists", issue.issue_id)));
                }
                validate_suspects(&issue.suspects)?;
            }
            StoreEvent::Identified { issue_id, .. } => {
                self.issue(issue_id)?;
            }
            StoreEvent::Claimed { issue_id, claim, .. } => {
                let issue = self.issue(issue_id)?;
                if issue.suspect(&claim.change_id).is_none() {
                    return Err(ServiceError::NotASuspect {
                        change_id: claim.change_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Applies an event that passed [`State::check`].
    fn apply(&mut self, event: StoreEvent) {
        self.seq = event.seq();
        match event {
            StoreEvent::Created {
                issue, idempotency_key, ..
            } => {
                self.created += 1;
                if let Some(key) = idempotency_key {
                    self.idempotency.insert(key, issue.issue_id.clone());
                }
                self.issues.insert(issue.issue_id.clone(), issue);
            }
            StoreEvent::Identified { issue_id, scores, .. } => {
                let issue = self.issues.get_mut(&issue_id).expect("checked");
                issue.last_scores = Some(scores);
                if issue.status == IssueStatus::Open {
                    issue.status = IssueStatus::Identified;
                }
            }
            StoreEvent::Claimed { issue_id, claim, .. } => {
                let issue = self.issues.get_mut(&issue_id).expect("checked");
                issue.claim = Some(claim);
                issue.status = IssueStatus::Claimed;
            }
        }
    }

    fn issue(&self, id: &str) -> ServiceResult<&TriageIssue> {
        self.issues.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    state: State,
}

/// Listing entry for one issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueSummary {
    pub issue_id: String,
    pub status: IssueStatus,
    pub error_text: String,
    pub test_name: Option<String>,
    pub suspect_ids: Vec<String>,
    pub primary_suspect: Option<String>,
    pub claimed_by: Option<String>,
}

impl From<&TriageIssue> for IssueSummary {
    fn from(i: &TriageIssue) -> Self {
        Self {
            issue_id: i.issue_id.clone(),
            status: i.status,
            error_text: i.failure.error_text.clone(),
            test_name: i.failure.test_name.clone(),
            suspect_ids: i.suspects.iter().map(|s| s.change_id.clone()).collect(),
            primary_suspect: i.primary_suspect().map(str::to_string),
            claimed_by: i.claim.as_ref().map(|c| c.user_id.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub issue_id: String,
    /// False when the idempotency key matched an earlier ingestion.
    pub created: bool,
}

struct Log {
    dir: PathBuf,
    file: File,
}

pub struct IssueStore {
    state: State,
    log: Option<Log>,
    snapshot_every: u64,
    since_snapshot: u64,
    clock: fn() -> DateTime<Utc>,
}

impl std::fmt::Debug for IssueStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IssueStore")
            .field("issues", &self.state.issues.len())
            .field("seq", &self.state.seq)
            .field("dir", &self.log.as_ref().map(|l| &l.dir))
            .finish()
    }
}

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

impl IssueStore {
    /// A store that persists nothing.
    pub fn in_memory() -> Self {
        Self {
            state: State::default(),
            log: None,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
            since_snapshot: 0,
            clock: Utc::now,
        }
    }

    /// Opens (or creates) the store in `dir`, replaying its log.
    pub fn open(dir: &Path) -> ServiceResult<Self> {
        Self::open_with(dir, DEFAULT_SNAPSHOT_EVERY)
    }

    /// Like [`IssueStore::open`], writing a snapshot after every
    /// `snapshot_every` events (0 disables snapshots).
    pub fn open_with(dir: &Path, snapshot_every: u64) -> ServiceResult<Self> {
        fs::create_dir_all(dir)?;
        let mut state = match fs::read(dir.join(SNAPSHOT_FILE)) {
            Ok(bytes) => {
                let snap: Snapshot = serde_json::from_slice(&bytes).map_err(|e| ServiceError::CorruptLog {
                    path: dir.join(SNAPSHOT_FILE),
                    line: 1,
                    message: e.to_string(),
                })?;
                if snap.format != SNAPSHOT_FORMAT || snap.version != 1 {
                    return Err(ServiceError::CorruptLog {
                        path: dir.join(SNAPSHOT_FILE),
                        line: 1,
                        message: format!("unsupported snapshot {} v{}", snap.format, snap.version),
                    });
                }
                snap.state
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(e.into()),
        };
        let log_path = dir.join(LOG_FILE);
        let (events, valid_len) = read_log_prefix(&log_path)?;
        let mut replayed = 0;
        for (line, event) in events {
            if event.seq() <= state.seq {
                continue;
            }
            state.check(&event).map_err(|e| ServiceError::CorruptLog {
                path: log_path.clone(),
                line,
                message: e.to_string(),
            })?;
            state.apply(event);
            replayed += 1;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&log_path)?;
        if file.metadata()?.len() != valid_len {
            file.set_len(valid_len)?;
            tracing::warn!(path = %log_path.display(), "cut torn tail of event log");
        }
        if valid_len > 0 {
            let mut last = [0u8; 1];
            let mut reader = File::open(&log_path)?;
            std::io::Seek::seek(&mut reader, std::io::SeekFrom::Start(valid_len - 1))?;
            reader.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(Self {
            state,
            log: Some(Log {
                dir: dir.to_path_buf(),
                file,
            }),
            snapshot_every,
            since_snapshot: replayed,
            clock: Utc::now,
        })
    }

    /// Replaces the timestamp source used for claims and identifications.
    pub fn with_clock(mut self, clock: fn() -> DateTime<Utc>) -> Self {
        self.clock = clock;
        self
    }

    pub fn len(&self) -> usize {
        self.state.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.issues.is_empty()
    }

    /// Sequence number of the last applied event.
    pub fn seq(&self) -> u64 {
        self.state.seq
    }

    pub fn get(&self, issue_id: &str) -> Option<&TriageIssue> {
        self.state.issues.get(issue_id)
    }

    /// Issue summaries in creation order, optionally filtered by status.
    pub fn list(&self, status: Option<IssueStatus>) -> Vec<IssueSummary> {
        self.state
            .issues
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .map(IssueSummary::from)
            .collect()
    }

    fn commit(&mut self, event: StoreEvent) -> ServiceResult<()> {
        self.state.check(&event)?;
        if let Some(log) = &mut self.log {
            let mut line = serde_json::to_string(&event).expect("events serialize");
            line.push('\n');
            log.file.write_all(line.as_bytes())?;
            log.file.sync_data()?;
        }
        self.state.apply(event);
        self.since_snapshot += 1;
        if self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the materialized state to the snapshot file now.
    pub fn snapshot(&mut self) -> ServiceResult<()> {
        let Some(log) = &self.log else {
            return Ok(());
        };
        let snap = Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: 1,
            state: self.state.clone(),
        };
        let tmp = log.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&snap).expect("state serializes"))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, log.dir.join(SNAPSHOT_FILE))?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Stores a new open issue. With an idempotency key that was seen
    /// before, returns the earlier issue id and stores nothing.
    pub fn ingest(
        &mut self,
        failure: FailureEvent,
        suspects: Vec<ChangeCandidate>,
        idempotency_key: Option<&str>,
    ) -> ServiceResult<IngestOutcome> {
        if let Some(id) = idempotency_key.and_then(|k| self.state.idempotency.get(k)) {
            return Ok(IngestOutcome {
                issue_id: id.clone(),
                created: false,
            });
        }
        failure.validate()?;
        validate_suspects(&suspects)?;
        let issue_id = format!("iss-{:06}", self.state.created + 1);
        let issue = TriageIssue {
            issue_id: issue_id.clone(),
            failure: failure.normalized(),
            suspects: suspects.iter().map(ChangeCandidate::normalized).collect(),
            status: IssueStatus::Open,
            claim: None,
            last_scores: None,
        };
        self.commit(StoreEvent::Created {
            seq: self.state.seq + 1,
            issue,
            idempotency_key: idempotency_key.map(str::to_string),
        })?;
        Ok(IngestOutcome {
            issue_id,
            created: true,
        })
    }

    /// Persists ranked scores for an issue; open issues become identified.
    pub fn record_scores(
        &mut self,
        issue_id: &str,
        model: &str,
        scores: Vec<ScoredCandidate>,
    ) -> ServiceResult<&TriageIssue> {
        let issue = self.state.issue(issue_id)?;
        let mut expected: Vec<&str> = issue.suspects.iter().map(|s| s.change_id.as_str()).collect();
        let mut got: Vec<&str> = scores.iter().map(|s| s.change_id.as_str()).collect();
        expected.sort_unstable();
        got.sort_unstable();
        if expected != got {
            return Err(ServiceError::Invalid("scores do not cover the issue's suspects".into()));
        }
        self.commit(StoreEvent::Identified {
            seq: self.state.seq + 1,
            issue_id: issue_id.to_string(),
            model: model.to_string(),
            scores,
            at: (self.clock)(),
        })?;
        Ok(&self.state.issues[issue_id])
    }

    /// Records a claim; a later claim replaces an earlier one.
    pub fn claim(&mut self, issue_id: &str, change_id: &str, user_id: &str) -> ServiceResult<&TriageIssue> {
        if user_id.trim().is_empty() {
            return Err(ServiceError::Invalid("user_id is empty".into()));
        }
        self.commit(StoreEvent::Claimed {
            seq: self.state.seq + 1,
            issue_id: issue_id.to_string(),
            claim: Claim {
                change_id: change_id.to_string(),
                user_id: user_id.to_string(),
                claimed_at: (self.clock)(),
            },
        })?;
        Ok(&self.state.issues[issue_id])
    }

    /// One record per claimed issue, in creation order, with the claimed
    /// suspect as culprit and the issue id as record id.
    pub fn export_labeled(&self) -> Vec<LabeledRecord> {
        self.state
            .issues
            .values()
            .filter(|i| i.status == IssueStatus::Claimed)
            .filter_map(|i| {
                let claim = i.claim.as_ref()?;
                Some(LabeledRecord {
                    record_id: i.issue_id.clone(),
                    failure: i.failure.clone(),
                    culprit: i.suspect(&claim.change_id)?.clone(),
                })
            })
            .collect()
    }
}

/// Reads every event in a store's log.
pub fn read_log(dir: &Path) -> ServiceResult<Vec<StoreEvent>> {
    Ok(read_log_prefix(&dir.join(LOG_FILE))?.0.into_iter().map(|(_, e)| e).collect())
}

/// Parses the log, returning events with their 1-based line numbers and
/// the byte length of the intact prefix.
fn read_log_prefix(path: &Path) -> ServiceResult<(Vec<(usize, StoreEvent)>, u64)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut events = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
        let line = &bytes[offset..end.unwrap_or(bytes.len())];
        if line.iter().all(u8::is_ascii_whitespace) {
            offset = end.map_or(bytes.len(), |e| e + 1);
            continue;
        }
        match serde_json::from_slice::<StoreEvent>(line) {
            Ok(event) => events.push((line_no, event)),
            Err(_) if end.is_none() => return Ok((events, offset as u64)),
            Err(e) => {
                return Err(ServiceError::CorruptLog {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        offset = end.map_or(bytes.len(), |e| e + 1);
    }
    Ok((events, bytes.len() as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed_clock() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    fn failure(i: usize) -> FailureEvent {
        FailureEvent::new(format!("evt-{i}"), &format!("Assert: (count_{i} > 0) in Physics/Solver.cpp"))
            .unwrap()
            .observed_at(fixed_clock())
    }

    fn suspects(n: usize) -> Vec<ChangeCandidate> {
        (0..n)
            .map(|j| ChangeCandidate::new(format!("CL{j}"), &format!("change number {j}")).unwrap())
            .collect()
    }

    #[test]
    fn ingest_creates_open_issue_without_scores() {
        let mut s = IssueStore::in_memory();
        let out = s.ingest(failure(1), suspects(4), None).unwrap();
        assert!(out.created);
        let issue = s.get(&out.issue_id).unwrap();
        assert_eq!(issue.status, IssueStatus::Open);
        assert_eq!(issue.suspects.len(), 4);
        assert!(issue.last_scores.is_none());
    }

    #[test]
    fn idempotency_key_returns_same_issue() {
        let mut s = IssueStore::in_memory();
        let a = s.ingest(failure(1), suspects(4), Some("k1")).unwrap();
        let b = s.ingest(failure(1), suspects(4), Some("k1")).unwrap();
        assert_eq!(a.issue_id, b.issue_id);
        assert!(!b.created);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn duplicate_suspect_is_rejected_by_name() {
        let mut s = IssueStore::in_memory();
        let mut dup = suspects(3);
        dup.push(ChangeCandidate::new("CL1", "again").unwrap());
        let err = s.ingest(failure(1), dup, None).unwrap_err().to_string();
        assert!(err.contains("CL1"), "{err}");
        assert!(s.is_empty());
    }

    #[test]
    fn claims_are_last_wins_and_foreign_ids_rejected() {
        let mut s = IssueStore::in_memory().with_clock(fixed_clock);
        let id = s.ingest(failure(1), suspects(4), None).unwrap().issue_id;
        s.claim(&id, "CL0", "u1").unwrap();
        let issue = s.claim(&id, "CL2", "u2").unwrap();
        assert_eq!(issue.status, IssueStatus::Claimed);
        assert_eq!(issue.claim.as_ref().unwrap().change_id, "CL2");
        let err = s.claim(&id, "CL9", "u3").unwrap_err();
        assert_eq!(err.to_string(), "CL9 is not a suspect of this issue");
        assert!(matches!(s.claim("nope", "CL0", "u"), Err(ServiceError::NotFound(_))));
        let exported = s.export_labeled();
        assert_eq!(exported.len(), 1);
        assert_eq!(exported[0].culprit.change_id, "CL2");
    }

    #[test]
    fn export_filters_to_claimed() {
        let mut s = IssueStore::in_memory();
        let ids: Vec<_> = (0..5).map(|i| s.ingest(failure(i), suspects(2), None).unwrap().issue_id).collect();
        for id in &ids[..3] {
            s.claim(id, "CL1", "u").unwrap();
        }
        assert_eq!(s.export_labeled().len(), 3);
        assert!(IssueStore::in_memory().export_labeled().is_empty());
    }

    #[test]
    fn identification_keeps_claimed_status() {
        let mut s = IssueStore::in_memory();
        let id = s.ingest(failure(1), suspects(2), None).unwrap().issue_id;
        let scores = |top: &str| {
            vec![
                ScoredCandidate { change_id: top.into(), raw_score: 1.0, probability: 0.7 },
                ScoredCandidate {
                    change_id: if top == "CL0" { "CL1" } else { "CL0" }.into(),
                    raw_score: 0.0,
                    probability: 0.3,
                },
            ]
        };
        assert_eq!(s.record_scores(&id, "m", scores("CL1")).unwrap().status, IssueStatus::Identified);
        s.claim(&id, "CL0", "u").unwrap();
        let issue = s.record_scores(&id, "m", scores("CL0")).unwrap();
        assert_eq!(issue.status, IssueStatus::Claimed);
        assert_eq!(issue.primary_suspect(), Some("CL0"));
        assert!(s.record_scores(&id, "m", scores("CL0")[..1].to_vec()).is_err());
    }

    #[test]
    fn replay_reproduces_state_and_cuts_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let state = {
            let mut s = IssueStore::open_with(dir.path(), 3).unwrap();
            for i in 0..5 {
                let id = s.ingest(failure(i), suspects(3), Some(&format!("k{i}"))).unwrap().issue_id;
                if i % 2 == 0 {
                    s.claim(&id, "CL1", "u").unwrap();
                }
            }
            s.state.clone()
        };
        assert!(dir.path().join(SNAPSHOT_FILE).exists());
        let reopened = IssueStore::open(dir.path()).unwrap();
        assert_eq!(reopened.state, state);

        let log = dir.path().join(LOG_FILE);
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"event\":\"claimed\",\"seq\":99,\"iss").unwrap();
        drop(f);
        let mut again = IssueStore::open(dir.path()).unwrap();
        assert_eq!(again.state, state);
        again.ingest(failure(9), suspects(2), None).unwrap();
        let events = read_log(dir.path()).unwrap();
        assert_eq!(events.len(), 9);
        assert_eq!(events.last().unwrap().seq(), state.seq + 1);
    }

    #[test]
    fn every_log_prefix_replays_consistently() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = IssueStore::open_with(dir.path(), 0).unwrap();
            for i in 0..4 {
                let id = s.ingest(failure(i), suspects(3), None).unwrap().issue_id;
                s.claim(&id, "CL2", "u").unwrap();
            }
        }
        let bytes = fs::read(dir.path().join(LOG_FILE)).unwrap();
        for cut in 0..=bytes.len() {
            let d = tempfile::tempdir().unwrap();
            fs::write(d.path().join(LOG_FILE), &bytes[..cut]).unwrap();
            let s = IssueStore::open(d.path()).unwrap();
            let complete = bytes[..cut].iter().filter(|&&b| b == b'\n').count();
            assert!(s.seq() as usize >= complete && s.seq() as usize <= complete + 1);
            for issue in s.state.issues.values() {
                if let Some(c) = &issue.claim {
                    assert!(issue.suspect(&c.change_id).is_some());
                }
            }
        }
    }

    #[test]
    fn corrupt_middle_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = IssueStore::open(dir.path()).unwrap();
            s.ingest(failure(1), suspects(2), None).unwrap();
            s.ingest(failure(2), suspects(2), None).unwrap();
        }
        let log = dir.path().join(LOG_FILE);
        let text = fs::read_to_string(&log).unwrap();
        fs::write(&log, format!("garbage\n{text}")).unwrap();
        assert!(matches!(IssueStore::open(dir.path()), Err(ServiceError::CorruptLog { line: 1, .. })));
    }
}
