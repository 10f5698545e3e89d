//! Triage service: a durable issue store and the HTTP API in front of it.
//!
//! Issues are ingested with their suspect changes, identified against the
//! loaded scorer, claimed by developers, and exported as labeled records
//! that feed the next training run.
//!
//! ```
//! use culprit::domain::{ChangeCandidate, FailureEvent};
//! use culprit_service::IssueStore;
//!
//! let mut store = IssueStore::in_memory();
//! let failure = FailureEvent::new("evt-1", "Assert: (count > 0) in Physics/Solver.cpp").unwrap();
//! let suspects = vec![
//!     ChangeCandidate::new("CL1", "[Physics] Fix solver count").unwrap(),
//!     ChangeCandidate::new("CL2", "[Audio] Update mixer").unwrap(),
//! ];
//! let id = store.ingest(failure, suspects, None).unwrap().issue_id;
//! store.claim(&id, "CL1", "dev-7").unwrap();
//! assert_eq!(store.export_labeled()[0].culprit.change_id, "CL1");
//! ```

mod error;
pub mod http;
pub mod model;
pub mod store;

pub use error::{ServiceError, ServiceResult};
pub use http::{router, serve, AppState, ServiceConfig};
pub use model::{LoadedModel, ModelSlot};
pub use store::{IngestOutcome, IssueStore, IssueSummary, StoreEvent};
