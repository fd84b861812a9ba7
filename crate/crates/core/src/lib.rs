//! Personalized search re-ranking driven by a three-tier memory over user
//! query logs.
//!
//! The crate is organized bottom-up:
//!
//! * [`log`] parses query logs, segments sessions, and splits history from
//!   held-out test queries.
//! * [`sensory`] answers re-finding queries straight from click counts.
//! * [`longterm`] slots the long-term history and encodes each slot into
//!   explicit (topic -> interests) and implicit (attribute -> value) entries.
//! * [`working`] assembles the query-time context and infers the user's
//!   personalized intent.
//! * [`cognition`] is the completion-provider boundary: prompt templates,
//!   providers (HTTP, mock, cache), and reply parsers.
//! * [`ranking`] holds BM25, candidate generation, and the interchangeable
//!   rankers.
//! * [`pipeline`] wires the three steps together per query.
//! * [`eval`] computes MAP/MRR/P@1/P-imp and drives ablations and sweeps.
//! * [`synthgen`] produces deterministic synthetic logs for offline testing.

pub mod cognition;
pub mod error;
pub mod eval;
pub mod log;
pub mod longterm;
pub mod pipeline;
pub mod ranking;
pub mod sensory;
pub mod synthgen;
pub mod text;
pub mod working;

pub use cognition::{CognitiveUnit, PromptFamily, ProviderConfig};
pub use error::{Error, Result};
pub use log::{DocumentRef, Interaction, Session, TestQuery, UserHistory};
pub use longterm::LongTermStore;
pub use pipeline::{PipelineConfig, QueryTrace, UserState};
pub use ranking::RankedResult;
pub use sensory::SensoryStore;
