//! Scene-structured long-term memory for conversational agents.
//!
//! The lifecycle has three phases:
//!
//! 1. **Trace formation** ([`trace`]): a dialogue stream is segmented into
//!    episodes and each becomes a [`MemCell`](types::MemCell) holding a
//!    narrative, atomic facts, time-bounded foresight, and metadata.
//! 2. **Consolidation** ([`consolidation`]): cells are clustered online into
//!    scenes by centroid similarity and a time-gap rule; scene summaries feed
//!    an evolving user profile.
//! 3. **Recollection** ([`recollect`]): hybrid BM25 + dense retrieval over
//!    atomic facts selects scenes, episodes are reranked, foresight is
//!    filtered by time, and a verifier may trigger query rewriting.
//!
//! Every model call goes through [`providers`], whose reference
//! implementations make the whole system deterministic and offline.

pub mod consolidation;
pub mod eval;
pub mod ids;
pub mod index;
pub mod prompts;
pub mod providers;
pub mod recollect;
pub mod space;
pub mod text;
pub mod time;
pub mod trace;
pub mod types;
