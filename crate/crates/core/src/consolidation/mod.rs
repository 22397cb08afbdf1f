//! Online clustering of cells into scenes, scene summaries, and the user
//! profile that evolves from them.

mod profile;
mod scenes;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CellId, SceneId};
use crate::providers::ProviderError;

pub use profile::{
    measure_delta, merge_profile, parse_measure, parse_profile_reply, update_profile, ExtractedFact,
    ProfileExtraction,
};
pub use scenes::{apply_assignment, assign_to_scene, AssignmentDecision, SceneSet, SceneTarget};
pub use summary::{template_summary, update_scene_summary};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    /// Minimum cosine to the pre-update centroid for assimilation.
    pub tau: f64,
    /// Largest allowed gap to the closest-in-time member.
    pub max_time_gap_days: u32,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        ConsolidationConfig { tau: 0.70, max_time_gap_days: 7 }
    }
}

#[derive(Debug, Error)]
pub enum ConsolidationError {
    #[error("cell {0} is not in this memory space")]
    UnknownCell(CellId),
    #[error("cell {0} is already a member of a scene")]
    DuplicateMember(CellId),
    #[error("scene {0} does not exist")]
    UnknownScene(SceneId),
    #[error("assignment conflict: {0}")]
    Conflict(String),
    #[error("profile provider failed: {0}")]
    Provider(#[source] ProviderError),
    #[error("profile reply is not valid JSON ({message}): {raw}")]
    ProfileParse { message: String, raw: String },
}
