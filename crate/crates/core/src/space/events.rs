use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consolidation::{AssignmentDecision, ProfileExtraction};
use crate::ids::SceneId;
use crate::time::Timestamp;
use crate::types::{DialogueTurn, MemCell, UserProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TurnIngested,
    CellFormed,
    SceneAssigned,
    ProfileUpdated,
}

/// One append-only log entry. Payloads carry every provider output needed
/// to rebuild state without calling a provider again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub wall_time: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnIngested {
    pub turn: DialogueTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFormed {
    pub cell: MemCell,
    pub fact_embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAssigned {
    pub decision: AssignmentDecision,
    pub scene_id: SceneId,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileUpdated {
    pub scene_id: SceneId,
    pub extraction: ProfileExtraction,
    /// Timestamp given to observations that carry none.
    pub default_time: Timestamp,
    pub profile: UserProfile,
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("event payloads serialize")
}

/// `<sha256 of json>\t<json>`; the digest covers exactly the JSON text.
pub fn checksum_line(json: &str) -> String {
    format!("{}\t{json}", hex::encode(Sha256::digest(json.as_bytes())))
}

/// Verifies a checksummed line and returns its JSON part.
pub fn verify_line(line: &str) -> Result<&str, String> {
    let (sum, json) = line.split_once('\t').ok_or("missing checksum field")?;
    let actual = hex::encode(Sha256::digest(json.as_bytes()));
    if actual != sum {
        return Err("checksum mismatch".into());
    }
    Ok(json)
}
