//! Opaque identifiers of the form `{kind}_{counter}`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(
    /// Identifies a [`crate::types::DialogueTurn`].
    TurnId
);
id_type!(CellId);
id_type!(SceneId);
id_type!(FactId);
id_type!(ForesightId);

/// Per-memory-space monotonic counters, one per id kind.
///
/// Counters are zero-padded so lexicographic order equals creation order,
/// which the ranking tie rules rely on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdGen {
    counters: BTreeMap<String, u64>,
}

impl IdGen {
    pub fn next_raw(&mut self, kind: &str) -> String {
        let c = self.counters.entry(kind.to_string()).or_insert(0);
        *c += 1;
        format!("{kind}_{:06}", *c)
    }

    pub fn next_cell(&mut self) -> CellId {
        CellId(self.next_raw("cell"))
    }

    pub fn next_scene(&mut self) -> SceneId {
        SceneId(self.next_raw("scene"))
    }

    pub fn next_fact(&mut self) -> FactId {
        FactId(self.next_raw("fact"))
    }

    pub fn next_foresight(&mut self) -> ForesightId {
        ForesightId(self.next_raw("foresight"))
    }

    /// Raises the counter for `kind` so it never reissues `id`.
    pub fn observe(&mut self, id: &str) {
        if let Some((kind, n)) = id.rsplit_once('_') {
            if let Ok(n) = n.parse::<u64>() {
                let c = self.counters.entry(kind.to_string()).or_insert(0);
                *c = (*c).max(n);
            }
        }
    }
}
