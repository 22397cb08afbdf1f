use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TraceError;
use crate::prompts::{self, schema};
use crate::providers::{ChatRequest, Providers, Stage};
use crate::text::whitespace_token_count;
use crate::types::{validate_turns, DialogueTurn};

pub const DEFAULT_WINDOW: usize = 8;

/// How a turn stream is cut into episode drafts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SegmentationStrategy {
    /// Cut every `n` turns.
    FixedMessage { n: usize },
    /// Cut before a turn that would push the draft past `n` whitespace tokens.
    FixedToken { n: usize },
    /// Cut exactly where `session_id` changes.
    OracleSession,
    /// Ask the chat provider about a topic shift at each window midpoint.
    Semantic {
        #[serde(default = "default_window")]
        window_size: usize,
    },
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

impl Default for SegmentationStrategy {
    fn default() -> Self {
        SegmentationStrategy::Semantic { window_size: DEFAULT_WINDOW }
    }
}

impl SegmentationStrategy {
    pub fn validate(&self) -> Result<(), TraceError> {
        match *self {
            SegmentationStrategy::FixedMessage { n } | SegmentationStrategy::FixedToken { n }
                if n == 0 =>
            {
                Err(TraceError::Usage("fixed strategies need n >= 1".into()))
            }
            SegmentationStrategy::Semantic { window_size: 0 } => {
                Err(TraceError::Usage("semantic window_size must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Row label in segmentation comparison tables.
    pub fn label(&self) -> String {
        match self {
            SegmentationStrategy::FixedMessage { n } => format!("Fixed-Message-{n}"),
            SegmentationStrategy::FixedToken { n } => format!("Fixed-Token-{n}"),
            SegmentationStrategy::OracleSession => "Session (Oracle)".to_string(),
            SegmentationStrategy::Semantic { .. } => "Semantic".to_string(),
        }
    }
}

impl fmt::Display for SegmentationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentationStrategy::FixedMessage { n } => write!(f, "fixed_message:{n}"),
            SegmentationStrategy::FixedToken { n } => write!(f, "fixed_token:{n}"),
            SegmentationStrategy::OracleSession => f.write_str("oracle_session"),
            SegmentationStrategy::Semantic { window_size } => write!(f, "semantic:{window_size}"),
        }
    }
}

impl FromStr for SegmentationStrategy {
    type Err = TraceError;

    /// Accepts `fixed_message:10`, `fixed_message(10)`, `fixed_token:512`,
    /// `oracle_session`, `semantic`, `semantic:8`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_lowercase();
        let (kind, arg) = match s.split_once([':', '(']) {
            Some((k, a)) => (k.to_string(), Some(a.trim_end_matches(')').to_string())),
            None => (s.clone(), None),
        };
        let num = |a: Option<String>| -> Result<usize, TraceError> {
            a.ok_or_else(|| TraceError::Usage(format!("strategy {s:?} needs a size")))?
                .parse()
                .map_err(|_| TraceError::Usage(format!("bad size in strategy {s:?}")))
        };
        let strategy = match kind.as_str() {
            "fixed_message" => SegmentationStrategy::FixedMessage { n: num(arg)? },
            "fixed_token" => SegmentationStrategy::FixedToken { n: num(arg)? },
            "oracle_session" | "session" => SegmentationStrategy::OracleSession,
            "semantic" => SegmentationStrategy::Semantic {
                window_size: match arg {
                    Some(a) => num(Some(a))?,
                    None => DEFAULT_WINDOW,
                },
            },
            _ => return Err(TraceError::Usage(format!("unknown segmentation strategy {s:?}"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// A contiguous run of turns destined to become one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDraft {
    pub turns: Vec<DialogueTurn>,
    pub boundary_reason: String,
}

/// Partitions `turns` into drafts; every turn lands in exactly one draft, in order.
pub fn segment_stream(
    turns: &[DialogueTurn],
    strategy: &SegmentationStrategy,
    providers: &Providers,
) -> Result<Vec<EpisodeDraft>, TraceError> {
    strategy.validate()?;
    if let Some(problem) = validate_turns(turns).into_iter().next() {
        return Err(TraceError::Usage(problem));
    }
    if turns.is_empty() {
        return Ok(Vec::new());
    }
    let mut cuts = Vec::new();
    match *strategy {
        SegmentationStrategy::FixedMessage { n } => {
            cuts.extend((n..turns.len()).step_by(n).map(|p| (p, format!("fixed_message({n})"))));
        }
        SegmentationStrategy::FixedToken { n } => {
            let mut acc = 0usize;
            for (i, t) in turns.iter().enumerate() {
                let len = whitespace_token_count(&t.content);
                if i > 0 && acc > 0 && acc + len > n {
                    cuts.push((i, format!("fixed_token({n})")));
                    acc = 0;
                }
                acc += len;
            }
        }
        SegmentationStrategy::OracleSession => {
            let sessions = turns
                .iter()
                .map(|t| {
                    t.session_id.as_deref().ok_or_else(|| {
                        TraceError::Usage(format!(
                            "oracle_session requires session_id on every turn (missing on {})",
                            t.turn_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            for p in 1..sessions.len() {
                if sessions[p] != sessions[p - 1] {
                    cuts.push((p, format!("session change {} -> {}", sessions[p - 1], sessions[p])));
                }
            }
        }
        SegmentationStrategy::Semantic { window_size } => {
            let before_len = (window_size / 2).max(1);
            let after_len = window_size.saturating_sub(before_len).max(1);
            let mut draft_start = 0usize;
            for p in 1..turns.len() {
                let lo = draft_start.max(p.saturating_sub(before_len));
                let hi = (p + after_len).min(turns.len());
                let prompt = prompts::boundary_prompt(&turns[lo..p], &turns[p..hi]);
                let reply = providers
                    .chat(&ChatRequest::new(prompt, schema::BOUNDARY, Stage::Add))
                    .map_err(|source| TraceError::Provider {
                        stage: "segmentation",
                        position: p,
                        source,
                    })?;
                let verdict = reply.trim().to_uppercase();
                if verdict.starts_with("BOUNDARY") {
                    cuts.push((p, format!("semantic boundary before {}", turns[p].turn_id)));
                    draft_start = p;
                } else if !verdict.starts_with("CONTINUE") {
                    tracing::warn!(position = p, reply = %reply, "unrecognized boundary reply; continuing");
                }
            }
        }
    }

    let mut drafts = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for (p, reason) in cuts {
        drafts.push(EpisodeDraft { turns: turns[start..p].to_vec(), boundary_reason: reason });
        start = p;
    }
    drafts.push(EpisodeDraft {
        turns: turns[start..].to_vec(),
        boundary_reason: "end of stream".to_string(),
    });
    Ok(drafts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::FnChat;
    use crate::time::Timestamp;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn stream(n: usize) -> Vec<DialogueTurn> {
        (0..n)
            .map(|i| {
                DialogueTurn::new(format!("t{i}"), "A", format!("turn number {i}"), Timestamp::from_unix(i as i64))
            })
            .collect()
    }

    fn sizes(d: &[EpisodeDraft]) -> Vec<usize> {
        d.iter().map(|d| d.turns.len()).collect()
    }

    fn reference() -> Providers {
        Providers::reference(0)
    }

    #[test]
    fn fixed_message_flushes_remainder() {
        let d = segment_stream(&stream(25), &SegmentationStrategy::FixedMessage { n: 10 }, &reference()).unwrap();
        assert_eq!(sizes(&d), [10, 10, 5]);
        assert_eq!(d[2].boundary_reason, "end of stream");
    }

    #[test]
    fn oracle_cuts_at_session_change() {
        let turns: Vec<_> = stream(3)
            .into_iter()
            .zip(["s1", "s1", "s2"])
            .map(|(t, s)| t.with_session(s))
            .collect();
        let d = segment_stream(&turns, &SegmentationStrategy::OracleSession, &reference()).unwrap();
        assert_eq!(sizes(&d), [2, 1]);
    }

    #[test]
    fn oracle_requires_session_ids() {
        let err = segment_stream(&stream(2), &SegmentationStrategy::OracleSession, &reference()).unwrap_err();
        assert!(matches!(err, TraceError::Usage(_)));
    }

    #[test]
    fn fixed_token_never_splits_turns() {
        let mut turns = stream(4);
        turns[1].content = "one two three four five six seven".into();
        // token counts: 3, 7, 3, 3 with n = 6
        let d = segment_stream(&turns, &SegmentationStrategy::FixedToken { n: 6 }, &reference()).unwrap();
        assert_eq!(sizes(&d), [1, 1, 2]);
    }

    #[test]
    fn semantic_cuts_at_scripted_boundary() {
        let replies = ["CONTINUE", "BOUNDARY", "CONTINUE"];
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let chat = FnChat::new(move |req| {
            assert_eq!(req.schema(), Some(schema::BOUNDARY));
            Ok(replies[c.fetch_add(1, Ordering::SeqCst)].to_string())
        });
        let providers = reference().with_chat(Arc::new(chat));
        // 4 turns -> candidate cuts before turns 1, 2, 3; the BOUNDARY reply lands on turn 2.
        let d = segment_stream(&stream(4), &SegmentationStrategy::Semantic { window_size: 8 }, &providers).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(sizes(&d), [2, 2]);
        assert_eq!(d[1].turns[0].turn_id.as_str(), "t2");
    }

    #[test]
    fn semantic_provider_error_carries_position() {
        let chat = FnChat::new(|_| Err(crate::providers::ProviderError::Usage("down".into())));
        let providers = reference().with_chat(Arc::new(chat));
        let err = segment_stream(&stream(3), &SegmentationStrategy::default(), &providers).unwrap_err();
        assert!(matches!(err, TraceError::Provider { position: 1, .. }));
    }

    #[test]
    fn rejects_out_of_order_turns() {
        let mut turns = stream(3);
        turns.swap(0, 2);
        assert!(segment_stream(&turns, &SegmentationStrategy::FixedMessage { n: 2 }, &reference()).is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("fixed_message(10)".parse::<SegmentationStrategy>().unwrap(), SegmentationStrategy::FixedMessage { n: 10 });
        assert_eq!("fixed_token:512".parse::<SegmentationStrategy>().unwrap().label(), "Fixed-Token-512");
        assert_eq!("semantic".parse::<SegmentationStrategy>().unwrap(), SegmentationStrategy::Semantic { window_size: 8 });
        assert!("fixed_message:0".parse::<SegmentationStrategy>().is_err());
        assert!("bogus".parse::<SegmentationStrategy>().is_err());
        let s = SegmentationStrategy::FixedMessage { n: 3 };
        assert_eq!(s.to_string().parse::<SegmentationStrategy>().unwrap(), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_strategy() -> impl Strategy<Value = SegmentationStrategy> {
            prop_oneof![
                (1usize..12).prop_map(|n| SegmentationStrategy::FixedMessage { n }),
                (1usize..30).prop_map(|n| SegmentationStrategy::FixedToken { n }),
                Just(SegmentationStrategy::OracleSession),
                (1usize..10).prop_map(|w| SegmentationStrategy::Semantic { window_size: w }),
            ]
        }

        proptest! {
            #[test]
            fn drafts_partition_the_stream(
                lens in proptest::collection::vec((1usize..12, 0i64..4000, 0u8..3), 0..40),
                strategy in arb_strategy(),
            ) {
                let mut t = 0i64;
                let turns: Vec<DialogueTurn> = lens.iter().enumerate().map(|(i, &(len, gap, sess))| {
                    t += gap;
                    let content = vec!["w"; len].join(" ");
                    DialogueTurn::new(format!("t{i}"), "A", content, Timestamp::from_unix(t))
                        .with_session(format!("s{sess}"))
                }).collect();
                let drafts = segment_stream(&turns, &strategy, &reference()).unwrap();
                let rejoined: Vec<DialogueTurn> = drafts.iter().flat_map(|d| d.turns.clone()).collect();
                prop_assert_eq!(&rejoined, &turns);
                prop_assert!(drafts.iter().all(|d| !d.turns.is_empty()));
                if let SegmentationStrategy::FixedToken { n } = strategy {
                    for d in &drafts {
                        let total: usize = d.turns.iter().map(|t| whitespace_token_count(&t.content)).sum();
                        prop_assert!(total <= n || d.turns.len() == 1);
                    }
                }
            }
        }
    }
}
