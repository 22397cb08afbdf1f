//! Seeded synthetic benchmark whose answers and evidence are known by
//! construction. Every planted fact carries a unique pseudo-word, so plain
//! lexical retrieval is enough to find it.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{category, Conversation, EvalDataset, EvalQuestion, Session, Validity};
use crate::time::Timestamp;
use crate::types::DialogueTurn;

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "tr", "st"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const CODAS: &[&str] = &["", "", "n", "r", "k", "x", "l"];

const NUMERIC: &[&str] = &["badge number", "locker code", "parking spot", "gate number", "ticket number", "desk number"];
const NAMED: &[&str] = &["project codename", "wifi password", "team mascot", "boat name"];
const PLACES: &[&str] = &["lodge", "museum", "harbor", "studio", "observatory", "vineyard"];
const ACKS: &[&str] = &["Got it.", "Noted, thanks.", "Understood."];

const USER: &str = "User";
const ASSISTANT: &str = "Assistant";
const SESSION_SPACING_DAYS: i64 = 3;
/// Every few sessions a longer break, so the corpus spans several scenes.
const BREAK_EVERY: usize = 4;
const BREAK_DAYS: i64 = 10;

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Words {
    /// A fresh three-syllable pseudo-word never returned before.
    fn fresh(&mut self) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..3 {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(VOWELS.choose(&mut self.rng).unwrap());
            }
            w.push_str(CODAS.choose(&mut self.rng).unwrap());
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

/// A planted key/value fact that a later session may revise.
struct Planted {
    key: String,
    attr: &'static str,
    numeric: bool,
    session: usize,
    question: usize,
}

/// Generates `n_sessions` sessions planting `facts_per_session` facts each,
/// with one question per planted fact. Some facts are time-bounded plans
/// (temporal questions) and some values are revised in a later session
/// (knowledge-update questions). Zero arguments are treated as 1.
pub fn generate_synthetic(seed: u64, n_sessions: usize, facts_per_session: usize) -> EvalDataset {
    let n_sessions = n_sessions.max(1);
    let per = facts_per_session.max(1);
    let mut words = Words { rng: ChaCha8Rng::seed_from_u64(seed), used: HashSet::new() };
    let conversation_id = format!("synthetic_{seed}");
    let base = Timestamp::from_ymd_hms(2023, 1, 2, 9, 0, 0).expect("valid date");

    let mut sessions = Vec::with_capacity(n_sessions);
    let mut questions: Vec<EvalQuestion> = Vec::new();
    let mut planted: Vec<Planted> = Vec::new();

    let mut day = 0;
    for s in 0..n_sessions {
        if s > 0 {
            day += if s % BREAK_EVERY == 0 { BREAK_DAYS } else { SESSION_SPACING_DAYS };
        }
        let session_id = format!("session_{:03}", s + 1);
        let start = base.plus_days(day).plus_seconds((s % 4) as i64 * 3600);
        let mut lines: Vec<String> = Vec::new();

        for _ in 0..per {
            let key = words.fresh();
            let roll: f64 = words.rng.gen();
            if roll < 0.2 {
                let place = *PLACES.choose(&mut words.rng).unwrap();
                let days = words.rng.gen_range(3..=21);
                lines.push(format!("I will visit the {key} {place} for the next {days} days."));
                questions.push(EvalQuestion {
                    question_id: String::new(),
                    conversation_id: conversation_id.clone(),
                    question: format!("When did the user plan the {key} {place} visit?"),
                    gold_answer: start.date_string(),
                    category: category::TEMPORAL.to_string(),
                    evidence_session_ids: vec![session_id.clone()],
                    asked_at: None,
                    validity: Some(Validity { from: start, until: Some(start.plus_days(days)) }),
                });
            } else {
                let numeric = roll < 0.7;
                let (attr, value) = if numeric {
                    (*NUMERIC.choose(&mut words.rng).unwrap(), words.rng.gen_range(1000..10000).to_string())
                } else {
                    (*NAMED.choose(&mut words.rng).unwrap(), words.fresh())
                };
                lines.push(format!("The {key} {attr} is {value}."));
                questions.push(EvalQuestion {
                    question_id: String::new(),
                    conversation_id: conversation_id.clone(),
                    question: format!("What is the {key} {attr}?"),
                    gold_answer: value.clone(),
                    category: category::SINGLE_HOP.to_string(),
                    evidence_session_ids: vec![session_id.clone()],
                    asked_at: None,
                    validity: None,
                });
                planted.push(Planted { key, attr, numeric, session: s, question: questions.len() - 1 });
            }
        }

        // revise one earlier value in about half of the later sessions
        if s > 0 && words.rng.gen_bool(0.5) {
            let open: Vec<usize> = planted
                .iter()
                .enumerate()
                .filter(|(_, p)| p.session < s && questions[p.question].category == category::SINGLE_HOP)
                .map(|(i, _)| i)
                .collect();
            if let Some(&pick) = open.choose(&mut words.rng) {
                let p = &planted[pick];
                let fresh = if p.numeric { words.rng.gen_range(1000..10000).to_string() } else { words.fresh() };
                lines.push(format!("Update: the {} {} is now {fresh}.", p.key, p.attr));
                let q = &mut questions[p.question];
                q.gold_answer = fresh;
                q.category = category::KNOWLEDGE_UPDATE.to_string();
                q.evidence_session_ids.push(session_id.clone());
            }
        }

        let mut turns = Vec::with_capacity(lines.len() * 2);
        for (i, line) in lines.iter().enumerate() {
            let t = start.plus_seconds(i as i64 * 120);
            let ack = ACKS[(s + i) % ACKS.len()];
            turns.push(DialogueTurn::new(format!("{session_id}_t{:02}", 2 * i), USER, line.clone(), t).with_session(session_id.clone()));
            turns.push(
                DialogueTurn::new(format!("{session_id}_t{:02}", 2 * i + 1), ASSISTANT, ack, t.plus_seconds(30))
                    .with_session(session_id.clone()),
            );
        }
        sessions.push(Session { session_id, timestamp: start, turns });
    }

    for (i, q) in questions.iter_mut().enumerate() {
        q.question_id = format!("q{:04}", i + 1);
    }
    EvalDataset {
        name: format!("synthetic-{seed}-{n_sessions}x{per}"),
        conversations: vec![Conversation { conversation_id, sessions }],
        questions,
    }
}
