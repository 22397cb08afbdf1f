use std::fmt::Write as _;

use super::{EvalReport, SegmentationRow};

fn pct(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

/// Left-aligns the first column and right-aligns the rest.
fn table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

pub fn render_report(r: &EvalReport) -> String {
    let mut rows = vec![vec!["category".to_string(), "questions".into(), "correct".into(), "accuracy".into()]];
    for (name, c) in &r.categories {
        rows.push(vec![name.clone(), c.questions.to_string(), c.correct.to_string(), pct(c.accuracy)]);
    }
    let correct: usize = r.categories.values().map(|c| c.correct).sum();
    rows.push(vec![
        "overall".into(),
        r.questions.to_string(),
        correct.to_string(),
        r.overall_accuracy.map_or_else(|| "n/a".to_string(), pct),
    ]);
    let mut out = format!("dataset {} (K={})\n\n", r.dataset, r.k);
    out.push_str(&table(&rows));

    out.push('\n');
    let mut recall = vec![vec!["K".to_string(), "recall".into()]];
    for (k, v) in &r.recall_at {
        recall.push(vec![k.to_string(), pct(*v)]);
    }
    out.push_str(&table(&recall));
    let _ = writeln!(
        out,
        "\nzero-recall questions: {} ({} answered correctly) of {} with evidence",
        r.zero_recall.questions, r.zero_recall.answered_correctly, r.recall_questions
    );
    let _ = writeln!(out, "avg context tokens: {:.1}", r.avg_context_tokens);
    let _ = writeln!(
        out,
        "membase: {} cells, {} scenes, {:.2} cells/scene, {:.1} cells/conversation",
        r.membase.cells, r.membase.scenes, r.membase.avg_cells_per_scene, r.membase.avg_cells_per_conversation
    );
    if r.failures > 0 {
        let _ = writeln!(out, "failed questions: {}", r.failures);
    }
    out
}

pub fn render_segmentation(rows: &[SegmentationRow]) -> String {
    let mut t = vec![vec![
        "strategy".to_string(),
        "accuracy".into(),
        "recall@K".into(),
        "cells".into(),
        "scenes".into(),
        "ctx tokens".into(),
    ]];
    for row in rows {
        match &row.report {
            Some(r) => t.push(vec![
                row.label.clone(),
                r.overall_accuracy.map_or_else(|| "n/a".to_string(), pct),
                r.recall_at.get(&r.k).map_or_else(|| "n/a".to_string(), |v| pct(*v)),
                r.membase.cells.to_string(),
                r.membase.scenes.to_string(),
                format!("{:.1}", r.avg_context_tokens),
            ]),
            None => t.push(vec![row.label.clone(), "n/a".into(), "n/a".into(), "-".into(), "-".into(), "-".into()]),
        }
    }
    let mut out = table(&t);
    for row in rows {
        if let Some(note) = &row.note {
            let _ = writeln!(out, "{}: {note}", row.label);
        }
    }
    out
}
