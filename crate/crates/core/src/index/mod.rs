//! Lexical and dense indexes over atomic facts, plus rank fusion.

mod bm25;
mod dense;
mod fuse;
mod ranked;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{CellId, FactId, SceneId};
use crate::types::MemCell;

pub use bm25::{idf, Bm25Index, FactPosting, B, K1};
pub use dense::{cosine, DenseIndex};
pub use fuse::{fact_to_cell_scores, max_aggregate, rrf_fuse, scene_scores};
pub use ranked::RankedList;

pub const INVERTED_FILE: &str = "bm25.jsonl";
pub const MATRIX_FILE: &str = "dense.f32";
pub const MATRIX_SIDECAR: &str = "dense.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("fact {0} is already indexed")]
    DuplicateFact(FactId),
    #[error("embedding has dimension {got}, index expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cell {cell} has {facts} facts but {embeddings} fact embeddings")]
    EmbeddingCount { cell: CellId, facts: usize, embeddings: usize },
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index file {file} line {line}: {message}")]
    Format { file: String, line: usize, message: String },
}

/// BM25 and dense indexes over the same facts, with the fact→cell map.
#[derive(Debug, Clone, Default)]
pub struct FactIndex {
    pub bm25: Bm25Index,
    pub dense: DenseIndex,
    fact_cell: HashMap<FactId, CellId>,
}

impl FactIndex {
    pub fn new(dim: usize) -> Self {
        FactIndex { dense: DenseIndex::new(dim), ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.fact_cell.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fact_cell.is_empty()
    }

    pub fn fact_cells(&self) -> &HashMap<FactId, CellId> {
        &self.fact_cell
    }

    pub fn cell_of(&self, fact: &FactId) -> Option<&CellId> {
        self.fact_cell.get(fact)
    }

    /// Indexes every fact of `cell`; `embeddings[i]` belongs to `cell.facts[i]`.
    /// Nothing is inserted if any fact fails validation.
    pub fn insert_cell(
        &mut self,
        cell: &MemCell,
        scene: Option<&SceneId>,
        embeddings: &[Vec<f32>],
    ) -> Result<(), IndexError> {
        if embeddings.len() != cell.facts.len() {
            return Err(IndexError::EmbeddingCount {
                cell: cell.cell_id.clone(),
                facts: cell.facts.len(),
                embeddings: embeddings.len(),
            });
        }
        for (f, e) in cell.facts.iter().zip(embeddings) {
            if self.fact_cell.contains_key(&f.fact_id) {
                return Err(IndexError::DuplicateFact(f.fact_id.clone()));
            }
            let dim = if self.dense.is_empty() && self.dense.dim() == 0 { e.len() } else { self.dense.dim() };
            if e.len() != dim {
                return Err(IndexError::Dimension { expected: dim, got: e.len() });
            }
        }
        for (f, e) in cell.facts.iter().zip(embeddings) {
            self.bm25.insert_text(f.fact_id.clone(), cell.cell_id.clone(), scene.cloned(), &f.text)?;
            self.dense.insert(f.fact_id.clone(), e)?;
            self.fact_cell.insert(f.fact_id.clone(), cell.cell_id.clone());
        }
        Ok(())
    }

    /// BM25 and dense candidate lists fused by RRF.
    pub fn hybrid(&self, text: &str, embedding: &[f32], candidates: usize, rrf_k: f64) -> RankedList<FactId> {
        let lexical = self.bm25.search(text, candidates);
        let dense = self.dense.search(embedding, candidates);
        rrf_fuse(&[lexical, dense], rrf_k)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(INVERTED_FILE))?);
        for d in self.bm25.docs() {
            let line = InvertedLine::Doc {
                fact_id: d.fact_id.clone(),
                cell_id: d.cell_id.clone(),
                scene_id: d.scene_id.clone(),
                length: d.length,
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("serializable"))?;
        }
        for (term, postings) in self.bm25.inverted() {
            let line = InvertedLine::Term {
                term: term.to_string(),
                postings: postings.into_iter().map(|(f, tf)| (f.clone(), tf)).collect(),
            };
            writeln!(w, "{}", serde_json::to_string(&line).expect("serializable"))?;
        }
        w.flush()?;

        let mut m = BufWriter::new(fs::File::create(dir.join(MATRIX_FILE))?);
        for x in self.dense.matrix() {
            m.write_all(&x.to_le_bytes())?;
        }
        m.flush()?;
        let sidecar = Sidecar { dim: self.dense.dim(), fact_ids: self.dense.ids().to_vec() };
        fs::write(dir.join(MATRIX_SIDECAR), serde_json::to_vec_pretty(&sidecar).expect("serializable"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let fmt = |file: &str, line: usize, message: String| IndexError::Format { file: file.into(), line, message };

        let reader = BufReader::new(fs::File::open(dir.join(INVERTED_FILE))?);
        let mut docs: Vec<FactPosting> = Vec::new();
        let mut slot: HashMap<FactId, usize> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: InvertedLine =
                serde_json::from_str(&line).map_err(|e| fmt(INVERTED_FILE, i + 1, e.to_string()))?;
            match parsed {
                InvertedLine::Doc { fact_id, cell_id, scene_id, length } => {
                    slot.insert(fact_id.clone(), docs.len());
                    docs.push(FactPosting { fact_id, cell_id, scene_id, term_freqs: BTreeMap::new(), length });
                }
                InvertedLine::Term { term, postings } => {
                    for (f, tf) in postings {
                        let s = *slot
                            .get(&f)
                            .ok_or_else(|| fmt(INVERTED_FILE, i + 1, format!("posting for unknown fact {f}")))?;
                        docs[s].term_freqs.insert(term.clone(), tf);
                    }
                }
            }
        }

        let sidecar: Sidecar = serde_json::from_slice(&fs::read(dir.join(MATRIX_SIDECAR))?)
            .map_err(|e| fmt(MATRIX_SIDECAR, 1, e.to_string()))?;
        let bytes = fs::read(dir.join(MATRIX_FILE))?;
        if bytes.len() != sidecar.dim * sidecar.fact_ids.len() * 4 {
            return Err(fmt(MATRIX_FILE, 0, format!("{} bytes for {} rows of dim {}", bytes.len(), sidecar.fact_ids.len(), sidecar.dim)));
        }
        let floats: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

        let mut out = FactIndex::new(sidecar.dim);
        for d in docs {
            let sum: u32 = d.term_freqs.values().sum();
            if sum != d.length {
                return Err(fmt(INVERTED_FILE, 0, format!("fact {} length {} != term count {sum}", d.fact_id, d.length)));
            }
            out.fact_cell.insert(d.fact_id.clone(), d.cell_id.clone());
            out.bm25.insert(d)?;
        }
        for (i, id) in sidecar.fact_ids.into_iter().enumerate() {
            out.dense.insert(id, &floats[i * sidecar.dim..(i + 1) * sidecar.dim])?;
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum InvertedLine {
    Doc { fact_id: FactId, cell_id: CellId, scene_id: Option<SceneId>, length: u32 },
    Term { term: String, postings: Vec<(FactId, u32)> },
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    fact_ids: Vec<FactId>,
}
