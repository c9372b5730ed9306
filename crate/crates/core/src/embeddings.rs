//! Task-attribute vectors for grounding: synthetic descriptions, a hashed
//! text featurizer, ingested sentence embeddings, program embeddings and
//! flattened boards.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::board::{Board, BoardDataset};
use crate::rng::{rng_from_seed, Rng};
use crate::synthesis::RecognitionNet;

pub const TEXT_DIM: usize = 768;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("board has no red tile")]
    AllWhite,
    #[error("text has no tokens")]
    NoTokens,
    #[error("line {line}: expected dim {expected}, got {got}")]
    DimMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("no vector for board {0:?}")]
    MissingBoard(String),
    #[error("board {0:?} has no descriptions")]
    NoDescriptions(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("recognition net: {0}")]
    Recognition(String),
}

/// `"The reds are in: row R and column C, ..., row R and column C."` with
/// 1-indexed coordinates in a seeded order.
pub fn synth_describe(board: &Board, permutation_seed: u64) -> Result<String, EmbeddingError> {
    let mut reds = board.reds();
    if reds.is_empty() {
        return Err(EmbeddingError::AllWhite);
    }
    reds.shuffle(&mut rng_from_seed(permutation_seed));
    let clauses: Vec<String> = reds
        .iter()
        .map(|(r, c)| format!("row {} and column {}", r + 1, c + 1))
        .collect();
    Ok(format!("The reds are in: {}.", clauses.join(", ")))
}

/// Whitespace token count.
pub fn description_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Token count of `synth_describe` for a board with `reds` red tiles.
pub const fn synth_description_length(reds: usize) -> usize {
    4 + 5 * reds
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag of words, L2-normalized.
pub fn featurize_text(text: &str, dim: usize, hash_seed: u64) -> Result<Vec<f64>, EmbeddingError> {
    let mut v = vec![0.0; dim];
    let mut any = false;
    for t in tokens(text) {
        v[(xxh64(t.as_bytes(), hash_seed) % dim as u64) as usize] += 1.0;
        any = true;
    }
    if !any {
        return Err(EmbeddingError::NoTokens);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Coordinate a token hashes to; exposed so callers can check collisions.
pub fn token_slot(token: &str, dim: usize, hash_seed: u64) -> usize {
    (xxh64(token.to_lowercase().as_bytes(), hash_seed) % dim as u64) as usize
}

/// Row-major cells as 0/1.
pub fn board_autoencoder_target(board: &Board) -> Vec<f64> {
    board.to_f64()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Ingested,
    SyntheticFeaturized,
    ProgramRecognition,
    BoardAutoencoderTarget,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct VectorLine {
    board_id: String,
    vector: Vec<f64>,
}

/// Board id → one or more candidate vectors of a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingProvider {
    pub kind: ProviderKind,
    dim: usize,
    vectors: BTreeMap<String, Vec<Vec<f64>>>,
}

impl EmbeddingProvider {
    pub fn new(kind: ProviderKind, dim: usize) -> Self {
        EmbeddingProvider {
            kind,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn insert(&mut self, board_id: &str, vector: Vec<f64>) -> Result<(), EmbeddingError> {
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                line: 0,
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.vectors.entry(board_id.to_string()).or_default().push(vector);
        Ok(())
    }

    pub fn vectors(&self, board_id: &str) -> Option<&[Vec<f64>]> {
        self.vectors.get(board_id).map(Vec::as_slice)
    }

    /// One alternative, uniformly at random.
    pub fn sample(&self, board_id: &str, rng: &mut Rng) -> Option<&[f64]> {
        let alts = self.vectors.get(board_id)?;
        Some(&alts[rng.random_range(0..alts.len())])
    }

    pub fn mean(&self, board_id: &str) -> Option<Vec<f64>> {
        let alts = self.vectors.get(board_id)?;
        let mut m = vec![0.0; self.dim];
        for v in alts {
            for (a, x) in m.iter_mut().zip(v) {
                *a += x / alts.len() as f64;
            }
        }
        Some(m)
    }

    pub fn check_covers<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<(), EmbeddingError> {
        for id in ids {
            if !self.vectors.contains_key(id) {
                return Err(EmbeddingError::MissingBoard(id.to_string()));
            }
        }
        Ok(())
    }

    /// Same vectors reassigned to boards by a seeded derangement, so no board
    /// keeps its own target (when there are at least two boards).
    pub fn shuffled(&self, seed: u64) -> Self {
        let ids: Vec<&String> = self.vectors.keys().collect();
        let k = ids.len();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut rng = rng_from_seed(seed);
        if k > 1 {
            loop {
                perm.shuffle(&mut rng);
                if perm.iter().enumerate().all(|(i, &p)| i != p) {
                    break;
                }
            }
        }
        let vectors = ids
            .iter()
            .zip(&perm)
            .map(|(id, &p)| ((*id).clone(), self.vectors[ids[p]].clone()))
            .collect();
        EmbeddingProvider {
            kind: self.kind,
            dim: self.dim,
            vectors,
        }
    }

    pub fn read_jsonl<R: BufRead>(reader: R, kind: ProviderKind) -> Result<Self, EmbeddingError> {
        let mut out: Option<EmbeddingProvider> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VectorLine = serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            let p = out.get_or_insert_with(|| EmbeddingProvider::new(kind, rec.vector.len()));
            if rec.vector.len() != p.dim {
                return Err(EmbeddingError::DimMismatch {
                    line: i + 1,
                    expected: p.dim,
                    got: rec.vector.len(),
                });
            }
            p.vectors.entry(rec.board_id).or_default().push(rec.vector);
        }
        out.ok_or(EmbeddingError::Malformed {
            line: 0,
            message: "no vectors".into(),
        })
    }

    pub fn ingest(path: &Path) -> Result<Self, EmbeddingError> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f), ProviderKind::Ingested)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, alts) in &self.vectors {
            for v in alts {
                let line = serde_json::to_string(&VectorLine {
                    board_id: id.clone(),
                    vector: v.clone(),
                })
                .map_err(std::io::Error::other)?;
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn export(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }

    /// One featurized vector per description.
    pub fn from_descriptions(corpus: &DescriptionCorpus, dim: usize, hash_seed: u64) -> Result<Self, EmbeddingError> {
        let mut p = EmbeddingProvider::new(ProviderKind::SyntheticFeaturized, dim);
        for (id, descs) in &corpus.entries {
            for d in descs {
                p.insert(id, featurize_text(&d.text, dim, hash_seed)?)?;
            }
        }
        Ok(p)
    }

    /// Recognition-net embeddings of each board.
    pub fn from_recognition(net: &RecognitionNet, dataset: &BoardDataset) -> Result<Self, EmbeddingError> {
        let mut p = EmbeddingProvider::new(ProviderKind::ProgramRecognition, crate::synthesis::EMBEDDING_DIM);
        for e in &dataset.entries {
            let v = net
                .embed_board(&e.board)
                .map_err(|err| EmbeddingError::Recognition(err.to_string()))?;
            p.insert(&e.id, v)?;
        }
        Ok(p)
    }

    pub fn autoencoder(dataset: &BoardDataset) -> Self {
        let dim = dataset.entries.first().map_or(0, |e| e.board.cell_count());
        let mut p = EmbeddingProvider::new(ProviderKind::BoardAutoencoderTarget, dim);
        for e in &dataset.entries {
            p.vectors
                .entry(e.id.clone())
                .or_default()
                .push(board_autoencoder_target(&e.board));
        }
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionSource {
    Human,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub text: String,
    pub source: DescriptionSource,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DescriptionLine {
    board_id: String,
    text: String,
    source: DescriptionSource,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptionCorpus {
    pub entries: BTreeMap<String, Vec<Description>>,
}

impl DescriptionCorpus {
    pub fn add(&mut self, board_id: &str, text: String, source: DescriptionSource) {
        self.entries
            .entry(board_id.to_string())
            .or_default()
            .push(Description { text, source });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `per_board` synthetic descriptions per red-bearing board, each with
    /// its own clause order.
    pub fn synthetic(dataset: &BoardDataset, per_board: usize, seed: u64) -> Result<Self, EmbeddingError> {
        let mut c = DescriptionCorpus::default();
        for (i, e) in dataset.entries.iter().enumerate() {
            if e.board.red_count() == 0 {
                continue;
            }
            for k in 0..per_board.max(1) {
                let s = crate::rng::derive_seed(seed, (i * 1024 + k) as u64);
                c.add(&e.id, synth_describe(&e.board, s)?, DescriptionSource::Synthetic);
            }
        }
        Ok(c)
    }

    /// Mean whitespace-token length per board.
    pub fn mean_lengths(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|(id, ds)| {
                let total: usize = ds.iter().map(|d| description_length(&d.text)).sum();
                (id.clone(), total as f64 / ds.len().max(1) as f64)
            })
            .collect()
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut c = DescriptionCorpus::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: DescriptionLine = serde_json::from_str(&line).map_err(|e| EmbeddingError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if rec.text.trim().is_empty() {
                return Err(EmbeddingError::Malformed {
                    line: i + 1,
                    message: "empty description".into(),
                });
            }
            c.add(&rec.board_id, rec.text, rec.source);
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (id, ds) in &self.entries {
            for d in ds {
                let line = serde_json::to_string(&DescriptionLine {
                    board_id: id.clone(),
                    text: d.text.clone(),
                    source: d.source,
                })
                .map_err(std::io::Error::other)?;
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}
