//! Binary boards and weighted board datasets.
//!
//! A [`Board`] is an `n×n` grid of red (1) and white (0) tiles, stored as a
//! row-major bitmask. Coordinates are `(row, col)` from the top-left corner,
//! 0-indexed internally.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

/// Smallest supported side length.
pub const MIN_SIDE: usize = 2;
/// Largest supported side length; boards are stored in a `u64` mask.
pub const MAX_SIDE: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoardError {
    #[error("board text is empty")]
    Empty,
    #[error("board side {0} is below the minimum of {MIN_SIDE}")]
    TooSmall(usize),
    #[error("board side {0} exceeds the maximum of {MAX_SIDE}")]
    TooLarge(usize),
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid cell {value:?} at row {row}, column {col}")]
    InvalidCell { row: usize, col: usize, value: String },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Board {
    n: usize,
    bits: u64,
}

impl Board {
    pub fn empty(n: usize) -> Result<Self, BoardError> {
        check_side(n)?;
        Ok(Board { n, bits: 0 })
    }

    pub fn full(n: usize) -> Result<Self, BoardError> {
        check_side(n)?;
        Ok(Board {
            n,
            bits: full_mask(n),
        })
    }

    /// Builds a board from a row-major mask. Bits beyond `n²` must be clear.
    pub fn from_mask(n: usize, bits: u64) -> Result<Self, BoardError> {
        check_side(n)?;
        if bits & !full_mask(n) != 0 {
            return Err(BoardError::InvalidCell {
                row: n,
                col: 0,
                value: format!("mask bit beyond {}", n * n),
            });
        }
        Ok(Board { n, bits })
    }

    pub fn from_cells(cells: &[(usize, usize)], n: usize) -> Result<Self, BoardError> {
        let mut board = Board::empty(n)?;
        for &(r, c) in cells {
            if r >= n || c >= n {
                return Err(BoardError::InvalidCell {
                    row: r,
                    col: c,
                    value: "out of range".into(),
                });
            }
            board.set(r, c, true);
        }
        Ok(board)
    }

    pub fn from_grid(grid: &[Vec<u8>]) -> Result<Self, BoardError> {
        let n = grid.len();
        if n == 0 {
            return Err(BoardError::Empty);
        }
        check_side(n)?;
        let mut bits = 0u64;
        for (r, row) in grid.iter().enumerate() {
            if row.len() != n {
                return Err(BoardError::Ragged {
                    row: r,
                    expected: n,
                    found: row.len(),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => bits |= 1 << (r * n + c),
                    other => {
                        return Err(BoardError::InvalidCell {
                            row: r,
                            col: c,
                            value: other.to_string(),
                        })
                    }
                }
            }
        }
        Ok(Board { n, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    pub fn mask(&self) -> u64 {
        self.bits
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.n + col
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.n, index % self.n)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.is_red(self.index(row, col))
    }

    pub fn is_red(&self, index: usize) -> bool {
        self.bits >> index & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, red: bool) {
        let i = self.index(row, col);
        self.set_index(i, red);
    }

    pub fn set_index(&mut self, index: usize, red: bool) {
        if red {
            self.bits |= 1 << index;
        } else {
            self.bits &= !(1 << index);
        }
    }

    pub fn red_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    /// Red tile indices in row-major order.
    pub fn red_indices(&self) -> Vec<usize> {
        (0..self.cell_count()).filter(|&i| self.is_red(i)).collect()
    }

    pub fn reds(&self) -> Vec<(usize, usize)> {
        self.red_indices()
            .into_iter()
            .map(|i| self.coords(i))
            .collect()
    }

    pub fn grid(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|r| (0..self.n).map(|c| self.get(r, c) as u8).collect())
            .collect()
    }

    /// Row-major flatten as 0.0/1.0.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.cell_count())
            .map(|i| if self.is_red(i) { 1.0 } else { 0.0 })
            .collect()
    }

    /// Rows joined by `/`.
    pub fn to_text(&self) -> String {
        let rows: Vec<String> = (0..self.n)
            .map(|r| {
                (0..self.n)
                    .map(|c| if self.get(r, c) { '1' } else { '0' })
                    .collect()
            })
            .collect();
        rows.join("/")
    }
}

fn check_side(n: usize) -> Result<(), BoardError> {
    if n < MIN_SIDE {
        Err(BoardError::TooSmall(n))
    } else if n > MAX_SIDE {
        Err(BoardError::TooLarge(n))
    } else {
        Ok(())
    }
}

pub(crate) fn full_mask(n: usize) -> u64 {
    if n * n == 64 {
        u64::MAX
    } else {
        (1u64 << (n * n)) - 1
    }
}

/// Parses rows of `0`/`1` separated by `/` or newlines.
pub fn parse_board(text: &str) -> Result<Board, BoardError> {
    let rows: Vec<&str> = text
        .split(['/', '\n'])
        .map(|r| r.trim())
        .filter(|r| !r.is_empty())
        .collect();
    if rows.is_empty() {
        return Err(BoardError::Empty);
    }
    let n = rows.len();
    check_side(n)?;
    let mut bits = 0u64;
    for (r, row) in rows.iter().enumerate() {
        let chars: Vec<char> = row.chars().collect();
        if chars.len() != n {
            return Err(BoardError::Ragged {
                row: r,
                expected: n,
                found: chars.len(),
            });
        }
        for (c, ch) in chars.into_iter().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << (r * n + c),
                other => {
                    return Err(BoardError::InvalidCell {
                        row: r,
                        col: c,
                        value: other.to_string(),
                    })
                }
            }
        }
    }
    Ok(Board { n, bits })
}

impl FromStr for Board {
    type Err = BoardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_board(s)
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl fmt::Debug for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Board({})", self.to_text())
    }
}

impl Serialize for Board {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.grid().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Board {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let grid = Vec::<Vec<u8>>::deserialize(deserializer)?;
        Board::from_grid(&grid).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("dataset is empty")]
    Empty,
    #[error("dataset has no entry with positive weight")]
    ZeroWeight,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    #[serde(rename = "grid")]
    pub board: Board,
    pub weight: f64,
}

/// Boards with ids and nonnegative sampling weights (GSP occurrence
/// frequencies, or counts from any generator).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoardDataset {
    pub entries: Vec<DatasetEntry>,
}

impl BoardDataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Result<Self, DatasetError> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !(e.weight >= 0.0 && e.weight.is_finite()) {
                return Err(DatasetError::Malformed {
                    line: i + 1,
                    message: format!("weight {} must be finite and nonnegative", e.weight),
                });
            }
            if !seen.insert(e.id.clone()) {
                return Err(DatasetError::DuplicateId {
                    line: i + 1,
                    id: e.id.clone(),
                });
            }
        }
        Ok(BoardDataset { entries })
    }

    /// Builds a dataset from boards, merging duplicates into counts.
    /// Ids are `{prefix}-{mask as hex}`; order is by first occurrence.
    pub fn from_counts<I: IntoIterator<Item = Board>>(prefix: &str, boards: I) -> Self {
        let mut order: Vec<Board> = Vec::new();
        let mut counts: std::collections::HashMap<Board, f64> = Default::default();
        for b in boards {
            let c = counts.entry(b).or_insert(0.0);
            if *c == 0.0 {
                order.push(b);
            }
            *c += 1.0;
        }
        let entries = order
            .into_iter()
            .map(|b| DatasetEntry {
                id: board_id(prefix, &b),
                board: b,
                weight: counts[&b],
            })
            .collect();
        BoardDataset { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum()
    }

    /// Entries whose board has no red tile.
    pub fn all_white_ids(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.board.red_count() == 0)
            .map(|e| e.id.as_str())
            .collect()
    }

    /// Copy without all-white boards, which the reveal task cannot use.
    pub fn without_all_white(&self) -> Self {
        BoardDataset {
            entries: self
                .entries
                .iter()
                .filter(|e| e.board.red_count() > 0)
                .cloned()
                .collect(),
        }
    }

    /// The `k` heaviest entries, ties broken by id.
    pub fn top_k(&self, k: usize) -> Self {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| {
            b.weight
                .partial_cmp(&a.weight)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.id.cmp(&b.id))
        });
        entries.truncate(k);
        BoardDataset { entries }
    }

    pub fn sampler(&self) -> Result<BoardSampler, DatasetError> {
        if self.entries.is_empty() {
            return Err(DatasetError::Empty);
        }
        let weights: Vec<f64> = self.entries.iter().map(|e| e.weight).collect();
        WeightedIndex::new(&weights)
            .map(|dist| BoardSampler { dist })
            .map_err(|_| DatasetError::ZeroWeight)
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, DatasetError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: DatasetEntry =
                serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.push(entry);
        }
        BoardDataset::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
            writeln!(writer, "{line}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()
    }
}

pub fn board_id(prefix: &str, board: &Board) -> String {
    format!("{prefix}-{:0width$x}", board.mask(), width = (board.cell_count() + 3) / 4)
}

/// Weighted index sampler over a dataset's entries.
#[derive(Clone, Debug)]
pub struct BoardSampler {
    dist: WeightedIndex<f64>,
}

impl BoardSampler {
    pub fn sample_index<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// Draws one board with probability proportional to its weight.
pub fn sample_board(dataset: &BoardDataset, seed: u64) -> Result<Board, DatasetError> {
    let sampler = dataset.sampler()?;
    let mut rng = rng_from_seed(seed);
    Ok(dataset.entries[sampler.sample_index(&mut rng)].board)
}
