//! The pointer/pen drawing language.
//!
//! A program drives a pointer over the grid. The pointer has a location, an
//! orientation, and a pen; with the pen down every visited cell is marked.
//! `fork` saves the pointer state, runs its body, and restores the state,
//! keeping any marks made inside the body.
//!
//! Concrete syntax is whitespace separated tokens:
//!
//! ```text
//! pen-down (fork move move) left move f0
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::Board;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("unknown token {token:?} at position {position}")]
    UnknownToken { token: String, position: usize },
    #[error("unbalanced parentheses at position {position}")]
    Unbalanced { position: usize },
    #[error("undefined library function f{0}")]
    UndefinedFunction(usize),
    #[error("library call graph has a cycle through f{0}")]
    Cycle(usize),
    #[error("library function f{0} has an empty body")]
    EmptyBody(usize),
    #[error("library keys must be f0..f{{k-1}}; got {0:?}")]
    BadLibraryKey(String),
    #[error("call depth exceeded while executing f{0}")]
    Recursion(usize),
    #[error("start cell ({row}, {col}) is outside a {n}x{n} grid")]
    StartOutOfBounds { row: usize, col: usize, n: usize },
    #[error("grid of side {0} is not supported")]
    BadGrid(usize),
    #[error("{0}")]
    Io(String),
}

/// Index of a learned library function, printed as `f<k>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FnId(pub usize);

impl fmt::Display for FnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Move,
    Left,
    Right,
    PenUp,
    PenDown,
    Fork(Program),
    Call(FnId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Program(pub Vec<Instr>);

impl Program {
    pub fn new(instrs: Vec<Instr>) -> Self {
        Program(instrs)
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Token count; a fork counts one plus its body, a call counts one.
    pub fn size(&self) -> usize {
        self.0
            .iter()
            .map(|i| match i {
                Instr::Fork(body) => 1 + body.size(),
                _ => 1,
            })
            .sum()
    }

    /// Replaces every call by the callee's body, recursively.
    pub fn inline(&self, library: &Library) -> Program {
        let mut out = Vec::new();
        self.inline_into(library, &mut out);
        Program(out)
    }

    fn inline_into(&self, library: &Library, out: &mut Vec<Instr>) {
        for instr in &self.0 {
            match instr {
                Instr::Call(id) => library.functions[id.0].inline_into(library, out),
                Instr::Fork(body) => out.push(Instr::Fork(body.inline(library))),
                other => out.push(other.clone()),
            }
        }
    }

    /// Largest library id referenced anywhere in the program.
    pub fn max_call(&self) -> Option<usize> {
        self.0
            .iter()
            .filter_map(|i| match i {
                Instr::Call(id) => Some(id.0),
                Instr::Fork(body) => body.max_call(),
                _ => None,
            })
            .max()
    }

    pub fn calls(&self) -> Vec<FnId> {
        let mut out = Vec::new();
        self.collect_calls(&mut out);
        out
    }

    fn collect_calls(&self, out: &mut Vec<FnId>) {
        for i in &self.0 {
            match i {
                Instr::Call(id) => out.push(*id),
                Instr::Fork(body) => body.collect_calls(out),
                _ => {}
            }
        }
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, instr) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            match instr {
                Instr::Move => f.write_str("move")?,
                Instr::Left => f.write_str("left")?,
                Instr::Right => f.write_str("right")?,
                Instr::PenUp => f.write_str("pen-up")?,
                Instr::PenDown => f.write_str("pen-down")?,
                Instr::Call(id) => write!(f, "{id}")?,
                Instr::Fork(body) if body.is_empty() => f.write_str("(fork)")?,
                Instr::Fork(body) => write!(f, "(fork {body})")?,
            }
        }
        Ok(())
    }
}

/// Learned subprograms. Function `f<k>` is `functions[k]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Library {
    pub functions: Vec<Program>,
}

impl Library {
    pub fn new() -> Self {
        Library::default()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn get(&self, id: FnId) -> Option<&Program> {
        self.functions.get(id.0)
    }

    /// Appends a function. Its body may only call already defined functions,
    /// which keeps the call graph acyclic.
    pub fn push(&mut self, body: Program) -> Result<FnId, DslError> {
        let id = self.functions.len();
        if body.is_empty() {
            return Err(DslError::EmptyBody(id));
        }
        if let Some(max) = body.max_call() {
            if max >= id {
                return Err(DslError::UndefinedFunction(max));
            }
        }
        self.functions.push(body);
        Ok(FnId(id))
    }

    /// Validates bodies, references, and acyclicity.
    pub fn validate(&self) -> Result<(), DslError> {
        for (k, body) in self.functions.iter().enumerate() {
            if body.is_empty() {
                return Err(DslError::EmptyBody(k));
            }
            for c in body.calls() {
                if c.0 >= self.functions.len() {
                    return Err(DslError::UndefinedFunction(c.0));
                }
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.functions.len()];
        fn visit(lib: &Library, k: usize, state: &mut [u8]) -> Result<(), DslError> {
            match state[k] {
                1 => return Err(DslError::Cycle(k)),
                2 => return Ok(()),
                _ => {}
            }
            state[k] = 1;
            for c in lib.functions[k].calls() {
                visit(lib, c.0, state)?;
            }
            state[k] = 2;
            Ok(())
        }
        for k in 0..self.functions.len() {
            visit(self, k, &mut state)?;
        }
        Ok(())
    }

    pub fn to_json_map(&self) -> BTreeMap<String, String> {
        self.functions
            .iter()
            .enumerate()
            .map(|(k, p)| (format!("f{k}"), p.to_string()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        // keep numeric order in the file
        let mut out = String::from("{");
        for (k, p) in self.functions.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(&format!("f{k}")).unwrap());
            out.push(':');
            out.push_str(&serde_json::to_string(&p.to_string()).unwrap());
        }
        out.push('}');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, DslError> {
        let map: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| DslError::Io(e.to_string()))?;
        let k = map.len();
        let mut bodies = vec![None; k];
        for (key, body) in &map {
            let idx = key
                .strip_prefix('f')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&i| i < k)
                .ok_or_else(|| DslError::BadLibraryKey(key.clone()))?;
            bodies[idx] = Some(body.clone());
        }
        let mut functions = Vec::with_capacity(k);
        for body in bodies {
            let body = body.expect("keys are a permutation of 0..k");
            functions.push(parse_with_arity(&body, k)?);
        }
        let lib = Library { functions };
        lib.validate()?;
        Ok(lib)
    }

    pub fn load(path: &Path) -> Result<Self, DslError> {
        let text = std::fs::read_to_string(path).map_err(|e| DslError::Io(e.to_string()))?;
        Library::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DslError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| DslError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Lexeme {
    Open,
    Close,
    Word(String),
}

fn lex(text: &str) -> Vec<(Lexeme, usize)> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if !word.is_empty() {
                out.push((Lexeme::Word(std::mem::take(&mut word)), start));
            }
            if ch == '(' {
                out.push((Lexeme::Open, i));
            } else if ch == ')' {
                out.push((Lexeme::Close, i));
            }
        } else {
            if word.is_empty() {
                start = i;
            }
            word.push(ch);
        }
    }
    if !word.is_empty() {
        out.push((Lexeme::Word(word), start));
    }
    out
}

/// Parses program text against `library`.
pub fn parse_program(text: &str, library: &Library) -> Result<Program, DslError> {
    parse_with_arity(text, library.len())
}

fn parse_with_arity(text: &str, n_functions: usize) -> Result<Program, DslError> {
    let lexemes = lex(text);
    let mut pos = 0;
    let program = parse_seq(&lexemes, &mut pos, n_functions, false)?;
    if pos != lexemes.len() {
        return Err(DslError::Unbalanced {
            position: lexemes[pos].1,
        });
    }
    Ok(program)
}

fn parse_seq(
    lexemes: &[(Lexeme, usize)],
    pos: &mut usize,
    n_functions: usize,
    nested: bool,
) -> Result<Program, DslError> {
    let mut instrs = Vec::new();
    while *pos < lexemes.len() {
        let (lexeme, at) = &lexemes[*pos];
        match lexeme {
            Lexeme::Close => {
                if nested {
                    return Ok(Program(instrs));
                }
                return Err(DslError::Unbalanced { position: *at });
            }
            Lexeme::Open => {
                *pos += 1;
                match lexemes.get(*pos) {
                    Some((Lexeme::Word(w), _)) if w == "fork" => *pos += 1,
                    Some((Lexeme::Word(w), p)) => {
                        return Err(DslError::UnknownToken {
                            token: format!("({w}"),
                            position: *p,
                        })
                    }
                    _ => return Err(DslError::Unbalanced { position: *at }),
                }
                let body = parse_seq(lexemes, pos, n_functions, true)?;
                match lexemes.get(*pos) {
                    Some((Lexeme::Close, _)) => *pos += 1,
                    _ => return Err(DslError::Unbalanced { position: *at }),
                }
                instrs.push(Instr::Fork(body));
            }
            Lexeme::Word(w) => {
                let instr = match w.as_str() {
                    "move" => Instr::Move,
                    "left" => Instr::Left,
                    "right" => Instr::Right,
                    "pen-up" => Instr::PenUp,
                    "pen-down" => Instr::PenDown,
                    other => {
                        let id = other
                            .strip_prefix('f')
                            .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                            .and_then(|d| d.parse::<usize>().ok())
                            .ok_or_else(|| DslError::UnknownToken {
                                token: other.to_string(),
                                position: *at,
                            })?;
                        if id >= n_functions {
                            return Err(DslError::UndefinedFunction(id));
                        }
                        Instr::Call(FnId(id))
                    }
                };
                instrs.push(instr);
                *pos += 1;
            }
        }
    }
    if nested {
        return Err(DslError::Unbalanced {
            position: lexemes.last().map(|l| l.1).unwrap_or(0),
        });
    }
    Ok(Program(instrs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Orientation {
    N,
    E,
    S,
    W,
}

impl Orientation {
    pub fn left(self) -> Self {
        match self {
            Orientation::N => Orientation::W,
            Orientation::W => Orientation::S,
            Orientation::S => Orientation::E,
            Orientation::E => Orientation::N,
        }
    }

    pub fn right(self) -> Self {
        match self {
            Orientation::N => Orientation::E,
            Orientation::E => Orientation::S,
            Orientation::S => Orientation::W,
            Orientation::W => Orientation::N,
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Orientation::N => (-1, 0),
            Orientation::E => (0, 1),
            Orientation::S => (1, 0),
            Orientation::W => (0, -1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PointerState {
    pub row: usize,
    pub col: usize,
    pub orient: Orientation,
    pub pen_down: bool,
}

/// Marks (row-major bitmask) and pen-down motion count of one execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecTrace {
    pub marked: u64,
    pub pen_motions: u32,
    pub final_state: PointerState,
}

impl ExecTrace {
    pub fn marked_cells(&self, n: usize) -> Vec<(usize, usize)> {
        (0..n * n)
            .filter(|i| self.marked >> i & 1 == 1)
            .map(|i| (i / n, i % n))
            .collect()
    }
}

/// Interpreter state, reusable across incremental execution.
#[derive(Clone, Debug)]
pub struct Machine {
    n: usize,
    pub state: PointerState,
    pub marked: u64,
    pub pen_motions: u32,
}

impl Machine {
    pub fn new(n: usize, row: usize, col: usize) -> Self {
        Machine {
            n,
            state: PointerState {
                row,
                col,
                orient: Orientation::E,
                pen_down: false,
            },
            marked: 0,
            pen_motions: 0,
        }
    }

    fn mark_here(&mut self) {
        self.marked |= 1 << (self.state.row * self.n + self.state.col);
    }

    pub fn step_primitive(&mut self, instr: &Instr) {
        match instr {
            Instr::Move => {
                let (dr, dc) = self.state.orient.delta();
                let r = self.state.row as isize + dr;
                let c = self.state.col as isize + dc;
                if r >= 0 && c >= 0 && (r as usize) < self.n && (c as usize) < self.n {
                    self.state.row = r as usize;
                    self.state.col = c as usize;
                    if self.state.pen_down {
                        self.mark_here();
                    }
                }
                if self.state.pen_down {
                    self.pen_motions += 1;
                }
            }
            Instr::Left | Instr::Right => {
                self.state.orient = if matches!(instr, Instr::Left) {
                    self.state.orient.left()
                } else {
                    self.state.orient.right()
                };
                if self.state.pen_down {
                    self.pen_motions += 1;
                }
            }
            Instr::PenUp => self.state.pen_down = false,
            Instr::PenDown => {
                self.state.pen_down = true;
                self.mark_here();
            }
            Instr::Fork(_) | Instr::Call(_) => unreachable!("not a primitive"),
        }
    }

    pub fn run(&mut self, program: &Program, library: &Library, depth: usize) -> Result<(), DslError> {
        for instr in &program.0 {
            match instr {
                Instr::Fork(body) => {
                    let saved = self.state;
                    self.run(body, library, depth)?;
                    self.state = saved;
                }
                Instr::Call(id) => {
                    if depth > library.len() {
                        return Err(DslError::Recursion(id.0));
                    }
                    let body = library
                        .functions
                        .get(id.0)
                        .ok_or(DslError::UndefinedFunction(id.0))?;
                    self.run(body, library, depth + 1)?;
                }
                prim => self.step_primitive(prim),
            }
        }
        Ok(())
    }

    pub fn trace(&self) -> ExecTrace {
        ExecTrace {
            marked: self.marked,
            pen_motions: self.pen_motions,
            final_state: self.state,
        }
    }
}

/// Runs `program` from `start` (facing east, pen up) on an `n×n` grid.
pub fn execute(
    program: &Program,
    start: (usize, usize),
    n: usize,
    library: &Library,
) -> Result<ExecTrace, DslError> {
    if !(crate::board::MIN_SIDE..=crate::board::MAX_SIDE).contains(&n) {
        return Err(DslError::BadGrid(n));
    }
    if start.0 >= n || start.1 >= n {
        return Err(DslError::StartOutOfBounds {
            row: start.0,
            col: start.1,
            n,
        });
    }
    let mut m = Machine::new(n, start.0, start.1);
    m.run(program, library, 0)?;
    Ok(m.trace())
}

/// Program score: `0` is a perfect, motion-free reproduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Score {
    NegInfinity,
    Finite(i64),
}

impl Score {
    pub fn is_finite(&self) -> bool {
        matches!(self, Score::Finite(_))
    }

    pub fn value(&self) -> Option<i64> {
        match self {
            Score::Finite(v) => Some(*v),
            Score::NegInfinity => None,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match self {
            Score::Finite(v) => *v as f64,
            Score::NegInfinity => f64::NEG_INFINITY,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Finite(v) => write!(f, "{v}"),
            Score::NegInfinity => f.write_str("-inf"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Finite(v) => s.serialize_i64(*v),
            Score::NegInfinity => s.serialize_str("-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Score::Finite(v)),
            Raw::Str(s) if s == "-inf" => Ok(Score::NegInfinity),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad score {s:?}"))),
        }
    }
}

pub const MISSED_CELL_PENALTY: i64 = 10;

/// Score of a single execution against a target mask.
pub fn score_trace(trace: &ExecTrace, target: u64) -> Score {
    if trace.marked & !target != 0 {
        return Score::NegInfinity;
    }
    let missed = (target & !trace.marked).count_ones() as i64;
    Score::Finite(-MISSED_CELL_PENALTY * missed - trace.pen_motions as i64)
}

/// Best score over all start locations, with the start that achieves it
/// (first in row-major order on ties).
pub fn score_with_start(
    program: &Program,
    target: &Board,
    library: &Library,
) -> Result<(Score, (usize, usize)), DslError> {
    let n = target.n();
    let mut best = (Score::NegInfinity, (0, 0));
    for r in 0..n {
        for c in 0..n {
            let trace = execute(program, (r, c), n, library)?;
            let s = score_trace(&trace, target.mask());
            if s > best.0 {
                best = (s, (r, c));
            }
        }
    }
    Ok(best)
}

pub fn score(program: &Program, target: &Board, library: &Library) -> Result<Score, DslError> {
    score_with_start(program, target, library).map(|(s, _)| s)
}

pub fn program_size(program: &Program) -> usize {
    program.size()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::parse_board;

    fn p(text: &str) -> Program {
        parse_program(text, &Library::new()).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(
            p("pen-down move move"),
            Program(vec![Instr::PenDown, Instr::Move, Instr::Move])
        );
        assert_eq!(
            p("pen-down (fork move) left"),
            Program(vec![
                Instr::PenDown,
                Instr::Fork(Program(vec![Instr::Move])),
                Instr::Left
            ])
        );
        let lib = Library {
            functions: vec![Program(vec![Instr::Move, Instr::Move])],
        };
        assert_eq!(
            parse_program("f0", &lib).unwrap(),
            Program(vec![Instr::Call(FnId(0))])
        );
    }

    #[test]
    fn parse_normalizes_whitespace() {
        let prog = p("  pen-down\t( fork  move )\nleft ");
        assert_eq!(prog.to_string(), "pen-down (fork move) left");
        assert_eq!(p("(fork)").to_string(), "(fork)");
        assert_eq!(p(""), Program::default());
    }

    #[test]
    fn parse_errors() {
        let lib = Library::new();
        assert!(matches!(
            parse_program("pen-down jump", &lib),
            Err(DslError::UnknownToken { .. })
        ));
        assert!(matches!(
            parse_program("(fork move", &lib),
            Err(DslError::Unbalanced { .. })
        ));
        assert!(matches!(
            parse_program("move)", &lib),
            Err(DslError::Unbalanced { .. })
        ));
        assert_eq!(
            parse_program("f0", &lib),
            Err(DslError::UndefinedFunction(0))
        );
        assert!(matches!(
            parse_program("(loop move)", &lib),
            Err(DslError::UnknownToken { .. })
        ));
    }

    #[test]
    fn execute_pen_down_marks_start() {
        let t = execute(&p("pen-down"), (0, 0), 4, &Library::new()).unwrap();
        assert_eq!(t.marked_cells(4), vec![(0, 0)]);
        assert_eq!(t.pen_motions, 0);
    }

    #[test]
    fn execute_pen_down_move() {
        let t = execute(&p("pen-down move"), (0, 0), 4, &Library::new()).unwrap();
        assert_eq!(t.marked_cells(4), vec![(0, 0), (0, 1)]);
        assert_eq!(t.pen_motions, 1);
    }

    #[test]
    fn execute_fork_restores_pointer() {
        // hand trace: pen-down marks (0,0); fork: move to (0,1), marks, +1 motion,
        // restore to (0,0) facing E pen down; move to (0,1) again, +1 motion.
        let t = execute(&p("pen-down (fork move) move"), (0, 0), 4, &Library::new()).unwrap();
        assert_eq!(t.marked_cells(4), vec![(0, 0), (0, 1)]);
        assert_eq!(t.pen_motions, 2);
        assert_eq!((t.final_state.row, t.final_state.col), (0, 1));
    }

    #[test]
    fn out_of_bounds_move_is_costly_noop() {
        let t = execute(&p("pen-down move move"), (0, 3), 4, &Library::new()).unwrap();
        assert_eq!(t.marked_cells(4), vec![(0, 3)]);
        assert_eq!(t.pen_motions, 2);
        assert_eq!((t.final_state.row, t.final_state.col), (0, 3));
    }

    #[test]
    fn turning_and_pen_up() {
        let t = execute(&p("right pen-down move pen-up move left"), (0, 0), 3, &Library::new())
            .unwrap();
        assert_eq!(t.marked_cells(3), vec![(0, 0), (1, 0)]);
        assert_eq!(t.pen_motions, 1);
        assert_eq!(t.final_state.orient, Orientation::E);
        assert_eq!((t.final_state.row, t.final_state.col), (2, 0));
    }

    #[test]
    fn start_out_of_bounds() {
        assert!(matches!(
            execute(&p("move"), (4, 0), 4, &Library::new()),
            Err(DslError::StartOutOfBounds { .. })
        ));
    }

    #[test]
    fn score_examples() {
        let lib = Library::new();
        let three = parse_board("1110/0000/0000/0000").unwrap();
        assert_eq!(score(&Program::default(), &three, &lib), Ok(Score::Finite(-30)));
        let two = parse_board("1100/0000/0000/0000").unwrap();
        assert_eq!(score(&p("pen-down move"), &two, &lib), Ok(Score::Finite(-1)));
        let white = parse_board("0000/0000/0000/0000").unwrap();
        assert_eq!(score(&p("pen-down"), &white, &lib), Ok(Score::NegInfinity));
        assert_eq!(score(&Program::default(), &white, &lib), Ok(Score::Finite(0)));
    }

    #[test]
    fn score_takes_best_start() {
        let lib = Library::new();
        let target = parse_board("0000/0000/0011/0000").unwrap();
        let (s, start) = score_with_start(&p("pen-down move"), &target, &lib).unwrap();
        assert_eq!(s, Score::Finite(-1));
        assert_eq!(start, (2, 2));
    }

    #[test]
    fn sizes() {
        let lib = Library {
            functions: vec![p("move move move move")],
        };
        assert_eq!(p("pen-down move move").size(), 3);
        assert_eq!(p("pen-down (fork move)").size(), 3);
        assert_eq!(parse_program("f0", &lib).unwrap().size(), 1);
    }

    #[test]
    fn call_matches_inlined_body() {
        let mut lib = Library::new();
        lib.push(p("pen-down move")).unwrap();
        lib.push(parse_program("f0 right f0", &lib).unwrap()).unwrap();
        let prog = parse_program("(fork f1) left f0", &lib).unwrap();
        let inlined = prog.inline(&lib);
        assert_eq!(
            inlined.to_string(),
            "(fork pen-down move right pen-down move) left pen-down move"
        );
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(
                    execute(&prog, (r, c), 4, &lib).unwrap(),
                    execute(&inlined, (r, c), 4, &Library::new()).unwrap()
                );
            }
        }
    }

    #[test]
    fn library_json_roundtrip_and_validation() {
        let mut lib = Library::new();
        for i in 0..12 {
            let body = if i == 0 {
                p("move move")
            } else {
                parse_program(&format!("f{} left", i - 1), &lib).unwrap()
            };
            lib.push(body).unwrap();
        }
        let json = lib.to_json();
        assert!(json.starts_with(r#"{"f0":"move move","f1":"f0 left""#));
        assert_eq!(Library::from_json(&json).unwrap(), lib);

        assert_eq!(
            Library::from_json(r#"{"f0":"f1","f1":"f0 move"}"#),
            Err(DslError::Cycle(0))
        );
        assert_eq!(
            Library::from_json(r#"{"f0":"f2"}"#),
            Err(DslError::UndefinedFunction(2))
        );
        assert!(matches!(
            Library::from_json(r#"{"g0":"move"}"#),
            Err(DslError::BadLibraryKey(_))
        ));
        // topological validity does not require numeric order
        let lib = Library::from_json(r#"{"f0":"f1 move","f1":"left left"}"#).unwrap();
        assert_eq!(lib.len(), 2);
    }

    #[test]
    fn push_rejects_forward_reference() {
        let mut lib = Library::new();
        assert_eq!(
            lib.push(Program(vec![Instr::Call(FnId(0))])),
            Err(DslError::UndefinedFunction(0))
        );
        assert_eq!(lib.push(Program::default()), Err(DslError::EmptyBody(0)));
    }

    #[test]
    fn score_serde() {
        assert_eq!(serde_json::to_string(&Score::Finite(-3)).unwrap(), "-3");
        assert_eq!(serde_json::to_string(&Score::NegInfinity).unwrap(), "\"-inf\"");
        let s: Score = serde_json::from_str("\"-inf\"").unwrap();
        assert_eq!(s, Score::NegInfinity);
        assert!(Score::NegInfinity < Score::Finite(-1000));
    }
}
