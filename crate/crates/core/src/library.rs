//! Greedy MDL compression: repeated closed instruction runs become library
//! functions, and the corpus is rewritten to call them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dsl::{FnId, Instr, Library, Program};

pub const DEFAULT_LAMBDA: f64 = 1.5;

/// Total corpus size plus `lambda` times the total library body size.
pub fn mdl(programs: &[Program], library: &Library, lambda: f64) -> f64 {
    let corpus: usize = programs.iter().map(Program::size).sum();
    let lib: usize = library.functions.iter().map(Program::size).sum();
    corpus as f64 + lambda * lib as f64
}

/// Non-overlapping, leftmost-first occurrences of `pattern` in `program`,
/// searching fork bodies that are not themselves swallowed by a match.
pub fn count_occurrences(program: &Program, pattern: &[Instr]) -> usize {
    count_in(program.instrs(), pattern)
}

fn count_in(seq: &[Instr], pattern: &[Instr]) -> usize {
    let l = pattern.len();
    let mut i = 0;
    let mut count = 0;
    while i < seq.len() {
        if i + l <= seq.len() && seq[i..i + l] == *pattern {
            count += 1;
            i += l;
        } else {
            if let Instr::Fork(body) = &seq[i] {
                count += count_in(body.instrs(), pattern);
            }
            i += 1;
        }
    }
    count
}

/// Replaces every occurrence counted by [`count_occurrences`] with `Call(id)`.
pub fn rewrite(program: &Program, pattern: &[Instr], id: FnId) -> Program {
    Program(rewrite_seq(program.instrs(), pattern, id))
}

fn rewrite_seq(seq: &[Instr], pattern: &[Instr], id: FnId) -> Vec<Instr> {
    let l = pattern.len();
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + l <= seq.len() && seq[i..i + l] == *pattern {
            out.push(Instr::Call(id));
            i += l;
        } else {
            out.push(match &seq[i] {
                Instr::Fork(body) => Instr::Fork(Program(rewrite_seq(body.instrs(), pattern, id))),
                other => other.clone(),
            });
            i += 1;
        }
    }
    out
}

fn collect_runs<'a>(seq: &'a [Instr], out: &mut HashMap<&'a [Instr], usize>) {
    for start in 0..seq.len() {
        for end in start + 1..=seq.len() {
            let run = &seq[start..end];
            if run.len() >= 2 || run_size(run) >= 2 {
                *out.entry(run).or_insert(0) += 1;
            }
        }
        if let Instr::Fork(body) = &seq[start] {
            collect_runs(body.instrs(), out);
        }
    }
}

fn run_size(run: &[Instr]) -> usize {
    run.iter()
        .map(|i| match i {
            Instr::Fork(b) => 1 + b.size(),
            _ => 1,
        })
        .sum()
}

struct Candidate {
    body: Vec<Instr>,
    printed: String,
    size: usize,
    upper: usize,
}

fn gather(programs: &[Program]) -> Vec<Candidate> {
    let mut runs: HashMap<&[Instr], usize> = HashMap::new();
    for p in programs {
        collect_runs(p.instrs(), &mut runs);
    }
    let mut out: Vec<Candidate> = runs
        .into_iter()
        .filter(|&(_, overlapping)| overlapping >= 2)
        .map(|(run, overlapping)| Candidate {
            body: run.to_vec(),
            printed: Program(run.to_vec()).to_string(),
            size: run_size(run),
            upper: overlapping,
        })
        .collect();
    out.sort_by(|a, b| a.printed.cmp(&b.printed));
    out
}

/// Runs of length ≥ 2 (and single instructions of size ≥ 2, i.e. whole fork
/// bodies such as `(fork move)`) occurring at least twice under
/// non-overlapping leftmost-first matching; sorted by printed form.
pub fn candidates(programs: &[Program]) -> Vec<Program> {
    gather(programs)
        .into_iter()
        .filter(|c| programs.iter().map(|p| count_occurrences(p, &c.body)).sum::<usize>() >= 2)
        .map(|c| Program(c.body))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub candidate: String,
    pub occurrences: usize,
    pub mdl_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub lambda: f64,
    pub rounds: Vec<Round>,
    pub mdl_before: f64,
    pub mdl_after: f64,
}

#[derive(Clone, Debug)]
pub struct CompressionResult {
    pub library: Library,
    pub rewritten: Vec<Program>,
    pub report: CompressionReport,
}

impl CompressionResult {
    pub fn adopted(&self) -> usize {
        self.report.rounds.len()
    }
}

/// Greedy compression of `programs` on top of an existing `library`.
/// Each round adopts the candidate with the largest strict MDL reduction
/// (ties: smaller body, then printed form) and rewrites the corpus.
pub fn compress(
    programs: &[Program],
    library: &Library,
    lambda: f64,
    max_new_functions: usize,
) -> CompressionResult {
    let mut library = library.clone();
    let mut corpus = programs.to_vec();
    let mdl_before = mdl(&corpus, &library, lambda);
    let mut rounds = Vec::new();
    while rounds.len() < max_new_functions {
        let cands = gather(&corpus);
        // (delta, size, printed, body, occurrences); lower delta is better
        let mut best: Option<(f64, usize, &Candidate, usize)> = None;
        let mut order: Vec<&Candidate> = cands.iter().collect();
        order.sort_by(|a, b| bound(b, lambda).total_cmp(&bound(a, lambda)));
        for c in order {
            let optimistic = -bound(c, lambda);
            if let Some((d, ..)) = best {
                if optimistic > d {
                    break;
                }
            }
            let occ: usize = corpus.iter().map(|p| count_occurrences(p, &c.body)).sum();
            if occ < 2 {
                continue;
            }
            let delta = lambda * c.size as f64 - (occ * (c.size - 1)) as f64;
            if delta >= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((d, s, b, _)) => {
                    delta < d
                        || (delta == d && (c.size < s || (c.size == s && c.printed < b.printed)))
                }
            };
            if better {
                best = Some((delta, c.size, c, occ));
            }
        }
        let Some((delta, _, chosen, occ)) = best else { break };
        let id = library
            .push(Program(chosen.body.clone()))
            .expect("candidate bodies only call earlier functions");
        corpus = corpus.iter().map(|p| rewrite(p, &chosen.body, id)).collect();
        rounds.push(Round {
            candidate: chosen.printed.clone(),
            occurrences: occ,
            mdl_delta: delta,
        });
    }
    let mdl_after = mdl(&corpus, &library, lambda);
    CompressionResult {
        library,
        rewritten: corpus,
        report: CompressionReport {
            lambda,
            rounds,
            mdl_before,
            mdl_after,
        },
    }
}

/// Largest possible reduction for a candidate, from its overlapping count.
fn bound(c: &Candidate, lambda: f64) -> f64 {
    (c.upper * (c.size - 1)) as f64 - lambda * c.size as f64
}
