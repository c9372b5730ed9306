use gridmind::dsl::{execute, parse_program, Instr, Library, Program};
use gridmind::library::{candidates, compress, count_occurrences, mdl};
use gridmind_oracles::mdl as oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p(text: &str) -> Program {
    parse_program(text, &Library::new()).unwrap()
}

fn words(p: &Program) -> Vec<String> {
    p.to_string().split_whitespace().map(str::to_string).collect()
}

fn same_traces(a: &Program, la: &Library, b: &Program, lb: &Library, n: usize) {
    for r in 0..n {
        for c in 0..n {
            let ta = execute(a, (r, c), n, la).unwrap();
            let tb = execute(b, (r, c), n, lb).unwrap();
            assert_eq!(ta.marked, tb.marked, "{a} vs {b}");
            assert_eq!(ta.pen_motions, tb.pen_motions, "{a} vs {b}");
            assert_eq!(ta.final_state, tb.final_state, "{a} vs {b}");
        }
    }
}

#[test]
fn repeated_line_compresses_twelve_to_nine() {
    let corpus = vec![p("pen-down move move move"); 3];
    let r = compress(&corpus, &Library::new(), 1.5, 10);
    assert_eq!(r.report.mdl_before, 12.0);
    assert_eq!(r.report.mdl_after, 9.0);
    assert_eq!(r.library.len(), 1);
    assert_eq!(r.library.functions[0], p("pen-down move move move"));
    assert!(r.rewritten.iter().all(|q| q.to_string() == "f0"));

    // the exhaustive oracle agrees this is the best single abstraction
    let flat: Vec<Vec<String>> = corpus.iter().map(words).collect();
    let scored = oracle::score_all(&flat, 1.5);
    assert_eq!(scored[0].0, 9.0);
    assert_eq!(scored[0].1.join(" "), "pen-down move move move");
}

#[test]
fn overlapping_motif_count_matches_oracle() {
    let seq = words(&p("move move move move move"));
    let pat = words(&p("move move"));
    assert_eq!(oracle::count_occurrences(&seq, &pat), 2);
    assert_eq!(count_occurrences(&p("move move move move move"), &p("move move").0), 2);
    assert!(candidates(&[p("move move move move")]).contains(&p("move move")));
}

fn random_flat_program(rng: &mut ChaCha8Rng, len: usize) -> Vec<Instr> {
    (0..len)
        .map(|_| match rng.random_range(0..5) {
            0 => Instr::Move,
            1 => Instr::Left,
            2 => Instr::Right,
            3 => Instr::PenUp,
            _ => Instr::PenDown,
        })
        .collect()
}

#[test]
fn planted_motif_is_adopted() {
    let motif = p("left move pen-down");
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<Program> = (0..8)
            .map(|_| {
                let len = rng.random_range(3..7);
                let mut body = random_flat_program(&mut rng, len);
                let at = rng.random_range(0..=body.len());
                body.splice(at..at, motif.0.iter().cloned());
                Program(body)
            })
            .collect();
        let r = compress(&corpus, &Library::new(), 1.5, 5);
        let inlined: Vec<Program> = r
            .library
            .functions
            .iter()
            .map(|f| f.inline(&r.library))
            .collect();
        assert!(
            inlined.iter().any(|f| f.0.windows(3).any(|w| w == motif.0.as_slice())),
            "seed {seed}: library {:?}",
            r.library.to_json()
        );
    }
}

#[test]
fn greedy_first_round_matches_exhaustive_scoring() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let corpus: Vec<Program> = (0..6)
            .map(|_| {
                let len = rng.random_range(2..9);
                // a small alphabet makes repeats common
                Program(
                    (0..len)
                        .map(|_| if rng.random_bool(0.6) { Instr::Move } else { Instr::PenDown })
                        .collect(),
                )
            })
            .collect();
        let flat: Vec<Vec<String>> = corpus.iter().map(words).collect();
        let scored = oracle::score_all(&flat, 1.5);
        let baseline = oracle::baseline(&flat);
        let r = compress(&corpus, &Library::new(), 1.5, 1);
        match scored.first() {
            Some((best, _)) if *best < baseline => {
                assert_eq!(r.library.len(), 1, "seed {seed}");
                assert!((r.report.mdl_after - best).abs() < 1e-9, "seed {seed}");
            }
            _ => assert!(r.library.is_empty(), "seed {seed}"),
        }
    }
}

#[test]
fn compression_shortens_average_program() {
    let corpus: Vec<Program> = [
        "pen-down move move left move move",
        "pen-down move move right move move",
        "pen-up move pen-down move move left move move",
        "(fork pen-down move move) right pen-down move move",
    ]
    .iter()
    .map(|t| p(t))
    .collect();
    let r = compress(&corpus, &Library::new(), 1.5, 5);
    assert!(r.adopted() >= 1);
    let mean = |ps: &[Program]| ps.iter().map(Program::size).sum::<usize>() as f64 / ps.len() as f64;
    assert!(mean(&r.rewritten) < mean(&corpus));
    for (a, b) in corpus.iter().zip(&r.rewritten) {
        same_traces(a, &Library::new(), b, &r.library, 4);
    }
}

fn arb_instr() -> impl Strategy<Value = Instr> {
    let leaf = prop_oneof![
        Just(Instr::Move),
        Just(Instr::Left),
        Just(Instr::Right),
        Just(Instr::PenUp),
        Just(Instr::PenDown),
    ];
    leaf.prop_recursive(2, 12, 4, |inner| {
        prop::collection::vec(inner, 1..4).prop_map(|b| Instr::Fork(Program(b)))
    })
}

fn arb_corpus() -> impl Strategy<Value = Vec<Program>> {
    prop::collection::vec(prop::collection::vec(arb_instr(), 0..10).prop_map(Program), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewriting_preserves_traces_and_never_grows_mdl(corpus in arb_corpus(), lambda in 0.5f64..2.5) {
        let empty = Library::new();
        let r = compress(&corpus, &empty, lambda, 4);
        prop_assert!(r.report.mdl_after <= r.report.mdl_before);
        prop_assert_eq!(r.report.mdl_after == r.report.mdl_before, r.library.is_empty());
        prop_assert!((mdl(&r.rewritten, &r.library, lambda) - r.report.mdl_after).abs() < 1e-9);
        r.library.validate().unwrap();
        for f in &r.library.functions {
            prop_assert!(f.size() >= 2);
        }
        for (a, b) in corpus.iter().zip(&r.rewritten) {
            same_traces(a, &empty, b, &r.library, 3);
        }
        // deterministic
        let again = compress(&corpus, &empty, lambda, 4);
        prop_assert_eq!(again.library.to_json(), r.library.to_json());
    }
}
