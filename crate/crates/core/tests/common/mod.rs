#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PARK: &str = include_str!("../fixtures/park.ann");
pub const SHAPES: &str = include_str!("../fixtures/shapes.ann");
pub const PIPELINE: &str = include_str!("../fixtures/pipeline.ann");

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

const NOUNS: &[&str] = &["dogs", "cars", "rain", "engine", "bells", "birds", "waves", "crowd", "train"];
const GERUNDS: &[&str] = &["barking", "honking", "falling", "running", "ringing", "singing", "crashing"];
const ADJS: &[&str] = &["distant", "classical", "loud", "soft", "beautiful"];
const SCENES: &[&str] = &["park", "beach", "office", "street", "farm", "cafe", "church"];

type Row = (String, &'static str, String, &'static str);

fn tok(w: &str, pos: &'static str, head: usize, label: &'static str) -> Row {
    (w.to_string(), pos, head.to_string(), label)
}

/// One random "... sound(s) of Y ... <scene> ." sentence as an `.ann`
/// block. Y is drawn from a mix of valid and invalid tag shapes.
pub fn random_sentence(rng: &mut impl Rng) -> String {
    let pick = |rng: &mut dyn rand::RngCore, xs: &[&'static str]| *xs.choose(rng).unwrap();
    // 1 We 2 heard(root) 3 the 4 sound 5 of [Y...] in the <scene> .
    let mut rows: Vec<Row> = vec![
        tok("We", "PRP", 2, "nsubj"),
        tok("heard", "VBD", 0, "root"),
        tok("the", "DT", 4, "det"),
        tok(if rng.gen_bool(0.2) { "sounds" } else { "sound" }, "NN", 2, "dobj"),
        ("of".into(), "IN", "_".into(), "_"),
    ];
    let shape = rng.gen_range(0..8);
    let y: Vec<(&str, &'static str)> = match shape {
        0 => vec![(pick(rng, GERUNDS), "VBG"), (pick(rng, NOUNS), "NNS")],
        1 => vec![(pick(rng, GERUNDS), "VBG")],
        2 => vec![(pick(rng, NOUNS), "NNS"), (pick(rng, GERUNDS), "VBG")],
        3 => vec![(pick(rng, NOUNS), "NN")],
        4 => vec![(pick(rng, NOUNS), "NN"), (pick(rng, NOUNS), "NNS")],
        5 => vec![(pick(rng, ADJS), "JJ"), (pick(rng, NOUNS), "NN")],
        6 => vec![("a", "DT"), (pick(rng, NOUNS), "NN")],
        _ => vec![(pick(rng, ADJS), "JJ")],
    };
    let first = rows.len() + 1;
    let last = first + y.len() - 1;
    for (k, (w, pos)) in y.iter().enumerate() {
        let i = first + k;
        let (head, label) = if i == last { (4, "prep_of") } else { (last, "dep") };
        rows.push(tok(w, pos, head, label));
    }
    let n = rows.len();
    rows.push(("in".into(), "IN", "_".into(), "_"));
    rows.push(tok("the", "DT", n + 3, "det"));
    rows.push(tok(pick(rng, SCENES), "NN", 2, "prep_in"));
    rows.push(tok(".", ".", 2, "punct"));
    rows.iter()
        .enumerate()
        .map(|(i, (w, p, h, l))| format!("{}\t{w}\t{p}\t{h}\t{l}\n", i + 1))
        .collect()
}

/// `n` seeded sentences; every `corrupt_every`-th block is malformed.
pub fn random_corpus(n: usize, seed: u64, corrupt_every: Option<usize>) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        if corrupt_every.is_some_and(|k| i % k == k - 1) {
            out.push_str("1\tbroken\tNN\t7\troot\n\n");
        } else {
            out.push_str(&random_sentence(&mut rng));
            out.push('\n');
        }
    }
    out
}
