#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use graphqa::corpus::{tag_concepts, CorpusIndex, Fact, FactId, Frame, Question, Vocabulary};

/// A random corpus over single-word concepts `c0..c{n}`, with predicates
/// `p0..p5` and occasional non-concept phrases.
pub fn random_corpus<R: Rng>(rng: &mut R, n_concepts: usize, n_facts: usize) -> CorpusIndex {
    let surfaces: Vec<String> = (0..n_concepts).map(|i| format!("c{i}")).collect();
    let vocab = Vocabulary::new(surfaces.iter()).unwrap();
    let phrase = |rng: &mut R| {
        if rng.gen_bool(0.85) {
            surfaces.choose(rng).unwrap().clone()
        } else {
            format!("x{}", rng.gen_range(0..4))
        }
    };
    let facts = (0..n_facts)
        .map(|i| {
            let frames: Vec<Frame> = (0..rng.gen_range(1..=2))
                .map(|_| Frame {
                    predicate: format!("p{}", rng.gen_range(0..6)),
                    args: (0..rng.gen_range(1..=3)).map(|_| phrase(rng)).collect(),
                    mods: if rng.gen_bool(0.25) { vec![phrase(rng)] } else { Vec::new() },
                })
                .collect();
            let text = frames
                .iter()
                .map(|f| {
                    let mut parts = vec![f.args[0].clone(), f.predicate.clone()];
                    parts.extend(f.args[1..].iter().cloned());
                    parts.extend(f.mods.iter().cloned());
                    parts.join(" ")
                })
                .collect::<Vec<_>>()
                .join(" and ");
            Fact {
                id: FactId(i as u32),
                concept_ids: tag_concepts(&text, &vocab),
                text,
                frames,
            }
        })
        .collect();
    CorpusIndex::new(vocab, facts).unwrap()
}

pub fn random_question<R: Rng>(rng: &mut R, corpus: &CorpusIndex, id: u32) -> Question {
    let n = corpus.vocab().len() as u32;
    let pick = |rng: &mut R, k: usize| -> BTreeSet<_> {
        (0..k)
            .map(|_| graphqa::corpus::ConceptId(rng.gen_range(0..n)))
            .collect()
    };
    let k = rng.gen_range(1..=2);
    let concept_ids = pick(rng, k);
    let k = rng.gen_range(1..=2);
    let answer_ids = pick(rng, k);
    let mut words: Vec<String> = concept_ids
        .iter()
        .map(|c| corpus.vocab().surface(*c).to_string())
        .collect();
    words.push(format!("p{}", rng.gen_range(0..6)));
    words.push("what".into());
    Question {
        id,
        text: words.join(" "),
        concept_ids,
        answer_ids,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
pub mod oracle;
pub mod checks;

pub fn graphqa(args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_graphqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs the binary and returns an error carrying stderr on failure.
pub fn graphqa_ok(args: &[&str]) -> Result<std::process::Output, String> {
    let out = graphqa(args);
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("graphqa {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}
