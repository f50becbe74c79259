//! Seeded multi-hop datasets: every question is answered by a chain of facts
//! in which consecutive facts share one bridge concept, hidden among
//! distractor facts.
//!
//! Concepts are two-word phrases `"<topic> <noun>"`. All concepts of one
//! chain share a topic word, so chain members are close in embedding space
//! while their facts are several graph hops apart. Questions name the first
//! concept and, for chains longer than one fact, the first bridge.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{facts_to_jsonl, questions_to_jsonl, write_file, ConceptId, Fact, FactId, Frame, Question, Vocabulary};
use crate::error::{Error, Result};

const VERBS: [&str; 16] = [
    "supply", "absorb", "produce", "contain", "require", "protect", "attract", "convert", "release", "support",
    "feed", "cover", "form", "carry", "store", "reflect",
];
const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_facts: usize,
    pub n_concepts: usize,
    pub chain_length: usize,
    pub n_questions: usize,
    pub seed: u64,
    /// Share of questions held out for testing.
    pub test_fraction: f64,
    /// Probability that a distractor fact touches a chain concept.
    pub touch_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_facts: 500,
            n_concepts: 500,
            chain_length: 2,
            n_questions: 100,
            seed: 0,
            test_fraction: 0.2,
            touch_rate: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length < 1 {
            return Err(Error::Synthetic("chain_length must be at least 1".into()));
        }
        if self.n_questions < 1 {
            return Err(Error::Synthetic("n_questions must be at least 1".into()));
        }
        let chain_concepts = self.n_questions * (self.chain_length + 1);
        if self.n_concepts < chain_concepts + 2 {
            return Err(Error::Synthetic(format!(
                "{} concepts cannot hold {} disjoint chains of length {} plus distractors (need at least {})",
                self.n_concepts,
                self.n_questions,
                self.chain_length,
                chain_concepts + 2
            )));
        }
        if self.n_facts < self.n_questions * self.chain_length {
            return Err(Error::Synthetic(format!(
                "{} facts cannot hold {} chains of length {}",
                self.n_facts, self.n_questions, self.chain_length
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..=1.0).contains(&self.touch_rate) {
            return Err(Error::Synthetic("test_fraction must be in [0, 1) and touch_rate in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub vocab: Vocabulary,
    pub facts: Vec<Fact>,
    pub questions: Vec<Question>,
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

impl SynthDataset {
    pub fn split(&self) -> (Vec<Question>, Vec<Question>) {
        let pick = |ids: &[u32]| {
            ids.iter()
                .map(|&i| self.questions[i as usize].clone())
                .collect::<Vec<_>>()
        };
        (pick(&self.train), pick(&self.test))
    }

    /// Writes `vocab.txt`, `facts.jsonl`, `questions.jsonl`, `train.jsonl`
    /// and `test.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let (train, test) = self.split();
        write_file(&dir.join("vocab.txt"), &self.vocab.to_text())?;
        write_file(&dir.join("facts.jsonl"), &facts_to_jsonl(&self.facts, &self.vocab))?;
        write_file(&dir.join("questions.jsonl"), &questions_to_jsonl(&self.questions, &self.vocab))?;
        write_file(&dir.join("train.jsonl"), &questions_to_jsonl(&train, &self.vocab))?;
        write_file(&dir.join("test.jsonl"), &questions_to_jsonl(&test, &self.vocab))?;
        Ok(())
    }
}

/// The `i`-th pseudo-word of `syllables` consonant-vowel pairs.
fn word(mut i: usize, syllables: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut out = String::new();
    for _ in 0..syllables {
        let s = i % base;
        i /= base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

fn fact(id: usize, a: &str, verb: &str, b: &str, modifier: Option<&str>, concepts: &[ConceptId]) -> Fact {
    let text = match modifier {
        Some(m) => format!("{a} {verb} {b} near {m}"),
        None => format!("{a} {verb} {b}"),
    };
    Fact {
        id: FactId(id as u32),
        text,
        frames: vec![Frame {
            predicate: verb.to_string(),
            args: vec![a.to_string(), b.to_string()],
            mods: modifier.map(|m| vec![m.to_string()]).unwrap_or_default(),
        }],
        concept_ids: concepts.iter().copied().collect(),
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.chain_length;
    let n_chain = spec.n_questions * (h + 1);
    let n_distractor = spec.n_concepts - n_chain;
    let n_distractor_topics = (n_distractor / 4).max(1);

    // Nouns are shuffled so concept ids say nothing about chain position.
    let mut nouns: Vec<usize> = (0..spec.n_concepts).collect();
    nouns.shuffle(&mut rng);
    let mut surfaces = Vec::with_capacity(spec.n_concepts);
    for q in 0..spec.n_questions {
        for k in 0..=h {
            surfaces.push(format!("{} {}", word(q, 3), word(nouns[q * (h + 1) + k], 2)));
        }
    }
    for j in 0..n_distractor {
        let topic = word(spec.n_questions + j % n_distractor_topics, 3);
        surfaces.push(format!("{topic} {}", word(nouns[n_chain + j], 2)));
    }
    let vocab = Vocabulary::new(surfaces.iter().cloned())?;
    let chain = |q: usize, k: usize| ConceptId((q * (h + 1) + k) as u32);
    let distractor = |j: usize| ConceptId((n_chain + j) as u32);
    let name = |c: ConceptId| surfaces[c.0 as usize].as_str();

    let mut drafts: Vec<(String, String, String, Option<String>, Vec<ConceptId>)> = Vec::new();
    let mut questions = Vec::with_capacity(spec.n_questions);
    for q in 0..spec.n_questions {
        let verbs: Vec<&str> = (0..h).map(|_| VERBS[rng.gen_range(0..VERBS.len())]).collect();
        for k in 0..h {
            let (a, b) = (chain(q, k), chain(q, k + 1));
            drafts.push((name(a).into(), verbs[k].into(), name(b).into(), None, vec![a, b]));
        }
        let mut text = format!("what does {} {}", name(chain(q, 0)), verbs[0]);
        let mut concepts = BTreeSet::from([chain(q, 0)]);
        if h >= 2 {
            text.push_str(&format!(" {}", name(chain(q, 1))));
            concepts.insert(chain(q, 1));
            for v in &verbs[1..] {
                text.push_str(&format!(" then {v}"));
            }
        }
        questions.push(Question {
            id: q as u32,
            text,
            concept_ids: concepts,
            answer_ids: BTreeSet::from([chain(q, h)]),
        });
    }
    for _ in 0..spec.n_facts - drafts.len() {
        let a = distractor(rng.gen_range(0..n_distractor));
        let b = if rng.gen_bool(spec.touch_rate) {
            chain(rng.gen_range(0..spec.n_questions), rng.gen_range(0..=h))
        } else {
            loop {
                let b = distractor(rng.gen_range(0..n_distractor));
                if b != a {
                    break b;
                }
            }
        };
        let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let verb = VERBS[rng.gen_range(0..VERBS.len())];
        let modifier = rng
            .gen_bool(0.2)
            .then(|| distractor(rng.gen_range(0..n_distractor)))
            .filter(|m| *m != a && *m != b);
        let mut concepts = vec![a, b];
        concepts.extend(modifier);
        drafts.push((
            name(a).into(),
            verb.into(),
            name(b).into(),
            modifier.map(|m| name(m).to_string()),
            concepts,
        ));
    }
    drafts.shuffle(&mut rng);
    let facts = drafts
        .iter()
        .enumerate()
        .map(|(i, (a, v, b, m, cs))| fact(i, a, v, b, m.as_deref(), cs))
        .collect();

    let mut order: Vec<u32> = (0..spec.n_questions as u32).collect();
    order.shuffle(&mut rng);
    let n_test = (spec.n_questions as f64 * spec.test_fraction).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SynthDataset {
        vocab,
        facts,
        questions,
        train,
        test,
    })
}
