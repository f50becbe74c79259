//! Fact corpus, question sets and the concept vocabulary.
//!
//! Facts arrive with predicate-argument frames and concept annotations
//! already attached; this module only validates and indexes them. Concept
//! mentions in free text are found by [`tag_concepts`], a greedy
//! longest-match over normalized token n-grams.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactId(pub u32);

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for FactId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Lowercases and collapses runs of whitespace to a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(token.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Normalized whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// The concept vocabulary. Concept ids are dense and equal to the line
/// number of the surface in `vocab.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    lookup: HashMap<String, ConceptId>,
    max_tokens: usize,
}

impl Vocabulary {
    pub fn new<I, S>(surfaces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for surface in surfaces {
            vocab.push(surface.as_ref())?;
        }
        Ok(vocab)
    }

    fn push(&mut self, raw: &str) -> Result<ConceptId> {
        let surface = normalize(raw);
        if surface.is_empty() {
            return Err(Error::Config("empty concept surface".into()));
        }
        if self.lookup.contains_key(&surface) {
            return Err(Error::DuplicateConcept(surface));
        }
        let id = ConceptId(self.surfaces.len() as u32);
        self.max_tokens = self.max_tokens.max(surface.split(' ').count());
        self.lookup.insert(surface.clone(), id);
        self.surfaces.push(surface);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<ConceptId> {
        self.lookup.get(&normalize(surface)).copied()
    }

    pub fn surface(&self, id: ConceptId) -> &str {
        &self.surfaces[id.0 as usize]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn ids(&self) -> impl Iterator<Item = ConceptId> {
        (0..self.surfaces.len() as u32).map(ConceptId)
    }

    /// Longest surface, in tokens.
    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vocab = Vocabulary::default();
        for (i, line) in text.lines().enumerate() {
            if normalize(line).is_empty() {
                return Err(Error::MalformedLine {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: "empty concept surface".into(),
                });
            }
            vocab.push(line)?;
        }
        Ok(vocab)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.surfaces {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    fn resolve(&self, surface: &str, owner: impl FnOnce() -> String) -> Result<ConceptId> {
        self.get(surface).ok_or_else(|| Error::UnknownConcept {
            owner: owner(),
            surface: surface.to_string(),
        })
    }
}

/// Ids of every vocabulary surface mentioned in `text`.
///
/// Scans left to right; at each position the longest matching n-gram wins
/// and the scan resumes after it, so matches never overlap.
pub fn tag_concepts(text: &str, vocab: &Vocabulary) -> BTreeSet<ConceptId> {
    let tokens = tokenize(text);
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let longest = vocab.max_tokens().min(tokens.len() - i);
        let mut matched = 0;
        for n in (1..=longest).rev() {
            if let Some(id) = vocab.lookup.get(&tokens[i..i + n].join(" ")) {
                found.insert(*id);
                matched = n;
                break;
            }
        }
        i += matched.max(1);
    }
    found
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub predicate: String,
    pub args: Vec<String>,
    #[serde(default)]
    pub mods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub id: FactId,
    pub text: String,
    pub frames: Vec<Frame>,
    pub concept_ids: BTreeSet<ConceptId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: u32,
    pub text: String,
    pub concept_ids: BTreeSet<ConceptId>,
    pub answer_ids: BTreeSet<ConceptId>,
}

#[derive(Serialize, Deserialize)]
struct FactRecord {
    id: u32,
    text: String,
    frames: Vec<Frame>,
    concepts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct QuestionRecord {
    id: u32,
    text: String,
    #[serde(default)]
    concepts: Vec<String>,
    #[serde(default)]
    answers: Vec<String>,
}

fn validate_frames(fact: &Fact) -> Result<()> {
    if fact.frames.is_empty() {
        return Err(Error::InvalidFact {
            fact: fact.id.0,
            message: "no frames".into(),
        });
    }
    for (i, frame) in fact.frames.iter().enumerate() {
        if normalize(&frame.predicate).is_empty() {
            return Err(Error::InvalidFact {
                fact: fact.id.0,
                message: format!("frame {i} has an empty predicate"),
            });
        }
        if frame.args.is_empty() {
            return Err(Error::InvalidFact {
                fact: fact.id.0,
                message: format!("frame {i} has no arguments"),
            });
        }
    }
    Ok(())
}

/// Immutable, validated corpus with O(1) fact lookup and a concept → facts
/// inverted index.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    vocab: Vocabulary,
    facts: Vec<Fact>,
    position: HashMap<FactId, usize>,
    inverted: Vec<Vec<FactId>>,
}

impl CorpusIndex {
    /// Facts are stored in ascending id order regardless of input order.
    pub fn new(vocab: Vocabulary, mut facts: Vec<Fact>) -> Result<Self> {
        facts.sort_by_key(|f| f.id);
        let mut position = HashMap::with_capacity(facts.len());
        let mut inverted = vec![Vec::new(); vocab.len()];
        for (pos, fact) in facts.iter().enumerate() {
            validate_frames(fact)?;
            if position.insert(fact.id, pos).is_some() {
                return Err(Error::DuplicateId {
                    kind: "fact",
                    id: fact.id.0,
                });
            }
            for c in &fact.concept_ids {
                let slot = inverted.get_mut(c.0 as usize).ok_or_else(|| Error::UnknownConcept {
                    owner: format!("fact {}", fact.id),
                    surface: format!("#{}", c.0),
                })?;
                slot.push(fact.id);
            }
        }
        Ok(CorpusIndex {
            vocab,
            facts,
            position,
            inverted,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn fact(&self, id: FactId) -> Option<&Fact> {
        self.position.get(&id).map(|&p| &self.facts[p])
    }

    /// Row of the fact in [`CorpusIndex::facts`].
    pub fn position(&self, id: FactId) -> Option<usize> {
        self.position.get(&id).copied()
    }

    pub fn facts_with(&self, concept: ConceptId) -> &[FactId] {
        self.inverted
            .get(concept.0 as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Parses `facts.jsonl` content against an already loaded vocabulary.
    pub fn parse_facts(text: &str, vocab: &Vocabulary, file: &str) -> Result<Vec<Fact>> {
        let mut facts = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: FactRecord =
                serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                    file: file.to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let mut concept_ids = BTreeSet::new();
            for surface in &record.concepts {
                concept_ids.insert(vocab.resolve(surface, || format!("fact {}", record.id))?);
            }
            facts.push(Fact {
                id: FactId(record.id),
                text: record.text,
                frames: record.frames,
                concept_ids,
            });
        }
        Ok(facts)
    }

    pub fn facts_to_jsonl(&self) -> String {
        facts_to_jsonl(&self.facts, &self.vocab)
    }
}

pub fn facts_to_jsonl(facts: &[Fact], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for fact in facts {
        let record = FactRecord {
            id: fact.id.0,
            text: fact.text.clone(),
            frames: fact.frames.clone(),
            concepts: fact
                .concept_ids
                .iter()
                .map(|c| vocab.surface(*c).to_string())
                .collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("fact record serializes"));
        out.push('\n');
    }
    out
}

pub fn load_corpus(facts_path: &Path, vocab_path: &Path) -> Result<CorpusIndex> {
    let vocab = Vocabulary::load(vocab_path)?;
    let text = fs::read_to_string(facts_path).map_err(|e| Error::io(facts_path, e))?;
    let facts = CorpusIndex::parse_facts(&text, &vocab, &facts_path.display().to_string())?;
    CorpusIndex::new(vocab, facts)
}

/// Parses `questions.jsonl`. Questions without annotated concepts fall back
/// to [`tag_concepts`] over their text.
pub fn parse_questions(text: &str, vocab: &Vocabulary, file: &str) -> Result<Vec<Question>> {
    let mut questions = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord =
            serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                file: file.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(record.id) {
            return Err(Error::DuplicateId {
                kind: "question",
                id: record.id,
            });
        }
        let owner = || format!("question {}", record.id);
        let mut concept_ids = BTreeSet::new();
        for s in &record.concepts {
            concept_ids.insert(vocab.resolve(s, owner)?);
        }
        if concept_ids.is_empty() {
            concept_ids = tag_concepts(&record.text, vocab);
        }
        let mut answer_ids = BTreeSet::new();
        for s in &record.answers {
            answer_ids.insert(vocab.resolve(s, owner)?);
        }
        questions.push(Question {
            id: record.id,
            text: record.text,
            concept_ids,
            answer_ids,
        });
    }
    Ok(questions)
}

pub fn load_questions(path: &Path, vocab: &Vocabulary) -> Result<Vec<Question>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_questions(&text, vocab, &path.display().to_string())
}

pub fn questions_to_jsonl(questions: &[Question], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for q in questions {
        let record = QuestionRecord {
            id: q.id,
            text: q.text.clone(),
            concepts: q.concept_ids.iter().map(|c| vocab.surface(*c).to_string()).collect(),
            answers: q.answer_ids.iter().map(|c| vocab.surface(*c).to_string()).collect(),
        };
        out.push_str(&serde_json::to_string(&record).expect("question record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}
