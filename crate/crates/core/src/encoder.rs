//! Mean-pooled token-embedding encoder and brute-force inner-product search.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{tokenize, CorpusIndex, FactId, Question};
use crate::tensor::{desc, dot, Matrix};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ROW: usize = 0;
pub const DEFAULT_DIM: usize = 32;
pub const INIT_BOUND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    token_vocab: BTreeMap<String, usize>,
    tokens: Vec<String>,
    table: Matrix,
}

impl EncoderModel {
    /// Builds a model over the given tokens (deduplicated and sorted) with
    /// rows drawn uniformly from `[-0.1, 0.1]`. Row 0 is the UNK row.
    pub fn new<I, S>(tokens: I, dim: usize, seed: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let unique: BTreeSet<String> = tokens
            .into_iter()
            .flat_map(|t| tokenize(t.as_ref()))
            .filter(|t| t != UNK_TOKEN)
            .collect();
        let mut list = Vec::with_capacity(unique.len() + 1);
        list.push(UNK_TOKEN.to_string());
        list.extend(unique);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = Matrix::uniform(list.len(), dim, INIT_BOUND, &mut rng);
        Self::from_parts(list, table)
    }

    /// Model covering every token of the corpus (fact text, frame phrases,
    /// concept surfaces) and the given questions.
    pub fn for_corpus(corpus: &CorpusIndex, questions: &[Question], dim: usize, seed: u64) -> Self {
        let mut texts: Vec<&str> = Vec::new();
        texts.extend(corpus.vocab().surfaces().iter().map(String::as_str));
        for fact in corpus.facts() {
            texts.push(&fact.text);
            for frame in &fact.frames {
                texts.push(&frame.predicate);
                texts.extend(frame.args.iter().map(String::as_str));
                texts.extend(frame.mods.iter().map(String::as_str));
            }
        }
        texts.extend(questions.iter().map(|q| q.text.as_str()));
        Self::new(texts, dim, seed)
    }

    /// `tokens[0]` must be the UNK token.
    pub fn from_parts(tokens: Vec<String>, table: Matrix) -> Self {
        assert_eq!(tokens.len(), table.rows(), "one embedding row per token");
        assert_eq!(tokens.first().map(String::as_str), Some(UNK_TOKEN));
        let token_vocab = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        EncoderModel {
            token_vocab,
            tokens,
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Matrix {
        &mut self.table
    }

    pub fn token_row(&self, token: &str) -> usize {
        self.token_vocab.get(token).copied().unwrap_or(UNK_ROW)
    }

    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.token_row(t)).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.encode_ids(&self.token_ids(text))
    }

    /// Mean of the given rows; the zero vector for an empty list.
    pub fn encode_ids(&self, ids: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, x) in out.iter_mut().zip(self.table.row(id)) {
                *o += x;
            }
        }
        let n = ids.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Encoded facts, one row per fact in corpus order.
#[derive(Debug, Clone)]
pub struct FactIndex {
    fact_ids: Vec<FactId>,
    vectors: Matrix,
}

impl FactIndex {
    pub fn build(corpus: &CorpusIndex, encoder: &EncoderModel) -> Self {
        let mut vectors = Matrix::zeros(corpus.len(), encoder.dim());
        for (i, fact) in corpus.facts().iter().enumerate() {
            vectors.row_mut(i).copy_from_slice(&encoder.encode(&fact.text));
        }
        FactIndex {
            fact_ids: corpus.facts().iter().map(|f| f.id).collect(),
            vectors,
        }
    }

    pub fn from_parts(fact_ids: Vec<FactId>, vectors: Matrix) -> Self {
        assert_eq!(fact_ids.len(), vectors.rows());
        FactIndex { fact_ids, vectors }
    }

    pub fn len(&self) -> usize {
        self.fact_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fact_ids.is_empty()
    }

    pub fn fact_ids(&self) -> &[FactId] {
        &self.fact_ids
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        self.vectors.row(row)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }
}

/// Exhaustive maximum inner product search: the `top_n` facts by
/// `⟨query, fact⟩`, descending, ties broken by ascending fact id.
pub fn mips_search(query: &[f64], index: &FactIndex, top_n: usize) -> Vec<(FactId, f64)> {
    let mut scored: Vec<(FactId, f64)> = index
        .fact_ids
        .iter()
        .enumerate()
        .map(|(row, &id)| (id, dot(query, index.vectors.row(row))))
        .collect();
    let by_rank = |a: &(FactId, f64), b: &(FactId, f64)| desc(a.1, b.1).then(a.0.cmp(&b.0));
    let top_n = top_n.min(scored.len());
    if top_n == 0 {
        return Vec::new();
    }
    if top_n < scored.len() {
        scored.select_nth_unstable_by(top_n - 1, by_rank);
        scored.truncate(top_n);
    }
    scored.sort_by(by_rank);
    scored
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Non-negative retrieval relevance: softplus of the inner product.
pub fn smips(query: &[f64], fact_vec: &[f64]) -> f64 {
    softplus(dot(query, fact_vec))
}
