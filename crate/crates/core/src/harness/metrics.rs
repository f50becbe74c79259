//! Hits@K and Recall@K over ranked concept lists.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::ConceptId;

pub const DEFAULT_KS: [usize; 5] = [1, 5, 10, 50, 100];

/// 1.0 if any true concept is among the first `k`, else 0.0.
pub fn hits_at_k(ranked: &[ConceptId], truth: &BTreeSet<ConceptId>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if ranked.iter().take(k).any(|c| truth.contains(c)) {
        1.0
    } else {
        0.0
    }
}

/// Share of the true concepts found among the first `k`; 0.0 for an empty
/// truth set.
pub fn recall_at_k(ranked: &[ConceptId], truth: &BTreeSet<ConceptId>, k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    if truth.is_empty() {
        return 0.0;
    }
    let found = ranked
        .iter()
        .take(k)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|c| truth.contains(c))
        .count();
    found as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub question: u32,
    pub top: Option<ConceptId>,
    /// 1-based rank of the first true concept.
    pub first_hit: Option<usize>,
    pub hits: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hits: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub n_questions: usize,
    #[serde(skip)]
    pub rows: Vec<QuestionRow>,
    #[serde(skip)]
    pub ks: Vec<usize>,
}

impl EvalReport {
    /// Macro-averages both metrics over `(question id, ranking, truth)`.
    pub fn new(items: &[(u32, Vec<ConceptId>, BTreeSet<ConceptId>)], ks: &[usize]) -> Self {
        let mut ks = ks.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let rows: Vec<QuestionRow> = items
            .iter()
            .map(|(id, ranked, truth)| QuestionRow {
                question: *id,
                top: ranked.first().copied(),
                first_hit: ranked.iter().position(|c| truth.contains(c)).map(|p| p + 1),
                hits: ks.iter().map(|&k| hits_at_k(ranked, truth, k)).collect(),
                recall: ks.iter().map(|&k| recall_at_k(ranked, truth, k)).collect(),
            })
            .collect();
        let n = rows.len();
        let mean = |f: &dyn Fn(&QuestionRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let hits = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, mean(&|r| r.hits[i])))
            .collect();
        let recall = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, mean(&|r| r.recall[i])))
            .collect();
        EvalReport {
            hits,
            recall,
            n_questions: n,
            rows,
            ks,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("question,top,first_hit");
        for k in &self.ks {
            out.push_str(&format!(",hits@{k}"));
        }
        for k in &self.ks {
            out.push_str(&format!(",recall@{k}"));
        }
        out.push('\n');
        for r in &self.rows {
            let top = r.top.map(|c| c.to_string()).unwrap_or_default();
            let first = r.first_hit.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}", r.question, top, first));
            for h in &r.hits {
                out.push_str(&format!(",{h}"));
            }
            for x in &r.recall {
                out.push_str(&format!(",{x:.6}"));
            }
            out.push('\n');
        }
        out
    }
}
