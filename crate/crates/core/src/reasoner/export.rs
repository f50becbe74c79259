//! The inference graph of an answer as a Graphviz digraph or as JSON.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, FactId};
use crate::graph::{JointGraph, NodeKind};

use super::{Answer, ScoredConcept};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationNode {
    pub id: u32,
    pub kind: NodeKind,
    pub phrase: String,
    pub fact: FactId,
    pub concepts: Vec<ConceptId>,
    pub score: f64,
    pub seed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationEdge {
    pub src: u32,
    pub label: String,
    pub dst: u32,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub question: u32,
    pub prediction: Option<ConceptId>,
    pub ranking: Vec<ScoredConcept>,
    pub nodes: Vec<ExplanationNode>,
    pub edges: Vec<ExplanationEdge>,
}

impl Explanation {
    pub fn new(question: u32, answer: &Answer, joint: &JointGraph, top: usize) -> Self {
        let nodes = answer
            .graph
            .node_ids()
            .map(|n| {
                let node = joint.node(n);
                ExplanationNode {
                    id: n.0,
                    kind: node.kind,
                    phrase: node.phrase.clone(),
                    fact: node.fact,
                    concepts: node.concept_ids.iter().copied().collect(),
                    score: answer.graph.plaus(n),
                    seed: answer.graph.seeds().contains(&n),
                }
            })
            .collect();
        let edges = answer
            .graph
            .edges()
            .iter()
            .map(|e| ExplanationEdge {
                src: e.src.0,
                label: e.label.to_string(),
                dst: e.dst.0,
                alpha: answer.attention.get(e).unwrap_or(0.0),
            })
            .collect();
        Explanation {
            question,
            prediction: answer.top(),
            ranking: answer.ranking.iter().take(top).copied().collect(),
            nodes,
            edges,
        }
    }

    pub fn to_dot(&self) -> String {
        explanation_dot(self)
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Nodes are labeled with their phrase and plausibility, seeds are drawn
/// double-circled, and edges carry their type and attention.
pub fn explanation_dot(ex: &Explanation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph explanation_q{} {{", ex.question);
    out.push_str("  rankdir=LR;\n  node [shape=ellipse];\n");
    for n in &ex.nodes {
        let label = format!("{}\n{}", n.phrase, format_args!("s={:.4}", n.score));
        let shape = if n.seed { "doublecircle" } else { "ellipse" };
        let _ = writeln!(out, "  n{} [label={}, shape={}];", n.id, quote(&label), shape);
    }
    for e in &ex.edges {
        let label = format!("{} {:.4}", e.label, e.alpha);
        let _ = writeln!(out, "  n{} -> n{} [label={}];", e.src, e.dst, quote(&label));
    }
    out.push_str("}\n");
    out
}
