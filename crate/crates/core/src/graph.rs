//! Predicate-argument graphs for single facts and the corpus-wide joint
//! graph that links mentions of the same concept across facts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize, tag_concepts, ConceptId, CorpusIndex, Fact, FactId, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Constant,
    Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OiaNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub phrase: String,
    pub concept_ids: BTreeSet<ConceptId>,
    pub fact: FactId,
}

/// Argument positions above this share one edge-type embedding.
pub const MAX_ARG_SLOT: u16 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    /// Predicate → its n-th argument (1-based).
    PredArg(u16),
    /// Argument → predicate, the reverse of `PredArg(n)`.
    AsPredArg(u16),
    /// Predicate → modifier.
    Mod,
    /// Between mentions of a common concept in different facts.
    SharedConcept,
    /// Skip connection added for one question by semantic following.
    SemanticFollow,
}

impl EdgeLabel {
    /// Number of distinct edge-type embeddings.
    pub const SLOTS: usize = 2 * MAX_ARG_SLOT as usize + 3;

    pub fn slot(self) -> usize {
        let arg = |n: u16| (n.clamp(1, MAX_ARG_SLOT) - 1) as usize;
        match self {
            EdgeLabel::PredArg(n) => arg(n),
            EdgeLabel::AsPredArg(n) => MAX_ARG_SLOT as usize + arg(n),
            EdgeLabel::Mod => 2 * MAX_ARG_SLOT as usize,
            EdgeLabel::SharedConcept => 2 * MAX_ARG_SLOT as usize + 1,
            EdgeLabel::SemanticFollow => 2 * MAX_ARG_SLOT as usize + 2,
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::PredArg(n) => write!(f, "pred.arg.{n}"),
            EdgeLabel::AsPredArg(n) => write!(f, "as:pred.arg.{n}"),
            EdgeLabel::Mod => f.write_str("mod"),
            EdgeLabel::SharedConcept => f.write_str("shared"),
            EdgeLabel::SemanticFollow => f.write_str("follow"),
        }
    }
}

impl FromStr for EdgeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown edge label {s:?}"));
        let index = |rest: &str| rest.parse::<u16>().ok().filter(|n| *n >= 1).ok_or_else(bad);
        match s {
            "mod" => Ok(EdgeLabel::Mod),
            "shared" => Ok(EdgeLabel::SharedConcept),
            "follow" => Ok(EdgeLabel::SemanticFollow),
            _ => {
                if let Some(rest) = s.strip_prefix("as:pred.arg.") {
                    Ok(EdgeLabel::AsPredArg(index(rest)?))
                } else if let Some(rest) = s.strip_prefix("pred.arg.") {
                    Ok(EdgeLabel::PredArg(index(rest)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub label: EdgeLabel,
    pub dst: NodeId,
}

impl Edge {
    pub fn new(src: NodeId, label: EdgeLabel, dst: NodeId) -> Self {
        Edge { src, label, dst }
    }
}

/// The graph of a single fact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OiaGraph {
    pub fact: FactId,
    pub nodes: Vec<OiaNode>,
    pub edges: Vec<Edge>,
}

/// Converts one fact's frames to a graph with node ids starting at `first_id`.
///
/// Each frame yields a predicate node; argument and modifier phrases become
/// constant nodes shared by every frame of the fact that mentions them.
pub fn build_oia_graph(fact: &Fact, vocab: &Vocabulary, first_id: NodeId) -> Result<OiaGraph> {
    if fact.frames.is_empty() {
        return Err(Error::InvalidFact {
            fact: fact.id.0,
            message: "no frames".into(),
        });
    }
    let mut nodes: Vec<OiaNode> = Vec::new();
    let mut constants: HashMap<String, NodeId> = HashMap::new();
    let mut edges = BTreeSet::new();

    let add_node = |nodes: &mut Vec<OiaNode>, kind: NodeKind, phrase: String| {
        let id = NodeId(first_id.0 + nodes.len() as u32);
        let concept_ids = tag_concepts(&phrase, vocab)
            .intersection(&fact.concept_ids)
            .copied()
            .collect();
        nodes.push(OiaNode {
            id,
            kind,
            phrase,
            concept_ids,
            fact: fact.id,
        });
        id
    };

    for (i, frame) in fact.frames.iter().enumerate() {
        if frame.args.is_empty() {
            return Err(Error::InvalidFact {
                fact: fact.id.0,
                message: format!("frame {i} has no arguments"),
            });
        }
        let pred = add_node(&mut nodes, NodeKind::Predicate, normalize(&frame.predicate));
        let mut constant = |nodes: &mut Vec<OiaNode>, phrase: &str| {
            let phrase = normalize(phrase);
            match constants.get(&phrase) {
                Some(&id) => id,
                None => {
                    let id = add_node(nodes, NodeKind::Constant, phrase.clone());
                    constants.insert(phrase, id);
                    id
                }
            }
        };
        for (n, arg) in frame.args.iter().enumerate() {
            let arg_node = constant(&mut nodes, arg);
            let n = (n + 1) as u16;
            edges.insert(Edge::new(pred, EdgeLabel::PredArg(n), arg_node));
            edges.insert(Edge::new(arg_node, EdgeLabel::AsPredArg(n), pred));
        }
        for m in &frame.mods {
            let mod_node = constant(&mut nodes, m);
            edges.insert(Edge::new(pred, EdgeLabel::Mod, mod_node));
        }
    }
    Ok(OiaGraph {
        fact: fact.id,
        nodes,
        edges: edges.into_iter().collect(),
    })
}

/// The corpus-wide graph. Node ids are dense and ordered by
/// (fact id, position within the fact's graph).
#[derive(Debug, Clone, PartialEq)]
pub struct JointGraph {
    nodes: Vec<OiaNode>,
    edges: Vec<Edge>,
    incident: Vec<Vec<usize>>,
    concept_to_nodes: BTreeMap<ConceptId, Vec<NodeId>>,
}

/// Merges per-fact graphs and links every cross-fact pair of nodes whose
/// concept sets intersect with a pair of `SharedConcept` edges.
///
/// Inputs are put in canonical order first, so the result does not depend on
/// the order of `graphs`.
pub fn merge_joint(mut graphs: Vec<OiaGraph>) -> JointGraph {
    graphs.sort_by_key(|g| g.fact);
    let mut nodes = Vec::new();
    let mut edges = BTreeSet::new();
    for g in &graphs {
        let remap: HashMap<NodeId, NodeId> = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id, NodeId((nodes.len() + i) as u32)))
            .collect();
        for n in &g.nodes {
            nodes.push(OiaNode {
                id: remap[&n.id],
                ..n.clone()
            });
        }
        for e in &g.edges {
            edges.insert(Edge::new(remap[&e.src], e.label, remap[&e.dst]));
        }
    }

    let mut concept_to_nodes: BTreeMap<ConceptId, Vec<NodeId>> = BTreeMap::new();
    for n in &nodes {
        for c in &n.concept_ids {
            concept_to_nodes.entry(*c).or_default().push(n.id);
        }
    }
    for members in concept_to_nodes.values() {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if nodes[a.index()].fact != nodes[b.index()].fact {
                    edges.insert(Edge::new(a, EdgeLabel::SharedConcept, b));
                    edges.insert(Edge::new(b, EdgeLabel::SharedConcept, a));
                }
            }
        }
    }

    let edges: Vec<Edge> = edges.into_iter().collect();
    let mut incident = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        incident[e.src.index()].push(i);
        incident[e.dst.index()].push(i);
    }
    JointGraph {
        nodes,
        edges,
        incident,
        concept_to_nodes,
    }
}

impl JointGraph {
    pub fn build(corpus: &CorpusIndex) -> Result<Self> {
        let graphs = corpus
            .facts()
            .par_iter()
            .map(|f| build_oia_graph(f, corpus.vocab(), NodeId(0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(merge_joint(graphs))
    }

    pub fn nodes(&self) -> &[OiaNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &OiaNode {
        &self.nodes[id.index()]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All edges, sorted by (src, label, dst).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges with `node` as source or destination.
    pub fn incident(&self, node: NodeId) -> impl Iterator<Item = &Edge> {
        self.incident[node.index()].iter().map(|&i| &self.edges[i])
    }

    pub fn nodes_with(&self, concept: ConceptId) -> &[NodeId] {
        self.concept_to_nodes
            .get(&concept)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn concept_to_nodes(&self) -> &BTreeMap<ConceptId, Vec<NodeId>> {
        &self.concept_to_nodes
    }

    pub fn to_export(&self) -> GraphExport {
        GraphExport::new(self.nodes.iter(), self.edges.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u32,
    pub kind: NodeKind,
    pub phrase: String,
    pub concepts: Vec<u32>,
    pub fact: u32,
}

/// JSON form of a graph: `{"nodes": [...], "edges": [[src, label, dst], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<(u32, String, u32)>,
}

impl GraphExport {
    pub fn new<'a>(
        nodes: impl IntoIterator<Item = &'a OiaNode>,
        edges: impl IntoIterator<Item = &'a Edge>,
    ) -> Self {
        GraphExport {
            nodes: nodes
                .into_iter()
                .map(|n| NodeRecord {
                    id: n.id.0,
                    kind: n.kind,
                    phrase: n.phrase.clone(),
                    concepts: n.concept_ids.iter().map(|c| c.0).collect(),
                    fact: n.fact.0,
                })
                .collect(),
            edges: edges
                .into_iter()
                .map(|e| (e.src.0, e.label.to_string(), e.dst.0))
                .collect(),
        }
    }
}
