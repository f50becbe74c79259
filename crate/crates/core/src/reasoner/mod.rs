//! Question-dependent subgraph reasoning.
//!
//! An inference graph is seeded with the joint-graph nodes that mention the
//! question's concepts and then grown for `steps` rounds. Each round expands
//! the frontier by one hop, adds skip connections to the most similar nodes
//! elsewhere in the joint graph, scores every edge with question-conditioned
//! bilinear attention, passes messages and spreads plausibility along the
//! attended edges, and finally keeps only the edges with the largest
//! contribution. Concepts are ranked by the best plausibility among the
//! nodes that mention them, and the surviving graph is the explanation.

mod export;
pub(crate) mod layer;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, FactId, Question};
use crate::encoder::{mips_search, softplus, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeLabel, JointGraph, NodeId};
use crate::knowledge::Knowledge;
use crate::tensor::{desc, dot, Matrix};

pub use export::{explanation_dot, Explanation};
pub use trace::{Gradients, Trace, TraceForward};

use layer::LocalEdges;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Inference steps.
    pub steps: usize,
    /// Skip connections added per frontier node.
    pub k_follow: usize,
    /// Edges kept after each step; `None` disables pruning.
    pub k_prune: Option<usize>,
    /// Facts retrieved by inner-product search.
    pub top_n_retrieval: usize,
    /// Width of the attention projections; defaults to the embedding width.
    pub hidden: Option<usize>,
    /// Add skip connections at every step rather than only the first.
    pub follow_every_step: bool,
    /// Seed with the retrieved facts' nodes even when entity linking succeeds.
    pub seed_with_retrieval: bool,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        ReasonerConfig {
            steps: 2,
            k_follow: 5,
            k_prune: Some(100),
            top_n_retrieval: 20,
            hidden: None,
            follow_every_step: true,
            seed_with_retrieval: false,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.k_prune == Some(0) {
            return Err(Error::Config("k_prune must be at least 1".into()));
        }
        if self.top_n_retrieval < 1 {
            return Err(Error::Config("top_n_retrieval must be at least 1".into()));
        }
        if self.hidden == Some(0) {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Attention parameters of one step; both matrices are `m × 3d` and act on
/// `[node state ‖ edge-type embedding ‖ question]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_src: Matrix,
    pub w_dst: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasonerModel {
    config: ReasonerConfig,
    dim: usize,
    layers: Vec<LayerParams>,
    edge_types: Matrix,
}

impl ReasonerModel {
    pub fn new(config: ReasonerConfig, dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let m = config.hidden.unwrap_or(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (m + 3 * dim) as f64).sqrt();
        let layers = (0..config.steps)
            .map(|_| LayerParams {
                w_src: Matrix::uniform(m, 3 * dim, bound, &mut rng),
                w_dst: Matrix::uniform(m, 3 * dim, bound, &mut rng),
            })
            .collect();
        let edge_types = Matrix::uniform(EdgeLabel::SLOTS, dim, 0.1, &mut rng);
        Ok(ReasonerModel {
            config,
            dim,
            layers,
            edge_types,
        })
    }

    pub fn from_parts(config: ReasonerConfig, layers: Vec<LayerParams>, edge_types: Matrix) -> Result<Self> {
        config.validate()?;
        let dim = edge_types.cols();
        let m = config.hidden.unwrap_or(dim);
        if layers.len() != config.steps || edge_types.rows() != EdgeLabel::SLOTS {
            return Err(Error::Config("parameter shapes do not match the configuration".into()));
        }
        for l in &layers {
            if l.w_src.shape() != [m, 3 * dim] || l.w_dst.shape() != [m, 3 * dim] {
                return Err(Error::Config("attention matrices must be m × 3d".into()));
            }
        }
        let model = ReasonerModel {
            config,
            dim,
            layers,
            edge_types,
        };
        if !model.is_finite() {
            return Err(Error::Config("non-finite reasoner parameters".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ReasonerConfig {
        &self.config
    }

    /// Changes hyperparameters that do not affect parameter shapes.
    pub fn config_mut(&mut self) -> &mut ReasonerConfig {
        &mut self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn params_mut(&mut self) -> (&mut [LayerParams], &mut Matrix) {
        (&mut self.layers, &mut self.edge_types)
    }

    pub fn edge_types(&self) -> &Matrix {
        &self.edge_types
    }

    pub fn edge_types_mut(&mut self) -> &mut Matrix {
        &mut self.edge_types
    }

    pub fn is_finite(&self) -> bool {
        self.edge_types.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.w_src.is_finite() && l.w_dst.is_finite())
    }
}

/// The question-dependent subgraph and its per-node state.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceGraph {
    /// Node → step at which it joined.
    nodes: BTreeMap<NodeId, usize>,
    edges: BTreeSet<Edge>,
    hidden: BTreeMap<NodeId, Vec<f64>>,
    plaus: BTreeMap<NodeId, f64>,
    seeds: BTreeSet<NodeId>,
    step: usize,
}

impl InferenceGraph {
    pub fn new(seeds: BTreeSet<NodeId>) -> Self {
        InferenceGraph {
            nodes: seeds.iter().map(|&s| (s, 0)).collect(),
            edges: BTreeSet::new(),
            hidden: BTreeMap::new(),
            plaus: BTreeMap::new(),
            seeds,
            step: 0,
        }
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<Edge> {
        &self.edges
    }

    pub fn seeds(&self) -> &BTreeSet<NodeId> {
        &self.seeds
    }

    /// Number of expansions performed so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn hidden(&self, node: NodeId) -> Option<&[f64]> {
        self.hidden.get(&node).map(Vec::as_slice)
    }

    pub fn set_hidden(&mut self, node: NodeId, h: Vec<f64>) {
        self.hidden.insert(node, h);
    }

    /// Current plausibility; zero for nodes that have none yet.
    pub fn plaus(&self, node: NodeId) -> f64 {
        self.plaus.get(&node).copied().unwrap_or(0.0)
    }

    pub fn plaus_map(&self) -> &BTreeMap<NodeId, f64> {
        &self.plaus
    }

    pub fn set_plaus(&mut self, node: NodeId, s: f64) {
        self.plaus.insert(node, s);
    }

    pub fn add_edge(&mut self, edge: Edge) {
        for n in [edge.src, edge.dst] {
            self.nodes.entry(n).or_insert(self.step);
        }
        self.edges.insert(edge);
    }

    fn frontier_at(&self, level: usize) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, &at)| at == level)
            .map(|(&n, _)| n)
            .collect()
    }

    /// Gives nodes without state their base encoding and zero plausibility.
    pub fn init_missing(&mut self, node_vecs: &Matrix) {
        for &n in self.nodes.keys() {
            self.hidden
                .entry(n)
                .or_insert_with(|| node_vecs.row(n.index()).to_vec());
            self.plaus.entry(n).or_insert(0.0);
        }
    }

    fn local_edges(&self, nodes: &[NodeId]) -> LocalEdges {
        let index = |n: NodeId| nodes.binary_search(&n).expect("edge endpoints are graph nodes");
        let mut local = LocalEdges {
            n_nodes: nodes.len(),
            ..LocalEdges::default()
        };
        for e in &self.edges {
            local.src.push(index(e.src));
            local.slot.push(e.label.slot());
            local.dst.push(index(e.dst));
        }
        local
    }

    fn local_hidden(&self, nodes: &[NodeId]) -> Result<Vec<Vec<f64>>> {
        nodes
            .iter()
            .map(|n| self.hidden.get(n).cloned().ok_or(Error::MissingHidden(n.index())))
            .collect()
    }
}

/// Normalized attention of every edge in an inference graph, in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub edges: Vec<Edge>,
    pub raw: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Attention {
    pub fn get(&self, edge: &Edge) -> Option<f64> {
        self.edges.binary_search(edge).ok().map(|i| self.alpha[i])
    }

    pub fn to_map(&self) -> BTreeMap<Edge, f64> {
        self.edges.iter().copied().zip(self.alpha.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredConcept {
    pub concept: ConceptId,
    pub score: f64,
}

/// Nodes whose concepts intersect the question's.
pub fn entity_link(question: &Question, joint: &JointGraph) -> BTreeSet<NodeId> {
    question
        .concept_ids
        .iter()
        .flat_map(|c| joint.nodes_with(*c).iter().copied())
        .collect()
}

/// Adds every joint-graph edge incident to the frontier, with its endpoints.
/// The frontier is the set of nodes that joined in the previous step (the
/// seeds at the first step).
pub fn expand(graph: &mut InferenceGraph, joint: &JointGraph) {
    let frontier = graph.frontier_at(graph.step);
    graph.step += 1;
    for v in frontier {
        for e in joint.incident(v) {
            graph.add_edge(*e);
        }
    }
}

/// Links each node of the current frontier to the `k` joint-graph nodes
/// outside the inference graph whose base encodings have the largest inner
/// product with its own (ties by ascending node id), in both directions.
pub fn semantic_follow(graph: &mut InferenceGraph, joint: &JointGraph, node_vecs: &Matrix, k: usize) {
    if k == 0 {
        return;
    }
    let frontier = graph.frontier_at(graph.step.saturating_sub(1));
    let candidates: Vec<NodeId> = (0..joint.len() as u32)
        .map(NodeId)
        .filter(|n| !graph.contains(*n))
        .collect();
    let mut links = Vec::new();
    for v in frontier {
        let hv = node_vecs.row(v.index());
        let scored: Vec<(NodeId, f64)> = candidates
            .iter()
            .map(|&u| (u, dot(hv, node_vecs.row(u.index()))))
            .collect();
        for (u, _) in top_k_by_score(scored, k) {
            links.push((v, u));
        }
    }
    for (v, u) in links {
        graph.add_edge(Edge::new(v, EdgeLabel::SemanticFollow, u));
        graph.add_edge(Edge::new(u, EdgeLabel::SemanticFollow, v));
    }
}

fn top_k_by_score(mut scored: Vec<(NodeId, f64)>, k: usize) -> Vec<(NodeId, f64)> {
    let order = |a: &(NodeId, f64), b: &(NodeId, f64)| desc(a.1, b.1).then(a.0.cmp(&b.0));
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored
}

/// Question-conditioned attention over every edge of the graph, normalized
/// by softmax over each destination's in-edges. `layer` is 1-based.
pub fn attention_scores(
    graph: &InferenceGraph,
    question_vec: &[f64],
    model: &ReasonerModel,
    layer: usize,
) -> Result<Attention> {
    let params = model
        .layers
        .get(layer.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("no attention parameters for step {layer}")))?;
    let nodes: Vec<NodeId> = graph.node_ids().collect();
    let hidden = graph.local_hidden(&nodes)?;
    let local = graph.local_edges(&nodes);
    let cache = layer::attention_forward(&hidden, question_vec, &local, params, &model.edge_types);
    Ok(Attention {
        edges: graph.edges.iter().copied().collect(),
        raw: cache.raw,
        alpha: cache.alpha,
    })
}

fn check_attention(graph: &InferenceGraph, attention: &Attention) {
    assert!(
        attention.edges.len() == graph.edges.len() && attention.edges.iter().eq(graph.edges.iter()),
        "attention was computed for a different edge set"
    );
}

/// Replaces each hidden state by the attention-weighted sum of its
/// in-neighbors' states; nodes without in-edges keep theirs.
pub fn message_pass(graph: &mut InferenceGraph, attention: &Attention) -> Result<()> {
    check_attention(graph, attention);
    let nodes: Vec<NodeId> = graph.node_ids().collect();
    let hidden = graph.local_hidden(&nodes)?;
    let local = graph.local_edges(&nodes);
    let out = layer::message_forward(&hidden, &local, &attention.alpha);
    for (n, h) in nodes.into_iter().zip(out) {
        graph.hidden.insert(n, h);
    }
    Ok(())
}

/// `s_v ← smips_v + Σ_u α_uv s_u` over in-edges, using the previous scores.
pub fn propagate_plausibility(
    graph: &mut InferenceGraph,
    attention: &Attention,
    smips: impl Fn(NodeId) -> f64,
) {
    check_attention(graph, attention);
    let nodes: Vec<NodeId> = graph.node_ids().collect();
    let prev: Vec<f64> = nodes.iter().map(|&n| graph.plaus(n)).collect();
    let prior: Vec<f64> = nodes.iter().map(|&n| smips(n)).collect();
    let local = graph.local_edges(&nodes);
    let out = layer::plausibility_forward(&prev, &prior, &local, &attention.alpha);
    for (n, s) in nodes.into_iter().zip(out) {
        graph.plaus.insert(n, s);
    }
}

/// Keeps the `k` edges with the largest contribution `α_uv · s_u` (ties:
/// lower (src, dst) first), then drops non-seed nodes left without edges.
pub fn prune(
    graph: &mut InferenceGraph,
    attention: &Attention,
    prev_plaus: &BTreeMap<NodeId, f64>,
    k: usize,
) -> Result<()> {
    if k < 1 {
        return Err(Error::Config("k_prune must be at least 1".into()));
    }
    check_attention(graph, attention);
    if graph.edges.len() > k {
        let mut ranked: Vec<(f64, Edge)> = attention
            .edges
            .iter()
            .zip(&attention.alpha)
            .map(|(e, a)| (a * prev_plaus.get(&e.src).copied().unwrap_or(0.0), *e))
            .collect();
        ranked.sort_by(|x, y| {
            desc(x.0, y.0)
                .then((x.1.src, x.1.dst).cmp(&(y.1.src, y.1.dst)))
                .then(x.1.label.cmp(&y.1.label))
        });
        graph.edges = ranked.into_iter().take(k).map(|(_, e)| e).collect();
    }
    let mut touched = BTreeSet::new();
    for e in &graph.edges {
        touched.insert(e.src);
        touched.insert(e.dst);
    }
    let dropped: Vec<NodeId> = graph
        .node_ids()
        .filter(|n| !touched.contains(n) && !graph.seeds.contains(n))
        .collect();
    for n in dropped {
        graph.nodes.remove(&n);
        graph.hidden.remove(&n);
        graph.plaus.remove(&n);
    }
    Ok(())
}

/// Best node per concept, scanning nodes in ascending id order so the lowest
/// id wins ties.
fn concept_argmax(graph: &InferenceGraph, joint: &JointGraph) -> BTreeMap<ConceptId, (f64, NodeId)> {
    let mut best: BTreeMap<ConceptId, (f64, NodeId)> = BTreeMap::new();
    for n in graph.node_ids() {
        let s = graph.plaus(n);
        for &c in &joint.node(n).concept_ids {
            match best.get(&c) {
                Some(&(b, _)) if b >= s => {}
                _ => {
                    best.insert(c, (s, n));
                }
            }
        }
    }
    best
}

pub(crate) fn rank(mut scored: Vec<ScoredConcept>) -> Vec<ScoredConcept> {
    scored.sort_by(|a, b| desc(a.score, b.score).then(a.concept.cmp(&b.concept)));
    scored
}

/// Each concept's score is the maximum plausibility over the graph nodes
/// that mention it; sorted by score descending, then concept id.
pub fn aggregate_concepts(graph: &InferenceGraph, joint: &JointGraph) -> Vec<ScoredConcept> {
    rank(
        concept_argmax(graph, joint)
            .into_iter()
            .map(|(concept, (score, _))| ScoredConcept { concept, score })
            .collect(),
    )
}

/// Result of answering one question.
#[derive(Debug, Clone)]
pub struct Answer {
    pub ranking: Vec<ScoredConcept>,
    pub graph: InferenceGraph,
    /// Attention of the last step, covering every edge of `graph`.
    pub attention: Attention,
    /// Whether entity linking found at least one node.
    pub linked: bool,
    pub retrieved: Vec<(FactId, f64)>,
}

impl Answer {
    pub fn top(&self) -> Option<ConceptId> {
        self.ranking.first().map(|s| s.concept)
    }
}

/// Runs the full inference loop for one question.
pub fn answer(
    question: &Question,
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
) -> Result<Answer> {
    run(question, kb, encoder, model, false).map(|(a, _)| a)
}

/// [`answer`] plus the structural record needed to re-evaluate and
/// differentiate the same forward pass.
pub fn answer_traced(
    question: &Question,
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
) -> Result<(Answer, Trace)> {
    run(question, kb, encoder, model, true).map(|(a, t)| (a, t.expect("trace requested")))
}

fn run(
    question: &Question,
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
    record: bool,
) -> Result<(Answer, Option<Trace>)> {
    let joint = kb.joint();
    if joint.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let cfg = &model.config;
    let question_tokens = encoder.token_ids(&question.text);
    let qvec = encoder.encode_ids(&question_tokens);
    let facts = kb.fact_index();
    let fact_prior: Vec<f64> = (0..facts.len())
        .map(|row| softplus(dot(&qvec, facts.vector(row))))
        .collect();
    let smips = |n: NodeId| fact_prior[kb.fact_row(n)];

    let retrieved = mips_search(&qvec, facts, cfg.top_n_retrieval);
    let mut seeds = entity_link(question, joint);
    let linked = !seeds.is_empty();
    if !linked || cfg.seed_with_retrieval {
        for &(fact, _) in &retrieved {
            seeds.extend(
                joint
                    .nodes()
                    .iter()
                    .filter(|n| n.fact == fact)
                    .map(|n| n.id),
            );
        }
    }

    let mut graph = InferenceGraph::new(seeds);
    for s in graph.seeds.clone() {
        graph.set_plaus(s, smips(s));
    }
    graph.init_missing(kb.node_vecs());

    let mut trace = record.then(|| Trace::new(question_tokens.clone()));
    let mut survivors: Option<Vec<NodeId>> = None;
    let mut attention = Attention {
        edges: Vec::new(),
        raw: Vec::new(),
        alpha: Vec::new(),
    };
    for step in 1..=cfg.steps {
        expand(&mut graph, joint);
        if cfg.k_follow > 0 && (cfg.follow_every_step || step == 1) {
            semantic_follow(&mut graph, joint, kb.node_vecs(), cfg.k_follow);
        }
        graph.init_missing(kb.node_vecs());

        let nodes: Vec<NodeId> = graph.node_ids().collect();
        if let Some(t) = trace.as_mut() {
            t.push_layer(&graph, &nodes, survivors.as_deref(), step == 1);
        }
        attention = attention_scores(&graph, &qvec, model, step)?;
        let prev = graph.plaus.clone();
        message_pass(&mut graph, &attention)?;
        propagate_plausibility(&mut graph, &attention, smips);
        if let Some(k) = cfg.k_prune {
            prune(&mut graph, &attention, &prev, k)?;
            // Attention is reported for the surviving edges only.
            let keep: Vec<usize> = attention
                .edges
                .iter()
                .enumerate()
                .filter(|(_, e)| graph.edges.contains(e))
                .map(|(i, _)| i)
                .collect();
            attention = Attention {
                edges: keep.iter().map(|&i| attention.edges[i]).collect(),
                raw: keep.iter().map(|&i| attention.raw[i]).collect(),
                alpha: keep.iter().map(|&i| attention.alpha[i]).collect(),
            };
        }
        survivors = Some(graph.node_ids().collect());
    }

    let argmax = concept_argmax(&graph, joint);
    if let Some(t) = trace.as_mut() {
        t.finish(argmax.iter().map(|(&c, &(_, n))| (c, n)));
    }
    let ranking = rank(
        argmax
            .into_iter()
            .map(|(concept, (score, _))| ScoredConcept { concept, score })
            .collect(),
    );
    Ok((
        Answer {
            ranking,
            graph,
            attention,
            linked,
            retrieved,
        },
        trace,
    ))
}
