//! Direct, unoptimized recomputations used as references.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use graphqa::corpus::{ConceptId, FactId};
use graphqa::encoder::FactIndex;
use graphqa::graph::{Edge, EdgeLabel, JointGraph, NodeId};
use graphqa::reasoner::{InferenceGraph, ReasonerModel};

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn matvec(w: &graphqa::tensor::Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| (0..w.cols()).map(|j| w.get(i, j) * x[j]).sum())
        .collect()
}

/// Raw bilinear scores and per-destination softmax, edge by edge.
pub fn attention(graph: &InferenceGraph, q: &[f64], model: &ReasonerModel, layer: usize) -> BTreeMap<Edge, f64> {
    let params = &model.layers()[layer - 1];
    let mut raw = BTreeMap::new();
    for e in graph.edges() {
        let p = model.edge_types().row(e.label.slot());
        let xu = concat(&[graph.hidden(e.src).unwrap(), p, q]);
        let xv = concat(&[graph.hidden(e.dst).unwrap(), p, q]);
        let a = matvec(&params.w_src, &xu);
        let b = matvec(&params.w_dst, &xv);
        raw.insert(*e, a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>());
    }
    let mut out = BTreeMap::new();
    for (e, x) in &raw {
        let z: f64 = raw.iter().filter(|(f, _)| f.dst == e.dst).map(|(_, y)| y.exp()).sum();
        out.insert(*e, x.exp() / z);
    }
    out
}

pub fn plausibility(
    graph: &InferenceGraph,
    alpha: &BTreeMap<Edge, f64>,
    smips: &dyn Fn(NodeId) -> f64,
) -> BTreeMap<NodeId, f64> {
    graph
        .node_ids()
        .map(|v| {
            let spread: f64 = alpha
                .iter()
                .filter(|(e, _)| e.dst == v)
                .map(|(e, a)| a * graph.plaus(e.src))
                .sum();
            (v, smips(v) + spread)
        })
        .collect()
}

pub fn aggregate(graph: &InferenceGraph, joint: &JointGraph) -> Vec<(ConceptId, f64)> {
    let mut best: BTreeMap<ConceptId, f64> = BTreeMap::new();
    for v in graph.node_ids() {
        for c in &joint.node(v).concept_ids {
            let s = graph.plaus(v);
            let e = best.entry(*c).or_insert(s);
            if s > *e {
                *e = s;
            }
        }
    }
    let mut out: Vec<(ConceptId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

/// Surviving edges and nodes after keeping the `k` largest contributions.
pub fn prune(
    graph: &InferenceGraph,
    alpha: &BTreeMap<Edge, f64>,
    prev: &BTreeMap<NodeId, f64>,
    k: usize,
) -> (BTreeSet<Edge>, BTreeSet<NodeId>) {
    let mut all: Vec<(f64, Edge)> = graph
        .edges()
        .iter()
        .map(|e| (alpha[e] * prev.get(&e.src).copied().unwrap_or(0.0), *e))
        .collect();
    all.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then((a.1.src, a.1.dst).cmp(&(b.1.src, b.1.dst)))
            .then(a.1.label.cmp(&b.1.label))
    });
    let kept: BTreeSet<Edge> = all.into_iter().take(k).map(|(_, e)| e).collect();
    let nodes = graph
        .node_ids()
        .filter(|n| graph.seeds().contains(n) || kept.iter().any(|e| e.src == *n || e.dst == *n))
        .collect();
    (kept, nodes)
}

pub fn mips(query: &[f64], index: &FactIndex, top_n: usize) -> Vec<(FactId, f64)> {
    let mut all: Vec<(FactId, f64)> = (0..index.len())
        .map(|i| {
            let f = index.vector(i);
            (index.fact_ids()[i], (0..f.len()).map(|j| f[j] * query[j]).sum())
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(top_n);
    all
}

pub fn recall(ranked: &[ConceptId], truth: &BTreeSet<ConceptId>, k: usize) -> f64 {
    let mut found = 0;
    for t in truth {
        if ranked.iter().take(k).any(|r| r == t) {
            found += 1;
        }
    }
    found as f64 / truth.len() as f64
}

/// Nodes within `hops` undirected steps of the seeds.
pub fn bfs_ball(joint: &JointGraph, seeds: &BTreeSet<NodeId>, hops: usize) -> BTreeSet<NodeId> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for e in joint.edges() {
        adj.entry(e.src).or_default().push(e.dst);
        adj.entry(e.dst).or_default().push(e.src);
    }
    let mut seen = seeds.clone();
    let mut layer: Vec<NodeId> = seeds.iter().copied().collect();
    for _ in 0..hops {
        let mut next = Vec::new();
        for v in layer {
            for &u in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(u) {
                    next.push(u);
                }
            }
        }
        layer = next;
    }
    seen
}

/// A graph on nodes `0..n` with random labeled edges, states and scores.
pub fn random_graph<R: Rng>(rng: &mut R, n: u32, d: usize) -> InferenceGraph {
    let seeds: BTreeSet<NodeId> = (0..n).filter(|_| rng.gen_bool(0.3)).map(NodeId).collect();
    let mut g = InferenceGraph::new(seeds);
    let labels = [
        EdgeLabel::PredArg(1),
        EdgeLabel::PredArg(2),
        EdgeLabel::AsPredArg(1),
        EdgeLabel::Mod,
        EdgeLabel::SharedConcept,
        EdgeLabel::SemanticFollow,
    ];
    for _ in 0..rng.gen_range(1..=3 * n as usize) {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            g.add_edge(Edge::new(NodeId(u), labels[rng.gen_range(0..labels.len())], NodeId(v)));
        }
    }
    let ids: Vec<NodeId> = g.node_ids().collect();
    for v in ids {
        g.set_hidden(v, (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
        g.set_plaus(v, rng.gen_range(0.0..3.0));
    }
    g
}
