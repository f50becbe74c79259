//! Re-evaluation and exact differentiation of a recorded forward pass.
//!
//! A [`Trace`] freezes every discrete choice of one run of the inference
//! loop: which nodes and edges exist at each step, where each node's input
//! state comes from, which nodes survive the last pruning, and which node
//! carries each concept's maximum. Given that structure the concept scores
//! are a smooth function of the encoder table and the reasoner parameters.

use std::collections::BTreeMap;

use crate::corpus::ConceptId;
use crate::encoder::{sigmoid, softplus, EncoderModel};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::knowledge::Knowledge;
use crate::tensor::{add_assign, axpy, dot, norm, Matrix};

use super::layer::{self, AttentionCache, LocalEdges};
use super::{InferenceGraph, ReasonerModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Input {
    /// Output of the previous step at this local index.
    Carry(usize),
    /// Base encoding; plausibility is the retrieval prior for first-step
    /// seeds and zero otherwise.
    Fresh { seed: bool },
}

#[derive(Debug, Clone, PartialEq)]
struct LayerTrace {
    nodes: Vec<NodeId>,
    edges: LocalEdges,
    inputs: Vec<Input>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    question_tokens: Vec<usize>,
    layers: Vec<LayerTrace>,
    /// (concept, local index in the last step of its best node)
    concepts: Vec<(ConceptId, usize)>,
}

impl Trace {
    pub(super) fn new(question_tokens: Vec<usize>) -> Self {
        Trace {
            question_tokens,
            layers: Vec::new(),
            concepts: Vec::new(),
        }
    }

    pub(super) fn push_layer(
        &mut self,
        graph: &InferenceGraph,
        nodes: &[NodeId],
        survivors: Option<&[NodeId]>,
        first: bool,
    ) {
        let prev_nodes = self.layers.last().map(|l| l.nodes.as_slice()).unwrap_or(&[]);
        let inputs = nodes
            .iter()
            .map(|n| {
                if first {
                    return Input::Fresh {
                        seed: graph.seeds.contains(n),
                    };
                }
                let carried = survivors.is_some_and(|s| s.binary_search(n).is_ok());
                match prev_nodes.binary_search(n) {
                    Ok(i) if carried => Input::Carry(i),
                    _ => Input::Fresh { seed: false },
                }
            })
            .collect();
        self.layers.push(LayerTrace {
            nodes: nodes.to_vec(),
            edges: graph.local_edges(nodes),
            inputs,
        });
    }

    pub(super) fn finish(&mut self, best: impl Iterator<Item = (ConceptId, NodeId)>) {
        let last = &self.layers.last().expect("at least one step").nodes;
        self.concepts = best
            .map(|(c, n)| (c, last.binary_search(&n).expect("best node is in the last step")))
            .collect();
    }

    pub fn concepts(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.concepts.iter().map(|(c, _)| *c)
    }

    pub fn steps(&self) -> usize {
        self.layers.len()
    }

    /// Node count per step.
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.nodes.len()).collect()
    }

    /// Evaluates concept scores on the recorded structure.
    pub fn forward(&self, kb: &Knowledge, encoder: &EncoderModel, model: &ReasonerModel) -> Result<TraceForward> {
        if model.layers.len() < self.layers.len() {
            return Err(Error::Config("trace has more steps than the model".into()));
        }
        let table = encoder.table();
        let question = mean_rows(table, &self.question_tokens);
        let mut fact_vecs: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut steps: Vec<StepValues> = Vec::with_capacity(self.layers.len());
        for (l, lt) in self.layers.iter().enumerate() {
            let mut hidden = Vec::with_capacity(lt.nodes.len());
            let mut plaus = Vec::with_capacity(lt.nodes.len());
            let mut logits = Vec::with_capacity(lt.nodes.len());
            for (i, &n) in lt.nodes.iter().enumerate() {
                let row = kb.fact_row(n);
                let f = fact_vecs
                    .entry(row)
                    .or_insert_with(|| mean_rows(table, kb.fact_tokens(row)));
                let logit = dot(&question, f);
                logits.push(logit);
                match lt.inputs[i] {
                    Input::Carry(p) => {
                        hidden.push(steps[l - 1].hidden_out[p].clone());
                        plaus.push(steps[l - 1].plaus_out[p]);
                    }
                    Input::Fresh { seed } => {
                        hidden.push(mean_rows(table, kb.node_tokens(n)));
                        plaus.push(if seed { softplus(logit) } else { 0.0 });
                    }
                }
            }
            let prior: Vec<f64> = logits.iter().map(|&x| softplus(x)).collect();
            let params = &model.layers[l];
            let cache = layer::attention_forward(&hidden, &question, &lt.edges, params, &model.edge_types);
            let hidden_out = layer::message_forward(&hidden, &lt.edges, &cache.alpha);
            let plaus_out = layer::plausibility_forward(&plaus, &prior, &lt.edges, &cache.alpha);
            steps.push(StepValues {
                hidden,
                plaus,
                logits,
                cache,
                hidden_out,
                plaus_out,
            });
        }
        let last = steps.last().expect("at least one step");
        let scores = self.concepts.iter().map(|&(_, i)| last.plaus_out[i]).collect();
        Ok(TraceForward {
            question,
            fact_vecs,
            steps,
            scores,
        })
    }

    /// Reverse-mode gradients of a scalar objective given its derivative with
    /// respect to each concept score (in [`Trace::concepts`] order).
    pub fn backward(
        &self,
        kb: &Knowledge,
        encoder: &EncoderModel,
        model: &ReasonerModel,
        fwd: &TraceForward,
        d_scores: &[f64],
        with_encoder: bool,
    ) -> Gradients {
        assert_eq!(d_scores.len(), self.concepts.len());
        let d = encoder.dim();
        let mut grads = Gradients::zeros(model, encoder, with_encoder);
        let mut d_question = vec![0.0; d];
        let mut d_facts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut d_nodes: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();

        let last = self.layers.len() - 1;
        let mut d_hidden = vec![vec![0.0; d]; self.layers[last].nodes.len()];
        let mut d_plaus = vec![0.0; self.layers[last].nodes.len()];
        for (&(_, i), &g) in self.concepts.iter().zip(d_scores) {
            d_plaus[i] += g;
        }

        for l in (0..self.layers.len()).rev() {
            let lt = &self.layers[l];
            let sv = &fwd.steps[l];
            let lg = layer::layer_backward(
                &sv.hidden,
                &sv.plaus,
                &fwd.question,
                &lt.edges,
                &model.layers[l],
                &model.edge_types,
                &sv.cache,
                &d_hidden,
                &d_plaus,
            );
            add_assign(grads.w_src[l].as_mut_slice(), lg.w_src.as_slice());
            add_assign(grads.w_dst[l].as_mut_slice(), lg.w_dst.as_slice());
            add_assign(grads.edge_types.as_mut_slice(), lg.edge_types.as_slice());
            add_assign(&mut d_question, &lg.question);

            let (prev_h, prev_s) = if l > 0 {
                let n = self.layers[l - 1].nodes.len();
                (vec![vec![0.0; d]; n], vec![0.0; n])
            } else {
                (Vec::new(), Vec::new())
            };
            let (mut prev_h, mut prev_s) = (prev_h, prev_s);
            for (i, &n) in lt.nodes.iter().enumerate() {
                let mut d_logit = lg.smips[i];
                match lt.inputs[i] {
                    Input::Carry(p) => {
                        add_assign(&mut prev_h[p], &lg.hidden[i]);
                        prev_s[p] += lg.plaus[i];
                    }
                    Input::Fresh { seed } => {
                        if with_encoder {
                            add_assign(d_nodes.entry(n).or_insert_with(|| vec![0.0; d]), &lg.hidden[i]);
                        }
                        if seed {
                            d_logit += lg.plaus[i];
                        }
                    }
                }
                if d_logit != 0.0 {
                    let g = d_logit * sigmoid(sv.logits[i]);
                    let row = kb.fact_row(n);
                    axpy(g, &fwd.fact_vecs[&row], &mut d_question);
                    if with_encoder {
                        axpy(g, &fwd.question, d_facts.entry(row).or_insert_with(|| vec![0.0; d]));
                    }
                }
            }
            d_hidden = prev_h;
            d_plaus = prev_s;
        }

        if let Some(table) = grads.embeddings.as_mut() {
            spread_rows(table, &self.question_tokens, &d_question);
            for (row, g) in &d_facts {
                spread_rows(table, kb.fact_tokens(*row), g);
            }
            for (n, g) in &d_nodes {
                spread_rows(table, kb.node_tokens(*n), g);
            }
        }
        grads
    }
}

fn mean_rows(table: &Matrix, ids: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; table.cols()];
    if ids.is_empty() {
        return out;
    }
    for &id in ids {
        for (o, x) in out.iter_mut().zip(table.row(id)) {
            *o += x;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Adjoint of [`mean_rows`].
fn spread_rows(table: &mut Matrix, ids: &[usize], g: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let w = 1.0 / ids.len() as f64;
    for &id in ids {
        axpy(w, g, table.row_mut(id));
    }
}

#[derive(Debug, Clone)]
struct StepValues {
    hidden: Vec<Vec<f64>>,
    plaus: Vec<f64>,
    logits: Vec<f64>,
    cache: AttentionCache,
    hidden_out: Vec<Vec<f64>>,
    plaus_out: Vec<f64>,
}

/// Values of a forward pass over a [`Trace`].
#[derive(Debug, Clone)]
pub struct TraceForward {
    question: Vec<f64>,
    fact_vecs: BTreeMap<usize, Vec<f64>>,
    steps: Vec<StepValues>,
    /// Concept scores in [`Trace::concepts`] order.
    pub scores: Vec<f64>,
}

impl TraceForward {
    /// Attention of every edge at each step (before pruning).
    pub fn alphas(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.cache.alpha.as_slice()).collect()
    }

    /// Plausibility of every node after each step.
    pub fn plausibility(&self) -> Vec<&[f64]> {
        self.steps.iter().map(|s| s.plaus_out.as_slice()).collect()
    }
}

/// Gradients for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embeddings: Option<Matrix>,
    pub w_src: Vec<Matrix>,
    pub w_dst: Vec<Matrix>,
    pub edge_types: Matrix,
}

impl Gradients {
    pub fn zeros(model: &ReasonerModel, encoder: &EncoderModel, with_encoder: bool) -> Self {
        let shape = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Gradients {
            embeddings: with_encoder.then(|| shape(encoder.table())),
            w_src: model.layers.iter().map(|l| shape(&l.w_src)).collect(),
            w_dst: model.layers.iter().map(|l| shape(&l.w_dst)).collect(),
            edge_types: shape(&model.edge_types),
        }
    }

    /// `(name, values)` for every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        if let Some(e) = &self.embeddings {
            out.push(("encoder.embeddings".to_string(), e));
        }
        for (l, (s, t)) in self.w_src.iter().zip(&self.w_dst).enumerate() {
            out.push((format!("reasoner.layer{}.w_src", l + 1), s));
            out.push((format!("reasoner.layer{}.w_dst", l + 1), t));
        }
        out.push(("reasoner.edge_types".to_string(), &self.edge_types));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        if let Some(e) = self.embeddings.as_mut() {
            out.push(e);
        }
        for (s, t) in self.w_src.iter_mut().zip(self.w_dst.iter_mut()) {
            out.push(s);
            out.push(t);
        }
        out.push(&mut self.edge_types);
        out
    }

    pub fn add(&mut self, other: &Gradients) {
        let theirs: Vec<&Matrix> = other.tensors().into_iter().map(|(_, m)| m).collect();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(theirs) {
            add_assign(mine.as_mut_slice(), theirs.as_slice());
        }
    }

    pub fn scale(&mut self, k: f64) {
        for m in self.tensors_mut() {
            m.as_mut_slice().iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.tensors()
            .into_iter()
            .map(|(name, m)| (name, norm(m.as_slice())))
            .collect()
    }

    /// Errors with the first tensor holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in self.tensors() {
            if !m.is_finite() {
                return Err(Error::NonFiniteGradient(name));
            }
        }
        Ok(())
    }
}
