//! The corpus, its joint graph and the encoder-dependent vectors derived
//! from them, bundled for reasoning.

use crate::corpus::CorpusIndex;
use crate::encoder::{EncoderModel, FactIndex};
use crate::error::Result;
use crate::graph::{JointGraph, NodeId};
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct Knowledge {
    corpus: CorpusIndex,
    joint: JointGraph,
    node_fact_row: Vec<usize>,
    node_tokens: Vec<Vec<usize>>,
    fact_tokens: Vec<Vec<usize>>,
    node_vecs: Matrix,
    facts: FactIndex,
}

impl Knowledge {
    pub fn new(corpus: CorpusIndex, encoder: &EncoderModel) -> Result<Self> {
        let joint = JointGraph::build(&corpus)?;
        Ok(Self::with_joint(corpus, joint, encoder))
    }

    pub fn with_joint(corpus: CorpusIndex, joint: JointGraph, encoder: &EncoderModel) -> Self {
        let node_fact_row = joint
            .nodes()
            .iter()
            .map(|n| corpus.position(n.fact).expect("graph nodes come from corpus facts"))
            .collect();
        let mut kb = Knowledge {
            corpus,
            joint,
            node_fact_row,
            node_tokens: Vec::new(),
            fact_tokens: Vec::new(),
            node_vecs: Matrix::zeros(0, encoder.dim()),
            facts: FactIndex::from_parts(Vec::new(), Matrix::zeros(0, encoder.dim())),
        };
        kb.refresh(encoder);
        kb
    }

    /// Re-encodes node phrases and facts after the encoder changed.
    pub fn refresh(&mut self, encoder: &EncoderModel) {
        self.node_tokens = self
            .joint
            .nodes()
            .iter()
            .map(|n| encoder.token_ids(&n.phrase))
            .collect();
        self.fact_tokens = self
            .corpus
            .facts()
            .iter()
            .map(|f| encoder.token_ids(&f.text))
            .collect();
        let mut node_vecs = Matrix::zeros(self.joint.len(), encoder.dim());
        for (i, ids) in self.node_tokens.iter().enumerate() {
            node_vecs.row_mut(i).copy_from_slice(&encoder.encode_ids(ids));
        }
        self.node_vecs = node_vecs;
        self.facts = FactIndex::build(&self.corpus, encoder);
    }

    pub fn corpus(&self) -> &CorpusIndex {
        &self.corpus
    }

    pub fn joint(&self) -> &JointGraph {
        &self.joint
    }

    /// Base encodings of node phrases, one row per joint-graph node.
    pub fn node_vecs(&self) -> &Matrix {
        &self.node_vecs
    }

    pub fn fact_index(&self) -> &FactIndex {
        &self.facts
    }

    pub fn fact_row(&self, node: NodeId) -> usize {
        self.node_fact_row[node.index()]
    }

    pub(crate) fn node_tokens(&self, node: NodeId) -> &[usize] {
        &self.node_tokens[node.index()]
    }

    pub(crate) fn fact_tokens(&self, row: usize) -> &[usize] {
        &self.fact_tokens[row]
    }
}
