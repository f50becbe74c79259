//! One inference step over a locally indexed graph: question-conditioned
//! edge attention, attention-weighted message passing and plausibility
//! spread, with the matching reverse-mode derivatives.
//!
//! Nodes are `0..n`; each edge is `(src, slot, dst)` where `slot` selects the
//! edge-type embedding. Attention is normalized over all in-edges of a
//! destination, pooling edge types.

use crate::tensor::{add_assign, axpy, dot, Matrix};

use super::LayerParams;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct LocalEdges {
    pub n_nodes: usize,
    pub src: Vec<usize>,
    pub slot: Vec<usize>,
    pub dst: Vec<usize>,
}

impl LocalEdges {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn has_in_edge(&self) -> Vec<bool> {
        let mut has = vec![false; self.n_nodes];
        for &v in &self.dst {
            has[v] = true;
        }
        has
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache {
    /// Per-edge source projection `W_s [h_u ‖ p_k ‖ h_q]`, row-major `E × m`.
    pub a: Vec<f64>,
    /// Per-edge destination projection `W_t [h_v ‖ p_k ‖ h_q]`.
    pub b: Vec<f64>,
    pub raw: Vec<f64>,
    pub alpha: Vec<f64>,
}

fn projections(w: &Matrix, rows: impl Iterator<Item = Vec<f64>>) -> Vec<Vec<f64>> {
    rows.map(|x| w.mul_block(0, &x)).collect()
}

pub(crate) fn attention_forward(
    hidden: &[Vec<f64>],
    question: &[f64],
    edges: &LocalEdges,
    params: &LayerParams,
    edge_types: &Matrix,
) -> AttentionCache {
    let d = question.len();
    let m = params.w_src.rows();
    let node_a = projections(&params.w_src, hidden.iter().cloned());
    let node_b = projections(&params.w_dst, hidden.iter().cloned());
    let type_a: Vec<Vec<f64>> = (0..edge_types.rows())
        .map(|k| params.w_src.mul_block(d, edge_types.row(k)))
        .collect();
    let type_b: Vec<Vec<f64>> = (0..edge_types.rows())
        .map(|k| params.w_dst.mul_block(d, edge_types.row(k)))
        .collect();
    let q_a = params.w_src.mul_block(2 * d, question);
    let q_b = params.w_dst.mul_block(2 * d, question);

    let n_edges = edges.len();
    let mut a = vec![0.0; n_edges * m];
    let mut b = vec![0.0; n_edges * m];
    let mut raw = vec![0.0; n_edges];
    for e in 0..n_edges {
        let (u, k, v) = (edges.src[e], edges.slot[e], edges.dst[e]);
        let ae = &mut a[e * m..(e + 1) * m];
        for i in 0..m {
            ae[i] = node_a[u][i] + type_a[k][i] + q_a[i];
        }
        let be = &mut b[e * m..(e + 1) * m];
        for i in 0..m {
            be[i] = node_b[v][i] + type_b[k][i] + q_b[i];
        }
        raw[e] = dot(&a[e * m..(e + 1) * m], &b[e * m..(e + 1) * m]);
    }
    let alpha = softmax_by_destination(&raw, edges);
    AttentionCache { a, b, raw, alpha }
}

pub(crate) fn softmax_by_destination(raw: &[f64], edges: &LocalEdges) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; edges.n_nodes];
    for (e, &v) in edges.dst.iter().enumerate() {
        max[v] = max[v].max(raw[e]);
    }
    let mut alpha: Vec<f64> = raw
        .iter()
        .zip(&edges.dst)
        .map(|(&x, &v)| (x - max[v]).exp())
        .collect();
    let mut total = vec![0.0; edges.n_nodes];
    for (e, &v) in edges.dst.iter().enumerate() {
        total[v] += alpha[e];
    }
    for (e, &v) in edges.dst.iter().enumerate() {
        alpha[e] /= total[v];
    }
    alpha
}

/// `h_v ← Σ α_uv h_u`; nodes without in-edges keep their state.
pub(crate) fn message_forward(hidden: &[Vec<f64>], edges: &LocalEdges, alpha: &[f64]) -> Vec<Vec<f64>> {
    let has_in = edges.has_in_edge();
    let d = hidden.first().map_or(0, Vec::len);
    let mut out: Vec<Vec<f64>> = hidden
        .iter()
        .zip(&has_in)
        .map(|(h, &has)| if has { vec![0.0; d] } else { h.clone() })
        .collect();
    for e in 0..edges.len() {
        axpy(alpha[e], &hidden[edges.src[e]], &mut out[edges.dst[e]]);
    }
    out
}

/// `s_v ← smips_v + Σ α_uv s_u`
pub(crate) fn plausibility_forward(
    prev: &[f64],
    smips: &[f64],
    edges: &LocalEdges,
    alpha: &[f64],
) -> Vec<f64> {
    let mut spread = vec![0.0; edges.n_nodes];
    for e in 0..edges.len() {
        spread[edges.dst[e]] += alpha[e] * prev[edges.src[e]];
    }
    smips.iter().zip(&spread).map(|(s, x)| s + x).collect()
}

/// Derivatives of one step with respect to its inputs and parameters.
pub(crate) struct LayerGrads {
    pub hidden: Vec<Vec<f64>>,
    pub plaus: Vec<f64>,
    pub smips: Vec<f64>,
    pub question: Vec<f64>,
    pub w_src: Matrix,
    pub w_dst: Matrix,
    pub edge_types: Matrix,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_backward(
    hidden: &[Vec<f64>],
    prev_plaus: &[f64],
    question: &[f64],
    edges: &LocalEdges,
    params: &LayerParams,
    edge_types: &Matrix,
    cache: &AttentionCache,
    d_hidden_out: &[Vec<f64>],
    d_plaus_out: &[f64],
) -> LayerGrads {
    let n = edges.n_nodes;
    let d = question.len();
    let m = params.w_src.rows();
    let has_in = edges.has_in_edge();

    let mut g = LayerGrads {
        hidden: vec![vec![0.0; d]; n],
        plaus: vec![0.0; n],
        smips: d_plaus_out.to_vec(),
        question: vec![0.0; d],
        w_src: Matrix::zeros(m, 3 * d),
        w_dst: Matrix::zeros(m, 3 * d),
        edge_types: Matrix::zeros(edge_types.rows(), d),
    };
    for v in 0..n {
        if !has_in[v] {
            add_assign(&mut g.hidden[v], &d_hidden_out[v]);
        }
    }

    // Through the two attention-weighted sums.
    let mut d_alpha = vec![0.0; edges.len()];
    for e in 0..edges.len() {
        let (u, v) = (edges.src[e], edges.dst[e]);
        d_alpha[e] = dot(&d_hidden_out[v], &hidden[u]) + d_plaus_out[v] * prev_plaus[u];
        axpy(cache.alpha[e], &d_hidden_out[v], &mut g.hidden[u]);
        g.plaus[u] += cache.alpha[e] * d_plaus_out[v];
    }

    // Softmax per destination.
    let mut weighted = vec![0.0; n];
    for e in 0..edges.len() {
        weighted[edges.dst[e]] += cache.alpha[e] * d_alpha[e];
    }
    let d_raw: Vec<f64> = (0..edges.len())
        .map(|e| cache.alpha[e] * (d_alpha[e] - weighted[edges.dst[e]]))
        .collect();

    // Bilinear score: raw = a·b.
    let mut d_node_a = vec![vec![0.0; m]; n];
    let mut d_node_b = vec![vec![0.0; m]; n];
    let mut d_type_a = vec![vec![0.0; m]; edge_types.rows()];
    let mut d_type_b = vec![vec![0.0; m]; edge_types.rows()];
    let mut d_q_a = vec![0.0; m];
    let mut d_q_b = vec![0.0; m];
    for e in 0..edges.len() {
        let de = d_raw[e];
        if de == 0.0 {
            continue;
        }
        let (u, k, v) = (edges.src[e], edges.slot[e], edges.dst[e]);
        let ae = &cache.a[e * m..(e + 1) * m];
        let be = &cache.b[e * m..(e + 1) * m];
        axpy(de, be, &mut d_node_a[u]);
        axpy(de, be, &mut d_type_a[k]);
        axpy(de, be, &mut d_q_a);
        axpy(de, ae, &mut d_node_b[v]);
        axpy(de, ae, &mut d_type_b[k]);
        axpy(de, ae, &mut d_q_b);
    }

    for v in 0..n {
        g.w_src.add_outer_block(0, &d_node_a[v], &hidden[v]);
        params.w_src.mul_block_t_into(0, &d_node_a[v], &mut g.hidden[v]);
        g.w_dst.add_outer_block(0, &d_node_b[v], &hidden[v]);
        params.w_dst.mul_block_t_into(0, &d_node_b[v], &mut g.hidden[v]);
    }
    for k in 0..edge_types.rows() {
        let p = edge_types.row(k);
        g.w_src.add_outer_block(d, &d_type_a[k], p);
        params.w_src.mul_block_t_into(d, &d_type_a[k], g.edge_types.row_mut(k));
        g.w_dst.add_outer_block(d, &d_type_b[k], p);
        params.w_dst.mul_block_t_into(d, &d_type_b[k], g.edge_types.row_mut(k));
    }
    g.w_src.add_outer_block(2 * d, &d_q_a, question);
    params.w_src.mul_block_t_into(2 * d, &d_q_a, &mut g.question);
    g.w_dst.add_outer_block(2 * d, &d_q_b, question);
    params.w_dst.mul_block_t_into(2 * d, &d_q_b, &mut g.question);
    g
}
