//! Binary cross-entropy over normalized concept scores, exact gradients and
//! the training loops for the reasoner and the retriever.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, Question};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::harness::metrics::hits_at_k;
use crate::knowledge::Knowledge;
use crate::reasoner::{answer, answer_traced, Gradients, ReasonerModel};
use crate::tensor::{axpy, dot, Matrix};

/// Probabilities are kept `ε` away from 0 and 1 inside the logarithms.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Scores divided by their sum.
    pub probs: Vec<f64>,
    /// Derivative of the loss with respect to each raw score.
    pub d_scores: Vec<f64>,
}

/// `−(1/n) Σ [y log p + (1−y) log(1−p)]` with `p = s / Σ s`.
pub fn bce_loss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    loss_with_grad(scores, labels).map(|r| r.loss)
}

pub fn loss_with_grad(scores: &[f64], labels: &[bool]) -> Result<LossReport> {
    assert_eq!(scores.len(), labels.len());
    let total: f64 = scores.iter().sum();
    if scores.is_empty() || total <= 0.0 || !total.is_finite() {
        return Err(Error::DegenerateNormalization);
    }
    let n = scores.len() as f64;
    let probs: Vec<f64> = scores.iter().map(|s| s / total).collect();
    let mut loss = 0.0;
    // d loss / d p
    let mut d_probs = vec![0.0; scores.len()];
    for (i, (&p, &y)) in probs.iter().zip(labels).enumerate() {
        if y {
            loss -= p.max(LOSS_EPS).ln();
            if p > LOSS_EPS {
                d_probs[i] = -1.0 / (n * p);
            }
        } else {
            loss -= (1.0 - p).max(LOSS_EPS).ln();
            if 1.0 - p > LOSS_EPS {
                d_probs[i] = 1.0 / (n * (1.0 - p));
            }
        }
    }
    loss /= n;
    let mean: f64 = d_probs.iter().zip(&probs).map(|(g, p)| g * p).sum();
    let d_scores = d_probs.iter().map(|g| (g - mean) / total).collect();
    Ok(LossReport {
        loss,
        probs,
        d_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub train_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 120,
            batch_size: 4,
            seed: 0,
            optimizer: Optimizer::default(),
            train_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(Error::Config("Adam needs β1, β2 in [0, 1) and ε > 0".into()));
            }
        }
        Ok(())
    }
}

/// Loss and gradients of one question, or `None` when its graph has no
/// concept with a positive score.
pub fn question_gradients(
    question: &Question,
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
    with_encoder: bool,
) -> Result<Option<(f64, Gradients)>> {
    let (_, trace) = answer_traced(question, kb, encoder, model)?;
    let fwd = trace.forward(kb, encoder, model)?;
    let labels: Vec<bool> = trace
        .concepts()
        .map(|c| question.answer_ids.contains(&c))
        .collect();
    let report = match loss_with_grad(&fwd.scores, &labels) {
        Ok(r) => r,
        Err(Error::DegenerateNormalization) => return Ok(None),
        Err(e) => return Err(e),
    };
    let grads = trace.backward(kb, encoder, model, &fwd, &report.d_scores, with_encoder);
    Ok(Some((report.loss, grads)))
}

/// Mean loss and gradients over a batch; questions without a usable
/// normalization are left out of the mean.
pub fn batch_gradients(
    questions: &[&Question],
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
    with_encoder: bool,
) -> Result<Option<(f64, Gradients)>> {
    let parts: Vec<Option<(f64, Gradients)>> = questions
        .par_iter()
        .map(|q| question_gradients(q, kb, encoder, model, with_encoder))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros(model, encoder, with_encoder);
    let mut loss = 0.0;
    let mut count = 0usize;
    for (l, g) in parts.into_iter().flatten() {
        loss += l;
        total.add(&g);
        count += 1;
    }
    if count == 0 {
        return Ok(None);
    }
    total.scale(1.0 / count as f64);
    total.check_finite()?;
    Ok(Some((loss / count as f64, total)))
}

/// Loss of a single question on its own forward pass.
pub fn question_loss(
    question: &Question,
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
) -> Result<f64> {
    let a = answer(question, kb, encoder, model)?;
    let scores: Vec<f64> = a.ranking.iter().map(|s| s.score).collect();
    let labels: Vec<bool> = a
        .ranking
        .iter()
        .map(|s| question.answer_ids.contains(&s.concept))
        .collect();
    bce_loss(&scores, &labels)
}

/// Mean loss and Hits@5 over a question set.
pub fn evaluate_split(
    questions: &[Question],
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
) -> Result<(f64, f64)> {
    let rows: Vec<(Option<f64>, f64)> = questions
        .par_iter()
        .map(|q| {
            let a = answer(q, kb, encoder, model)?;
            let scores: Vec<f64> = a.ranking.iter().map(|s| s.score).collect();
            let labels: Vec<bool> = a.ranking.iter().map(|s| q.answer_ids.contains(&s.concept)).collect();
            let loss = match bce_loss(&scores, &labels) {
                Ok(l) => Some(l),
                Err(Error::DegenerateNormalization) => None,
                Err(e) => return Err(e),
            };
            let ranked: Vec<ConceptId> = a.ranking.iter().map(|s| s.concept).collect();
            Ok((loss, hits_at_k(&ranked, &q.answer_ids, 5)))
        })
        .collect::<Result<_>>()?;
    let losses: Vec<f64> = rows.iter().filter_map(|r| r.0).collect();
    let loss = if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    let hits = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64
    };
    Ok((loss, hits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub hits_at_5: f64,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,split,loss,hits@5\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.4}\n", r.epoch, r.split, r.loss, r.hits_at_5));
    }
    out
}

/// Per-tensor optimizer state.
#[derive(Debug, Clone)]
struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, shapes: &[usize]) -> Self {
        OptimizerState {
            kind,
            lr,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: Vec<&mut Matrix>, grads: &Gradients) {
        self.t += 1;
        let grads: Vec<&Matrix> = grads.tensors().into_iter().map(|(_, g)| g).collect();
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let p = p.as_mut_slice();
            let g = g.as_slice();
            match self.kind {
                Optimizer::Sgd => axpy(-self.lr, g, p),
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.t);
                    let c2 = 1.0 - beta2.powi(self.t);
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Trainable tensors in the order of [`Gradients::tensors`].
fn parameters<'a>(encoder: &'a mut EncoderModel, model: &'a mut ReasonerModel, with_encoder: bool) -> Vec<&'a mut Matrix> {
    let mut out: Vec<&mut Matrix> = Vec::new();
    if with_encoder {
        out.push(encoder.table_mut());
    }
    let (layers, edge_types) = model.params_mut();
    for l in layers {
        out.push(&mut l.w_src);
        out.push(&mut l.w_dst);
    }
    out.push(edge_types);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Questions skipped because none of their concepts scored above zero.
    pub skipped: usize,
}

/// Trains the reasoner (and the embedding table when `train_encoder` is set)
/// on `train`, logging loss and Hits@5 for both splits before the first
/// epoch and after every epoch. On a non-finite loss or parameter the models
/// are restored to the last finite state and an error is returned.
pub fn train(
    kb: &mut Knowledge,
    encoder: &mut EncoderModel,
    model: &mut ReasonerModel,
    train_set: &[Question],
    held_out: &[Question],
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    for q in train_set {
        if q.answer_ids.is_empty() {
            return Err(Error::Config(format!("training question {} has no answers", q.id)));
        }
    }
    let with_encoder = config.train_encoder;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes: Vec<usize> = parameters(encoder, model, with_encoder)
        .iter()
        .map(|m| m.as_slice().len())
        .collect();
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, &shapes);

    let mut log = Vec::new();
    let record = |log: &mut Vec<LogRow>, epoch: usize, kb: &Knowledge, enc: &EncoderModel, m: &ReasonerModel| -> Result<f64> {
        let (loss, hits) = evaluate_split(train_set, kb, enc, m)?;
        log.push(LogRow {
            epoch,
            split: "train".into(),
            loss,
            hits_at_5: hits,
        });
        if !held_out.is_empty() {
            let (l, h) = evaluate_split(held_out, kb, enc, m)?;
            log.push(LogRow {
                epoch,
                split: "test".into(),
                loss: l,
                hits_at_5: h,
            });
        }
        Ok(loss)
    };
    let initial_loss = record(&mut log, 0, kb, encoder, model)?;
    let mut final_loss = initial_loss;
    let mut skipped = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let good = (encoder.clone(), model.clone());
        order.shuffle(&mut rng);
        let mut failed = false;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Question> = chunk.iter().map(|&i| &train_set[i]).collect();
            let result = match batch_gradients(&batch, kb, encoder, model, with_encoder) {
                Ok(r) => r,
                Err(Error::NonFiniteGradient(_)) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            let Some((loss, grads)) = result else {
                skipped += batch.len();
                continue;
            };
            if !loss.is_finite() {
                failed = true;
                break;
            }
            opt.step(parameters(encoder, model, with_encoder), &grads);
            if !model.is_finite() || !encoder.table().is_finite() {
                failed = true;
                break;
            }
            if with_encoder {
                kb.refresh(encoder);
            }
        }
        if !failed {
            let loss = record(&mut log, epoch, kb, encoder, model)?;
            failed = !loss.is_finite() && initial_loss.is_finite();
            final_loss = loss;
        }
        if failed {
            *encoder = good.0;
            *model = good.1;
            kb.refresh(encoder);
            return Err(Error::Diverged { epoch });
        }
    }
    Ok(TrainReport {
        log,
        initial_loss,
        final_loss,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Facts mentioning an answer concept of the question.
pub fn gold_facts(question: &Question, kb: &Knowledge) -> Vec<usize> {
    let corpus = kb.corpus();
    let mut rows = BTreeSet::new();
    for &c in &question.answer_ids {
        for &f in corpus.facts_with(c) {
            rows.insert(corpus.position(f).expect("indexed fact"));
        }
    }
    rows.into_iter().collect()
}

/// In-batch contrastive training of the embedding table: each question is
/// pulled towards one of its gold facts and pushed from the other
/// questions' gold facts, by softmax cross-entropy over inner products.
/// Returns the mean loss of each epoch.
pub fn train_retriever(
    kb: &mut Knowledge,
    encoder: &mut EncoderModel,
    questions: &[Question],
    config: &RetrieverConfig,
) -> Result<Vec<f64>> {
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) || config.epochs < 1 || config.batch_size < 1 {
        return Err(Error::Config("invalid retriever configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pairs: Vec<(usize, Vec<usize>)> = questions
        .iter()
        .enumerate()
        .map(|(i, q)| (i, gold_facts(q, kb)))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    let question_tokens: Vec<Vec<usize>> = questions.iter().map(|q| encoder.token_ids(&q.text)).collect();
    let d = encoder.dim();
    let mut opt = OptimizerState::new(Optimizer::default(), config.learning_rate, &[encoder.table().as_slice().len()]);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let picks: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&i| {
                    let (q, gold) = &pairs[i];
                    (*q, *gold.choose(&mut rng).expect("non-empty"))
                })
                .collect();
            let qv: Vec<Vec<f64>> = picks.iter().map(|&(q, _)| encoder.encode_ids(&question_tokens[q])).collect();
            let fv: Vec<Vec<f64>> = picks.iter().map(|&(_, f)| encoder.encode_ids(kb.fact_tokens(f))).collect();
            let mut dq = vec![vec![0.0; d]; picks.len()];
            let mut df = vec![vec![0.0; d]; picks.len()];
            let n = picks.len() as f64;
            for i in 0..picks.len() {
                let logits: Vec<f64> = fv.iter().map(|f| dot(&qv[i], f)).collect();
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                epoch_loss += (z.ln() + max - logits[i]) / n;
                for j in 0..picks.len() {
                    let p = (logits[j] - max).exp() / z;
                    let g = (p - if i == j { 1.0 } else { 0.0 }) / n;
                    axpy(g, &fv[j], &mut dq[i]);
                    axpy(g, &qv[i], &mut df[j]);
                }
            }
            let mut grad = Matrix::zeros(encoder.table().rows(), d);
            for (k, &(q, f)) in picks.iter().enumerate() {
                spread(&mut grad, &question_tokens[q], &dq[k]);
                spread(&mut grad, kb.fact_tokens(f), &df[k]);
            }
            if !grad.is_finite() {
                return Err(Error::NonFiniteGradient("encoder.embeddings".into()));
            }
            opt.step_single(encoder.table_mut(), &grad);
        }
        losses.push(epoch_loss / order.len().div_ceil(config.batch_size).max(1) as f64);
    }
    kb.refresh(encoder);
    Ok(losses)
}

fn spread(grad: &mut Matrix, ids: &[usize], g: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let w = 1.0 / ids.len() as f64;
    for &id in ids {
        axpy(w, g, grad.row_mut(id));
    }
}

impl OptimizerState {
    fn step_single(&mut self, param: &mut Matrix, grad: &Matrix) {
        let grads = Gradients {
            embeddings: None,
            w_src: Vec::new(),
            w_dst: Vec::new(),
            edge_types: grad.clone(),
        };
        self.step(vec![param], &grads);
    }
}
