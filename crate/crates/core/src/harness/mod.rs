//! Evaluation, configuration and synthetic data around the reasoner.

pub mod config;
pub mod metrics;
pub mod synth;

use rayon::prelude::*;

use crate::corpus::{ConceptId, Question};
use crate::encoder::EncoderModel;
use crate::error::Result;
use crate::knowledge::Knowledge;
use crate::reasoner::{answer, ReasonerModel};
use crate::training::{train, train_retriever, TrainReport};

pub use config::RunConfig;
pub use metrics::{hits_at_k, recall_at_k, EvalReport, DEFAULT_KS};
pub use synth::{generate_synthetic, SynthDataset, SynthSpec};

/// Answers every question (in parallel) and scores the rankings.
pub fn evaluate(
    kb: &Knowledge,
    encoder: &EncoderModel,
    model: &ReasonerModel,
    questions: &[Question],
    ks: &[usize],
) -> Result<EvalReport> {
    let items: Vec<(u32, Vec<ConceptId>, _)> = questions
        .par_iter()
        .map(|q| {
            let a = answer(q, kb, encoder, model)?;
            Ok((q.id, a.ranking.iter().map(|s| s.concept).collect(), q.answer_ids.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::new(&items, ks))
}

/// Retriever pretraining (when `retriever_epochs > 0`) followed by reasoner
/// training.
pub fn train_all(
    kb: &mut Knowledge,
    encoder: &mut EncoderModel,
    model: &mut ReasonerModel,
    train_set: &[Question],
    held_out: &[Question],
    config: &RunConfig,
) -> Result<(Vec<f64>, TrainReport)> {
    config.validate()?;
    let retriever = if config.retriever_epochs > 0 {
        train_retriever(kb, encoder, train_set, &config.retriever())?
    } else {
        Vec::new()
    };
    let report = train(kb, encoder, model, train_set, held_out, &config.training())?;
    Ok((retriever, report))
}
