use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use graphqa::checkpoint;
use graphqa::corpus::{load_corpus, load_questions, tag_concepts, write_file, CorpusIndex, Question};
use graphqa::encoder::EncoderModel;
use graphqa::graph::JointGraph;
use graphqa::harness::{evaluate, generate_synthetic, RunConfig, SynthSpec, DEFAULT_KS};
use graphqa::knowledge::Knowledge;
use graphqa::reasoner::{answer, Explanation, ReasonerModel};
use graphqa::training::{log_to_csv, train, train_retriever};
use graphqa::{Error, Result};

#[derive(Parser)]
#[command(name = "graphqa", version, about = "Answer open-ended questions by reasoning over a fact graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the joint graph of a corpus and write it as JSON.
    BuildGraph {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the embedding table for fact retrieval.
    TrainRetriever {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the reasoner, optionally starting from a saved model.
    TrainReasoner {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        questions: PathBuf,
        /// Held-out questions logged alongside the training split.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Answer one question; writes the ranking and its explanation.
    Infer {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Question text; concepts are tagged against the vocabulary.
        #[arg(long, conflicts_with_all = ["questions", "id"])]
        question: Option<String>,
        #[arg(long, requires = "id")]
        questions: Option<PathBuf>,
        #[arg(long)]
        id: Option<u32>,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Ranked concepts as JSON; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Explanation graph; a JSON twin is written next to it.
        #[arg(long)]
        dot: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a question set with Hits@K and Recall@K.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-question CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Generate a synthetic multi-hop dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        n_facts: usize,
        #[arg(long, default_value_t = 500)]
        n_concepts: usize,
        #[arg(long, default_value_t = 2)]
        chain_length: usize,
        #[arg(long, default_value_t = 100)]
        n_questions: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    facts: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// Saved model; a freshly initialized one is used when absent.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "steps")]
    steps: Option<usize>,
    #[arg(long)]
    k_follow: Option<usize>,
    #[arg(long, conflicts_with = "no_prune")]
    k_prune: Option<usize>,
    #[arg(long)]
    no_prune: bool,
    #[arg(long)]
    top_n_retrieval: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_encoder: Option<bool>,
    #[arg(long)]
    retriever_epochs: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(seed => seed, d => d, steps => steps, k_follow => k_follow, top_n_retrieval => top_n_retrieval,
             lr => lr, epochs => epochs, batch_size => batch_size, train_encoder => train_encoder,
             retriever_epochs => retriever_epochs);
        if let Some(k) = self.k_prune {
            c.k_prune = Some(k);
        }
        if self.no_prune {
            c.k_prune = None;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load(corpus: &CorpusArgs) -> Result<CorpusIndex> {
    load_corpus(&corpus.facts, &corpus.vocab)
}

/// Restores a saved model or initializes a new one from the configuration;
/// hyperparameters that do not change shapes come from the configuration.
fn models(
    path: Option<&Path>,
    corpus: &CorpusIndex,
    questions: &[Question],
    run: &RunConfig,
) -> Result<(EncoderModel, ReasonerModel)> {
    let fresh_reasoner = |d| ReasonerModel::new(run.reasoner(), d, run.seed.wrapping_add(1));
    let Some(path) = path else {
        let enc = EncoderModel::for_corpus(corpus, questions, run.d, run.seed);
        let model = fresh_reasoner(run.d)?;
        return Ok((enc, model));
    };
    let ck = checkpoint::load(path)?;
    let enc = ck
        .encoder
        .ok_or_else(|| Error::Checkpoint(format!("{} has no encoder", path.display())))?;
    let model = match ck.reasoner {
        Some(mut m) => {
            if m.config().steps != run.steps {
                return Err(Error::Config(format!(
                    "model was trained with L={} but L={} was requested",
                    m.config().steps,
                    run.steps
                )));
            }
            let cfg = m.config_mut();
            cfg.k_follow = run.k_follow;
            cfg.k_prune = run.k_prune;
            cfg.top_n_retrieval = run.top_n_retrieval;
            m
        }
        None => fresh_reasoner(enc.dim())?,
    };
    Ok((enc, model))
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph { corpus, out } => {
            let corpus = load(&corpus)?;
            let joint = JointGraph::build(&corpus)?;
            write_file(&out, &json_line(&joint.to_export())?)
        }
        Command::TrainRetriever {
            corpus,
            questions,
            out,
            run,
        } => {
            let run = run.resolve()?;
            let corpus = load(&corpus)?;
            let questions = load_questions(&questions, corpus.vocab())?;
            let mut enc = EncoderModel::for_corpus(&corpus, &questions, run.d, run.seed);
            let mut kb = Knowledge::new(corpus, &enc)?;
            let mut cfg = run.retriever();
            cfg.epochs = cfg.epochs.max(1);
            let losses = train_retriever(&mut kb, &mut enc, &questions, &cfg)?;
            for (i, l) in losses.iter().enumerate() {
                eprintln!("epoch {}: contrastive loss {l:.6}", i + 1);
            }
            checkpoint::save(&out, &enc, None)
        }
        Command::TrainReasoner {
            corpus,
            questions,
            test,
            init,
            out,
            log,
            run,
        } => {
            let run = run.resolve()?;
            let corpus = load(&corpus)?;
            let train_set = load_questions(&questions, corpus.vocab())?;
            let held_out = match &test {
                Some(p) => load_questions(p, corpus.vocab())?,
                None => Vec::new(),
            };
            let all: Vec<Question> = train_set.iter().chain(&held_out).cloned().collect();
            let (mut enc, mut model) = models(init.as_deref(), &corpus, &all, &run)?;
            let mut kb = Knowledge::new(corpus, &enc)?;
            if init.is_none() && run.retriever_epochs > 0 {
                train_retriever(&mut kb, &mut enc, &train_set, &run.retriever())?;
            }
            let report = train(&mut kb, &mut enc, &mut model, &train_set, &held_out, &run.training())?;
            for r in &report.log {
                eprintln!("epoch {} {}: loss {:.6} hits@5 {:.4}", r.epoch, r.split, r.loss, r.hits_at_5);
            }
            if let Some(p) = &log {
                write_file(p, &log_to_csv(&report.log))?;
            }
            checkpoint::save(&out, &enc, Some(&model))
        }
        Command::Infer {
            corpus,
            model,
            question,
            questions,
            id,
            top,
            out,
            dot,
            run,
        } => {
            let run = run.resolve()?;
            let corpus = load(&corpus)?;
            let q = match (question, questions, id) {
                (Some(text), _, _) => Question {
                    id: 0,
                    concept_ids: tag_concepts(&text, corpus.vocab()),
                    text,
                    answer_ids: Default::default(),
                },
                (None, Some(path), Some(id)) => load_questions(&path, corpus.vocab())?
                    .into_iter()
                    .find(|q| q.id == id)
                    .ok_or_else(|| Error::Config(format!("no question with id {id} in {}", path.display())))?,
                _ => return Err(Error::Config("pass --question, or --questions with --id".into())),
            };
            let (enc, reasoner) = models(model.model.as_deref(), &corpus, std::slice::from_ref(&q), &run)?;
            let kb = Knowledge::new(corpus, &enc)?;
            let a = answer(&q, &kb, &enc, &reasoner)?;
            let ex = Explanation::new(q.id, &a, kb.joint(), top);
            let ranked: Vec<serde_json::Value> = ex
                .ranking
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "concept_id": s.concept,
                        "concept": kb.corpus().vocab().surface(s.concept),
                        "score": s.score,
                    })
                })
                .collect();
            let body = json_line(&serde_json::json!({
                "question": q.id,
                "text": q.text,
                "linked": a.linked,
                "ranking": ranked,
            }))?;
            match &out {
                Some(p) => write_file(p, &body)?,
                None => print!("{body}"),
            }
            if let Some(p) = &dot {
                write_file(p, &ex.to_dot())?;
                write_file(&p.with_extension("json"), &json_line(&ex)?)?;
            }
            Ok(())
        }
        Command::Eval {
            corpus,
            model,
            questions,
            out,
            csv,
            ks,
            run,
        } => {
            let run = run.resolve()?;
            if ks.contains(&0) {
                return Err(Error::Config("every K must be at least 1".into()));
            }
            let corpus = load(&corpus)?;
            let questions = load_questions(&questions, corpus.vocab())?;
            let (enc, reasoner) = models(model.model.as_deref(), &corpus, &questions, &run)?;
            let kb = Knowledge::new(corpus, &enc)?;
            let report = evaluate(&kb, &enc, &reasoner, &questions, &ks)?;
            write_file(&out, &report.to_json())?;
            if let Some(p) = &csv {
                write_file(p, &report.to_csv())?;
            }
            Ok(())
        }
        Command::Synth {
            out,
            n_facts,
            n_concepts,
            chain_length,
            n_questions,
            test_fraction,
            seed,
        } => {
            let spec = SynthSpec {
                n_facts,
                n_concepts,
                chain_length,
                n_questions,
                seed,
                test_fraction,
                ..SynthSpec::default()
            };
            generate_synthetic(&spec)?.write(&out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
