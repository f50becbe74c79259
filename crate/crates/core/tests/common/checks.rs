//! One randomized instance per call for each property; `Err` carries the
//! first disagreement found.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphqa::corpus::{ConceptId, FactId};
use graphqa::encoder::{mips_search, softplus, EncoderModel, FactIndex};
use graphqa::graph::NodeId;
use graphqa::harness::metrics::recall_at_k;
use graphqa::knowledge::Knowledge;
use graphqa::reasoner::{
    aggregate_concepts, answer, answer_traced, attention_scores, entity_link, expand, propagate_plausibility,
    prune, InferenceGraph, ReasonerConfig, ReasonerModel,
};
use graphqa::tensor::Matrix;
use graphqa::training::{bce_loss, loss_with_grad};

use super::oracle;
use super::{random_corpus, random_question, rel_err};

pub const ORACLE_TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn close(what: &str, a: f64, b: f64) -> Result<(), String> {
    if a == b || rel_err(a, b) <= ORACLE_TOL {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, steps: usize) -> ReasonerModel {
    let config = ReasonerConfig {
        steps,
        ..ReasonerConfig::default()
    };
    ReasonerModel::new(config, d, rng.gen()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn attention(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let d = rng.gen_range(2..=6);
    let n1 = rng.gen_range(2..=20);
    let g = oracle::random_graph(&mut rng, n1, d);
    let model = random_model(&mut rng, d, 2);
    let q = random_vec(&mut rng, d, 1.0);
    let layer = rng.gen_range(1..=2);
    let got = attention_scores(&g, &q, &model, layer).map_err(|e| e.to_string())?;
    let want = oracle::attention(&g, &q, &model, layer);
    if got.edges.len() != want.len() {
        return Err("edge sets differ".into());
    }
    for (e, a) in got.to_map() {
        close(&format!("alpha {e:?}"), a, want[&e])?;
    }
    Ok(())
}

pub fn plausibility(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let d = 3;
    let n1 = rng.gen_range(2..=20);
    let mut g = oracle::random_graph(&mut rng, n1, d);
    let model = random_model(&mut rng, d, 1);
    let q = random_vec(&mut rng, d, 1.0);
    let prior: BTreeMap<NodeId, f64> = g.node_ids().map(|n| (n, softplus(rng.gen_range(-3.0..3.0)))).collect();
    let att = attention_scores(&g, &q, &model, 1).map_err(|e| e.to_string())?;
    let want = oracle::plausibility(&g, &att.to_map(), &|n| prior[&n]);
    propagate_plausibility(&mut g, &att, |n| prior[&n]);
    for (n, s) in want {
        close(&format!("plausibility of {n}"), g.plaus(n), s)?;
    }
    Ok(())
}

pub fn aggregate(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n1 = rng.gen_range(2..=8);
    let n2 = rng.gen_range(1..=6);
    let corpus = random_corpus(&mut rng, n1, n2);
    let joint = graphqa::graph::JointGraph::build(&corpus).map_err(|e| e.to_string())?;
    let nodes: BTreeSet<NodeId> = (0..joint.len() as u32)
        .map(NodeId)
        .filter(|_| rng.gen_bool(0.6))
        .take(20)
        .collect();
    let mut g = InferenceGraph::new(nodes.clone());
    for n in nodes {
        // Coarse values so that ties occur.
        g.set_plaus(n, rng.gen_range(0..6) as f64 * 0.5);
    }
    let got = aggregate_concepts(&g, &joint);
    let want = oracle::aggregate(&g, &joint);
    if got.len() != want.len() {
        return Err(format!("{} concepts vs {}", got.len(), want.len()));
    }
    for (s, (c, score)) in got.iter().zip(&want) {
        if s.concept != *c {
            return Err(format!("order differs: {} vs {c}", s.concept));
        }
        close(&format!("score of {c}"), s.score, *score)?;
    }
    Ok(())
}

pub fn pruning(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let d = 3;
    let n1 = rng.gen_range(2..=20);
    let mut g = oracle::random_graph(&mut rng, n1, d);
    let model = random_model(&mut rng, d, 1);
    let q = random_vec(&mut rng, d, 1.0);
    let att = attention_scores(&g, &q, &model, 1).map_err(|e| e.to_string())?;
    let prev: BTreeMap<NodeId, f64> = g.plaus_map().clone();
    let k = rng.gen_range(1..=g.edges().len() + 1);
    let (edges, nodes) = oracle::prune(&g, &att.to_map(), &prev, k);
    prune(&mut g, &att, &prev, k).map_err(|e| e.to_string())?;
    if *g.edges() != edges {
        return Err(format!("kept edges differ for k = {k}"));
    }
    if g.node_ids().collect::<BTreeSet<_>>() != nodes {
        return Err(format!("kept nodes differ for k = {k}"));
    }
    Ok(())
}

pub fn mips(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let d = rng.gen_range(1..=8);
    let n = rng.gen_range(1..=1000);
    let mut data: Vec<f64> = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        // A coarse grid makes tied scores common.
        data.push(if rng.gen_bool(0.5) { rng.gen_range(-2..=2) as f64 } else { rng.gen_range(-1.0..1.0) });
    }
    let mut ids: Vec<FactId> = (0..n as u32).map(FactId).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
    let index = FactIndex::from_parts(ids, Matrix::from_vec(n, d, data));
    let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-2..=2) as f64).collect();
    let top = rng.gen_range(1..=n + 5);
    let got = mips_search(&q, &index, top);
    let want = oracle::mips(&q, &index, top);
    if got.len() != want.len() {
        return Err(format!("{} results vs {}", got.len(), want.len()));
    }
    for ((f, s), (g, t)) in got.iter().zip(&want) {
        if f != g {
            return Err(format!("rank order differs: fact {f} ({s}) vs {g} ({t})"));
        }
        close(&format!("score of fact {f}"), *s, *t)?;
    }
    Ok(())
}

pub fn recall(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n = rng.gen_range(1..=60u32);
    let mut ranked: Vec<ConceptId> = (0..n).map(ConceptId).collect();
    rand::seq::SliceRandom::shuffle(ranked.as_mut_slice(), &mut rng);
    let truth: BTreeSet<ConceptId> = (0..rng.gen_range(1..=8))
        .map(|_| ConceptId(rng.gen_range(0..n + 10)))
        .collect();
    for k in [1, 5, 10, 50, 100] {
        close(
            &format!("recall@{k}"),
            recall_at_k(&ranked, &truth, k),
            oracle::recall(&ranked, &truth, k),
        )?;
    }
    Ok(())
}

/// Per-destination α sums and non-negative plausibility, on a synthetic
/// graph and on a full answer over a random corpus.
pub fn softmax(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let d = rng.gen_range(2..=6);
    let n1 = rng.gen_range(2..=20);
    let mut g = oracle::random_graph(&mut rng, n1, d);
    let model = random_model(&mut rng, d, 2);
    let q = random_vec(&mut rng, d, 3.0);
    let att = attention_scores(&g, &q, &model, 1).map_err(|e| e.to_string())?;
    check_sums(&att.to_map())?;
    let prior: BTreeMap<NodeId, f64> = g.node_ids().map(|n| (n, softplus(rng.gen_range(-5.0..5.0)))).collect();
    propagate_plausibility(&mut g, &att, |n| prior[&n]);
    check_nonnegative(g.plaus_map())?;

    let n1 = rng.gen_range(3..=10);
    let n2 = rng.gen_range(1..=8);
    let corpus = random_corpus(&mut rng, n1, n2);
    let question = random_question(&mut rng, &corpus, 0);
    let enc_seed = rng.gen();
    let enc = EncoderModel::for_corpus(&corpus, std::slice::from_ref(&question), d, enc_seed);
    let kb = Knowledge::new(corpus, &enc).map_err(|e| e.to_string())?;
    let config = ReasonerConfig {
        steps: rng.gen_range(1..=3),
        k_follow: rng.gen_range(0..=3),
        // The answer keeps only the attention of surviving edges, which is
        // no longer normalized once in-edges are pruned.
        k_prune: None,
        ..ReasonerConfig::default()
    };
    let model = ReasonerModel::new(config, d, rng.gen()).unwrap();
    let a = answer(&question, &kb, &enc, &model).map_err(|e| e.to_string())?;
    check_sums(&a.attention.to_map())?;
    check_nonnegative(a.graph.plaus_map())
}

fn check_sums(alpha: &BTreeMap<graphqa::graph::Edge, f64>) -> Result<(), String> {
    let mut sums: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (e, a) in alpha {
        *sums.entry(e.dst).or_default() += a;
    }
    for (v, s) in sums {
        if (s - 1.0).abs() > 1e-6 {
            return Err(format!("in-edge attention of {v} sums to {s}"));
        }
    }
    Ok(())
}

fn check_nonnegative(plaus: &BTreeMap<NodeId, f64>) -> Result<(), String> {
    match plaus.iter().find(|(_, s)| !(**s >= 0.0)) {
        Some((n, s)) => Err(format!("plausibility of {n} is {s}")),
        None => Ok(()),
    }
}

/// Node sets after each expansion, and after a full unpruned answer without
/// skip connections, equal breadth-first balls around the seeds.
pub fn expansion(seed: u64) -> Result<(), String> {
    let mut rng = rng(seed);
    let n1 = rng.gen_range(3..=12);
    let n2 = rng.gen_range(1..=10);
    let corpus = random_corpus(&mut rng, n1, n2);
    let question = random_question(&mut rng, &corpus, 0);
    let d = 3;
    let enc_seed = rng.gen();
    let enc = EncoderModel::for_corpus(&corpus, std::slice::from_ref(&question), d, enc_seed);
    let kb = Knowledge::new(corpus, &enc).map_err(|e| e.to_string())?;
    let joint = kb.joint();
    let seeds = entity_link(&question, joint);
    let mut g = InferenceGraph::new(seeds.clone());
    for l in 1..=4 {
        expand(&mut g, joint);
        let got: BTreeSet<NodeId> = g.node_ids().collect();
        if got != oracle::bfs_ball(joint, &seeds, l) {
            return Err(format!("after {l} expansions the node set is not the {l}-hop ball"));
        }
    }
    if seeds.is_empty() {
        return Ok(());
    }
    let steps = rng.gen_range(1..=3);
    let config = ReasonerConfig {
        steps,
        k_follow: 0,
        k_prune: None,
        ..ReasonerConfig::default()
    };
    let model = ReasonerModel::new(config, d, rng.gen()).unwrap();
    let a = answer(&question, &kb, &enc, &model).map_err(|e| e.to_string())?;
    if a.graph.node_ids().collect::<BTreeSet<_>>() != oracle::bfs_ball(joint, &seeds, steps) {
        return Err(format!("answer graph after {steps} steps is not the {steps}-hop ball"));
    }
    Ok(())
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter entry, for one random question with `steps` layers.
pub fn gradient(seed: u64, steps: usize) -> Result<f64, String> {
    const H: f64 = 1e-4;
    let mut rng = rng(seed);
    let d = 4;
    let (kb, enc, model, question) = loop {
        let n1 = rng.gen_range(3..=6);
        let n2 = rng.gen_range(2..=5);
        let corpus = random_corpus(&mut rng, n1, n2);
        let question = random_question(&mut rng, &corpus, 0);
        let enc_seed = rng.gen();
        let mut enc = EncoderModel::for_corpus(&corpus, std::slice::from_ref(&question), d, enc_seed);
        // Larger rows than the default initialization keep the scores away
        // from the flat region where every gradient is tiny.
        for x in enc.table_mut().as_mut_slice() {
            *x *= 5.0;
        }
        let kb = Knowledge::new(corpus, &enc).map_err(|e| e.to_string())?;
        let config = ReasonerConfig {
            steps,
            k_follow: rng.gen_range(0..=2),
            k_prune: Some(rng.gen_range(4..=12)),
            ..ReasonerConfig::default()
        };
        let mut model = ReasonerModel::new(config, d, rng.gen()).unwrap();
        for x in model.edge_types_mut().as_mut_slice() {
            *x *= 5.0;
        }
        let a = answer(&question, &kb, &enc, &model).map_err(|e| e.to_string())?;
        let has_answer = a.ranking.iter().any(|s| question.answer_ids.contains(&s.concept));
        let mixed = a.ranking.len() >= 2 && has_answer;
        if mixed {
            break (kb, enc, model, question);
        }
    };
    let (_, trace) = answer_traced(&question, &kb, &enc, &model).map_err(|e| e.to_string())?;
    let labels: Vec<bool> = trace.concepts().map(|c| question.answer_ids.contains(&c)).collect();
    let loss = |enc: &EncoderModel, model: &ReasonerModel| -> f64 {
        let fwd = trace.forward(&kb, enc, model).unwrap();
        bce_loss(&fwd.scores, &labels).unwrap()
    };
    let fwd = trace.forward(&kb, &enc, &model).map_err(|e| e.to_string())?;
    let report = loss_with_grad(&fwd.scores, &labels).map_err(|e| e.to_string())?;
    let grads = trace.backward(&kb, &enc, &model, &fwd, &report.d_scores, true);

    let mut worst: f64 = 0.0;
    for (name, g) in grads.tensors() {
        for i in 0..g.as_slice().len() {
            let at = |delta: f64| {
                let mut e = enc.clone();
                let mut m = model.clone();
                let slot = tensor_mut(&name, &mut e, &mut m);
                slot.as_mut_slice()[i] += delta;
                loss(&e, &m)
            };
            let numeric = (at(H) - at(-H)) / (2.0 * H);
            let analytic = g.as_slice()[i];
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            if err > worst {
                worst = err;
            }
            if !(err <= 1e-4) {
                return Err(format!("{name}[{i}]: analytic {analytic} vs numeric {numeric}"));
            }
        }
    }
    Ok(worst)
}

fn tensor_mut<'a>(name: &str, enc: &'a mut EncoderModel, model: &'a mut ReasonerModel) -> &'a mut Matrix {
    if name == "encoder.embeddings" {
        return enc.table_mut();
    }
    if name == "reasoner.edge_types" {
        return model.edge_types_mut();
    }
    let rest = name.strip_prefix("reasoner.layer").expect("known tensor name");
    let (l, which) = rest.split_once('.').unwrap();
    let layer = &mut model.layers_mut()[l.parse::<usize>().unwrap() - 1];
    match which {
        "w_src" => &mut layer.w_src,
        _ => &mut layer.w_dst,
    }
}

/// Generates a small dataset twice, trains briefly, then runs `infer` and
/// `eval` twice each; every pair of outputs must match byte for byte.
pub fn determinism(dir: &std::path::Path) -> Result<(), String> {
    use super::graphqa_ok;
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let synth = ["--n-facts", "80", "--n-concepts", "80", "--n-questions", "12", "--seed", "7"];
    for run in ["a", "b"] {
        let mut args = vec!["synth", "--out"];
        let out = p(run);
        args.push(&out);
        args.extend(synth);
        graphqa_ok(&args)?;
    }
    for f in ["vocab.txt", "facts.jsonl", "questions.jsonl", "train.jsonl", "test.jsonl"] {
        if read(&dir.join("a").join(f))? != read(&dir.join("b").join(f))? {
            return Err(format!("synth output {f} differs between runs"));
        }
    }
    let (facts, vocab) = (p("a/facts.jsonl"), p("a/vocab.txt"));
    let corpus = ["--facts", facts.as_str(), "--vocab", vocab.as_str()];
    let (train, model) = (p("a/train.jsonl"), p("model.json"));
    let mut args = vec!["train-reasoner", "--questions", &train, "--out", &model, "--epochs", "2", "--seed", "3"];
    args.extend(corpus);
    graphqa_ok(&args)?;

    let questions = p("a/questions.jsonl");
    for run in ["1", "2"] {
        let (rank, dot, report, csv) = (
            p(&format!("rank{run}.json")),
            p(&format!("why{run}.dot")),
            p(&format!("eval{run}.json")),
            p(&format!("eval{run}.csv")),
        );
        let mut infer = vec![
            "infer", "--model", &model, "--questions", &questions, "--id", "4", "--out", &rank, "--dot", &dot,
        ];
        infer.extend(corpus);
        graphqa_ok(&infer)?;
        let mut eval = vec!["eval", "--model", &model, "--questions", &questions, "--out", &report, "--csv", &csv];
        eval.extend(corpus);
        graphqa_ok(&eval)?;
    }
    for (a, b) in [
        ("rank1.json", "rank2.json"),
        ("why1.dot", "why2.dot"),
        ("why1.json", "why2.json"),
        ("eval1.json", "eval2.json"),
        ("eval1.csv", "eval2.csv"),
    ] {
        if read(&dir.join(a))? != read(&dir.join(b))? {
            return Err(format!("{a} and {b} differ"));
        }
    }
    Ok(())
}
