//! Run configuration shared by the command-line tools.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::DEFAULT_DIM;
use crate::error::{Error, Result};
use crate::reasoner::ReasonerConfig;
use crate::training::{Optimizer, RetrieverConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub steps: usize,
    #[serde(rename = "K_follow")]
    pub k_follow: usize,
    /// `null` disables pruning.
    #[serde(rename = "K_prune")]
    pub k_prune: Option<usize>,
    pub top_n_retrieval: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub train_encoder: bool,
    /// Contrastive encoder pre-training before the reasoner; 0 skips it.
    pub retriever_epochs: usize,
    pub retriever_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = ReasonerConfig::default();
        let t = TrainConfig::default();
        let p = RetrieverConfig::default();
        RunConfig {
            d: DEFAULT_DIM,
            steps: r.steps,
            k_follow: r.k_follow,
            k_prune: r.k_prune,
            top_n_retrieval: r.top_n_retrieval,
            lr: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            train_encoder: t.train_encoder,
            retriever_epochs: 0,
            retriever_lr: p.learning_rate,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn reasoner(&self) -> ReasonerConfig {
        ReasonerConfig {
            steps: self.steps,
            k_follow: self.k_follow,
            k_prune: self.k_prune,
            top_n_retrieval: self.top_n_retrieval,
            ..ReasonerConfig::default()
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: Optimizer::default(),
            train_encoder: self.train_encoder,
        }
    }

    pub fn retriever(&self) -> RetrieverConfig {
        RetrieverConfig {
            learning_rate: self.retriever_lr,
            epochs: self.retriever_epochs,
            batch_size: self.batch_size.max(2),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::Config("d must be positive".into()));
        }
        self.reasoner().validate()?;
        self.training().validate()
    }
}
