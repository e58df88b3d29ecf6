//! The trained toy network together with its evaluation set.

use serde::{Deserialize, Serialize};

use axnorm::network::{accuracy, forward_against, patterned_images, train_toy, Dataset, TrainConfig, ToyModel};
use axnorm::noise::NoisePlan;
use axnorm::{Error, MultiplierModel, RealMatrix, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub dataset_seed: u64,
    pub dataset_size: usize,
    pub train_size: usize,
    /// Held-out items used by sweeps and rankings.
    pub eval_size: usize,
    pub train: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dataset_seed: 11,
            dataset_size: 2560,
            train_size: 2048,
            eval_size: 256,
            train: TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        }
    }
}

/// Model, evaluation data and the cached exact forward trace.
pub struct ToyContext {
    pub model: ToyModel,
    pub eval: Dataset,
    exact: Vec<RealMatrix>,
    pub baseline_accuracy: f64,
}

/// One injected evaluation of the toy model.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub frob_sq: f64,
    pub per_layer_frob_sq: Vec<f64>,
    pub accuracy: f64,
}

impl ToyContext {
    /// Fails with a precondition error when the exact model does not reach
    /// `min_accuracy` on `eval` (an untrained or broken model).
    pub fn new(model: ToyModel, eval: Dataset, min_accuracy: f64) -> Result<Self> {
        if eval.is_empty() {
            return Err(Error::Precondition("evaluation set is empty".into()));
        }
        let exact = model.exact_trace(&eval.inputs)?;
        let baseline_accuracy = accuracy(exact.last().expect("at least one layer"), &eval.labels);
        if baseline_accuracy < min_accuracy {
            return Err(Error::Precondition(format!(
                "model reaches only {baseline_accuracy:.4} exact accuracy (need {min_accuracy}); is it trained?"
            )));
        }
        Ok(ToyContext {
            model,
            eval,
            exact,
            baseline_accuracy,
        })
    }

    /// Generates the dataset, trains, and holds out `eval_size` items.
    pub fn train(cfg: &ToyConfig) -> Result<Self> {
        let (model, eval) = train_model(cfg)?;
        ToyContext::new(model, eval, cfg.train.min_accuracy)
    }

    /// Loads a saved model and regenerates the evaluation split.
    pub fn load(dir: &std::path::Path, cfg: &ToyConfig) -> Result<Self> {
        let model = ToyModel::load(dir)?;
        ToyContext::new(model, eval_split(cfg)?, cfg.train.min_accuracy)
    }

    pub fn measure(&self, multiplier: &MultiplierModel, plan: NoisePlan) -> Result<Measurement> {
        let out = forward_against(&self.model, &self.eval.inputs, &self.exact, multiplier, plan)?;
        Ok(Measurement {
            frob_sq: out.per_layer_frob_sq.iter().sum(),
            accuracy: accuracy(&out.logits, &self.eval.labels),
            per_layer_frob_sq: out.per_layer_frob_sq,
        })
    }

    /// The descriptor with its batch set to the evaluation-set size.
    pub fn eval_network(&self) -> axnorm::network::NetworkDescriptor {
        self.model.descriptor().with_batch(self.eval.len())
    }
}

fn eval_split(cfg: &ToyConfig) -> Result<Dataset> {
    let split = patterned_images(cfg.dataset_size, cfg.dataset_seed)?.split_at(cfg.train_size)?;
    if cfg.eval_size == 0 || cfg.eval_size > split.test.len() {
        return Err(Error::Domain(format!(
            "eval_size must be in 1..={}, got {}",
            split.test.len(),
            cfg.eval_size
        )));
    }
    Ok(split.test.head(cfg.eval_size))
}

/// Trains the toy CNN described by `cfg`; returns the model and eval split.
pub fn train_model(cfg: &ToyConfig) -> Result<(ToyModel, Dataset)> {
    let data = patterned_images(cfg.dataset_size, cfg.dataset_seed)?.split_at(cfg.train_size)?;
    let report = train_toy(&axnorm::network::NetworkDescriptor::toy_cnn(1), &data, &cfg.train)?;
    Ok((report.model, eval_split(cfg)?))
}
