//! Mini-batch training loop.

use rand::seq::SliceRandom;

use super::layers::Mode;
use super::model::{Model, ModelConfig};
use super::{shape_err, AdamConfig, AdamState, Matrix, NnError};
use crate::rng;

const INIT_DOMAIN: u64 = 0x1A17;
const SHUFFLE_DOMAIN: u64 = 0x5AFF;

/// Row-aligned features and soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub gcc: Matrix,
    pub vis: Matrix,
    pub targets: Matrix,
}

impl TrainingSet {
    pub fn new(gcc: Matrix, vis: Matrix, targets: Matrix) -> Result<Self, NnError> {
        if gcc.rows() != vis.rows() || gcc.rows() != targets.rows() {
            return Err(shape_err(format!(
                "{} audio, {} visual, {} target rows",
                gcc.rows(),
                vis.rows(),
                targets.rows()
            )));
        }
        Ok(Self { gcc, vis, targets })
    }

    pub fn len(&self) -> usize {
        self.gcc.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Sample-weighted mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Initializes a model from `config.seed` and trains it.
pub fn train(model_config: ModelConfig, data: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome, NnError> {
    let model = Model::init(model_config, &mut rng::for_item(config.seed, INIT_DOMAIN, 0))?;
    train_model(model, data, config)
}

/// Trains an existing model in place of a fresh one.
pub fn train_model(mut model: Model, data: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if config.batch_size < 2 {
        return Err(NnError::BatchTooSmall(config.batch_size));
    }
    if data.len() < 2 {
        return Err(NnError::BatchTooSmall(data.len()));
    }
    let cfg = model.config();
    if data.gcc.cols() != cfg.gcc_dim || data.vis.cols() != cfg.vis_dim || data.targets.cols() != cfg.outputs {
        return Err(shape_err(format!(
            "data widths {}/{}/{} do not match the model",
            data.gcc.cols(),
            data.vis.cols(),
            data.targets.cols()
        )));
    }

    let mut adam = AdamState::new(config.adam, &model.param_sizes());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = rng::for_item(config.seed, SHUFFLE_DOMAIN, 0);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            // A one-sample tail cannot be batch-normalized; it is skipped.
            if idx.len() < 2 {
                continue;
            }
            let gcc = data.gcc.select_rows(idx);
            let vis = data.vis.select_rows(idx);
            let target = data.targets.select_rows(idx);
            let (loss, grads, pass) = match model.loss_and_grads(&gcc, &vis, &target, Mode::Train) {
                Err(NnError::NonFinite(_)) => return Err(NnError::NaNLoss { epoch, batch }),
                other => other?,
            };
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NnError::NaNLoss { epoch, batch });
            }
            adam.step(&mut model.params_mut(), &grads)?;
            model.update_running_stats(&pass);
            if !model.is_finite() {
                return Err(NnError::NaNLoss { epoch, batch });
            }
            total += loss * idx.len() as f64;
            seen += idx.len();
        }
        history.push(total / seen as f64);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}
