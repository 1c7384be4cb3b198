//! Mini-batch SGD with momentum for the proxy and target classifiers.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, Model};
use crate::rng;
use crate::tensor::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0,1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: Accuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<Accuracy>,
}

/// Accuracy with an explicit flag for the empty-dataset case, which is
/// reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub correct: usize,
    pub total: usize,
    pub empty: bool,
}

pub fn evaluate_accuracy(model: &Model, data: &Dataset) -> Result<Accuracy> {
    if data.dim() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if data.is_empty() {
        log::warn!("accuracy requested on an empty dataset; reporting 0");
        return Ok(Accuracy {
            value: 0.0,
            correct: 0,
            total: 0,
            empty: true,
        });
    }
    let correct = (0..data.len())
        .filter(|&i| argmax(&model.logits(data.input(i))) == data.label(i))
        .count();
    Ok(Accuracy {
        value: correct as f64 / data.len() as f64,
        correct,
        total: data.len(),
        empty: false,
    })
}

/// Trains a fresh model initialized from `cfg.seed`.
pub fn train(
    spec: &[LayerSpec],
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    let model = Model::init(spec, cfg.seed)?;
    train_from(model, data, cfg)
}

/// Continues training `model` in place of a fresh initialization.
pub fn train_from(
    mut model: Model,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if data.dim() != model.input_dim() {
        return Err(Error::arg(format!(
            "model expects {} inputs but data has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    if data.n_classes() > model.n_classes() {
        return Err(Error::arg(format!(
            "model has {} outputs but data has {} classes",
            model.n_classes(),
            data.n_classes()
        )));
    }

    let mut velocity: Vec<Vec<f64>> = model
        .layers()
        .iter()
        .map(|l| vec![0.0; l.spec().param_count()])
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::substream(cfg.seed, &[rng::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = velocity.iter().map(|v| vec![0.0; v.len()]).collect();
            for &i in batch {
                let lg = model.loss_grad_full(data.input(i), data.label(i), true);
                total += lg.value;
                for (acc, g) in grads.iter_mut().zip(&lg.grad_params) {
                    for (a, v) in acc.iter_mut().zip(&g.0) {
                        *a += v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, vel), grad) in model.layers_mut().iter_mut().zip(&mut velocity).zip(&grads)
            {
                let mut offset = 0;
                for block in layer.params_mut() {
                    for p in block.iter_mut() {
                        let v = &mut vel[offset];
                        *v = cfg.momentum * *v + grad[offset] * scale;
                        *p -= cfg.learning_rate * *v;
                        offset += 1;
                    }
                }
            }
        }
        let mean = if data.is_empty() {
            0.0
        } else {
            total / data.len() as f64
        };
        if !mean.is_finite() {
            return Err(Error::Consistency(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        epoch_losses.push(mean);
    }

    let train_accuracy = evaluate_accuracy(&model, data)?;
    Ok((
        model,
        TrainReport {
            epoch_losses,
            train_accuracy,
            eval_accuracy: None,
        },
    ))
}
