use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, stack_time_major, unstack_sample, Architecture, Mode, ModelError, ModelHandle, Result};
use crate::autodiff::{Tape, Tensor};
use crate::encoding::{FeatureSchema, SequenceWindow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

struct Adam {
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(lr: f64, params: &[Tensor]) -> Self {
        Self {
            lr,
            step: 0,
            m: params.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi;
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi;
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Mean cross-entropy and accuracy of `model` on `windows` (eval mode).
pub fn evaluate(model: &ModelHandle, windows: &[SequenceWindow]) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let xs: Vec<&Tensor> = windows.iter().map(|w| &w.x).collect();
    let probs = model.predict_all(&xs, 256)?;
    let mut loss = 0.0;
    let mut hits = 0;
    for (p, w) in probs.iter().zip(windows) {
        loss -= p[w.label].max(f64::MIN_POSITIVE).ln();
        hits += usize::from(argmax(p) == w.label);
    }
    let n = windows.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Fraction of windows whose argmax prediction equals the label.
pub fn accuracy(model: &ModelHandle, windows: &[SequenceWindow]) -> Result<f64> {
    Ok(evaluate(model, windows)?.1)
}

/// Loss of one minibatch with its gradients.
#[derive(Clone, Debug)]
pub struct LossGradients {
    pub loss: f64,
    /// One entry per parameter tensor, in store order.
    pub params: Vec<Tensor>,
    /// Per window, `[l, D_in]`.
    pub inputs: Vec<Tensor>,
}

/// Mean cross-entropy of `batch` without gradients.
pub fn batch_loss(model: &ModelHandle, batch: &[&SequenceWindow], mode: Mode) -> Result<f64> {
    let xs: Vec<&Tensor> = batch.iter().map(|w| &w.x).collect();
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape);
    let input = tape.leaf(stack_time_major(&xs)?);
    let graph = model.graph(&mut tape, &vars, input, batch.len(), mode)?;
    let logp = tape.log_softmax(graph.logits);
    let lp = tape.value(logp).data();
    let total: f64 = batch.iter().enumerate().map(|(b, w)| lp[b * model.classes + w.label]).sum();
    Ok(-total / batch.len() as f64)
}

/// Mean cross-entropy of `batch` and its gradient with respect to every
/// parameter and every input entry.
pub fn loss_gradients(model: &ModelHandle, batch: &[&SequenceWindow], mode: Mode) -> Result<LossGradients> {
    let (loss, params, input) = gradients_inner(model, batch, mode, true)?;
    let input = input.expect("input gradient requested");
    let inputs = (0..batch.len()).map(|j| unstack_sample(&input, batch.len(), j)).collect();
    Ok(LossGradients {
        loss,
        params: params.into_iter().map(|g| g.expect("every parameter reaches the loss")).collect(),
        inputs,
    })
}

fn gradients_inner(
    model: &ModelHandle,
    batch: &[&SequenceWindow],
    mode: Mode,
    with_input: bool,
) -> Result<(f64, Vec<Option<Tensor>>, Option<Tensor>)> {
    let xs: Vec<&Tensor> = batch.iter().map(|w| &w.x).collect();
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape);
    let input = tape.leaf(stack_time_major(&xs)?);
    let graph = model.graph(&mut tape, &vars, input, batch.len(), mode)?;
    let logp = tape.log_softmax(graph.logits);
    let index = batch
        .iter()
        .enumerate()
        .map(|(b, w)| b * model.classes + w.label)
        .collect();
    let picked = tape.gather(logp, index, vec![batch.len()])?;
    let mean = tape.mean(picked, 0)?;
    let loss = tape.scale(mean, -1.0);
    let mut targets = vars.clone();
    if with_input {
        targets.push(input);
    }
    let mut grads = tape.backward(loss, &targets)?;
    let value = tape.value(loss).data()[0];
    let input_grad = if with_input { grads.take(input) } else { None };
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect(), input_grad))
}

fn check_labels(windows: &[SequenceWindow], classes: usize, width: usize) -> Result<()> {
    for w in windows {
        if w.label >= classes {
            return Err(ModelError::LabelOutOfRange {
                label: w.label,
                classes,
            });
        }
        if w.input_width() != width {
            return Err(ModelError::WidthMismatch {
                expected: width,
                found: w.input_width(),
            });
        }
    }
    Ok(())
}

/// Trains a fresh model with Adam, keeping the parameters with the lowest
/// validation loss. Training stops early after `patience` epochs without
/// improvement.
pub fn train(
    architecture: Architecture,
    schema: FeatureSchema,
    training: &[SequenceWindow],
    validation: &[SequenceWindow],
    cfg: &TrainConfig,
) -> Result<ModelHandle> {
    let first = training.first().ok_or(ModelError::EmptyDataset)?;
    if validation.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(ModelError::Config("batch size and learning rate must be positive".into()));
    }
    let mut model = ModelHandle::init(architecture, schema, first.task, cfg.seed)?;
    check_labels(training, model.classes, model.input_width())?;
    check_labels(validation, model.classes, model.input_width())?;
    let mut seen = vec![false; model.classes];
    training.iter().for_each(|w| seen[w.label] = true);
    for (c, _) in seen.iter().enumerate().filter(|(_, s)| !**s) {
        let msg = format!("class {c} ({}) absent from training data", first.task.class_name(c));
        log::warn!("{msg}");
        model.warnings.push(msg);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let mut adam = Adam::new(cfg.learning_rate, model.params.tensors_mut());
    let (train_loss, _) = evaluate(&model, training)?;
    let (val_loss, val_acc) = evaluate(&model, validation)?;
    model.history.push(EpochMetrics {
        epoch: 0,
        train_loss,
        validation_loss: val_loss,
        validation_accuracy: val_acc,
    });
    let mut best = (val_loss, model.params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..training.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SequenceWindow> = chunk.iter().map(|&i| &training[i]).collect();
            let mode = Mode::Train { mask_seed: rng.gen() };
            let (loss, grads, _) = gradients_inner(&model, &batch, mode, false)?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, seed: cfg.seed });
            }
            total += loss * batch.len() as f64;
            adam.update(model.params.tensors_mut(), &grads);
        }
        let (val_loss, val_acc) = evaluate(&model, validation)?;
        if !val_loss.is_finite() {
            return Err(ModelError::Diverged { epoch, seed: cfg.seed });
        }
        model.history.push(EpochMetrics {
            epoch,
            train_loss: total / training.len() as f64,
            validation_loss: val_loss,
            validation_accuracy: val_acc,
        });
        log::debug!("epoch {epoch}: train {:.4} val {val_loss:.4} acc {val_acc:.3}", total / training.len() as f64);
        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok(model)
}
