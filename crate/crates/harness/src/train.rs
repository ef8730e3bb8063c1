//! Sequential (class-incremental) training with a frozen previous model
//! supplying the state regularizer.

use std::path::Path;

use obsgrass::LossConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::model::{masked_cross_entropy, Model, ModelConfig, StateGrad};
use crate::regularizer::regularizer_with_gradient;
use crate::stream::{AccessRecord, InstrumentedStream, Phase, Split, SplitKind, StreamConfig, TaskStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cosine decay of the step size over each task's steps.
    pub cosine_decay: bool,
    /// Heavy-ball momentum; zero gives plain gradient descent.
    pub momentum: f64,
    /// Rescale the minibatch gradient to at most this Euclidean norm.
    pub max_grad_norm: Option<f64>,
    /// Keep the head rows of classes from earlier tasks fixed.
    pub freeze_old_head: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 20,
            batch_size: 16,
            cosine_decay: true,
            momentum: 0.0,
            max_grad_norm: Some(1.0),
            freeze_old_head: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(HarnessError::Config("epochs and batch_size must be at least 1".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(HarnessError::Config(format!("max_grad_norm must be positive, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HarnessError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Complete description of one harness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.model.validate()?;
        self.loss.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.optimizer.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The same run with both the stream and the training seed set to `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.stream.seed = seed;
        cfg.seed = seed;
        cfg
    }
}

/// `a[k][j]`: accuracy on task `j`'s test split after training task `k` (`j <= k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl TaskAccuracyMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(HarnessError::ShapeMismatch(format!(
                    "row {k} must have {} entries, has {}",
                    k + 1,
                    row.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(HarnessError::Config(format!("accuracy {v} outside [0, 1]")));
            }
        }
        Ok(Self { rows })
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// Accuracy on task `j` after task `k` (0-based).
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.rows[k][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// 0-based index of the task just finished.
    pub task: usize,
    pub model: Model,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub accuracy: TaskAccuracyMatrix,
    pub checkpoints: Vec<Checkpoint>,
    pub access_log: Vec<AccessRecord>,
    /// Mean regularizer value over the final epoch of each task.
    pub final_reg: Vec<f64>,
}

/// Fraction of `split` classified correctly among the first `seen` classes.
pub fn accuracy(model: &Model, split: &Split, seen: usize) -> f64 {
    if split.is_empty() {
        return 0.0;
    }
    let correct = (0..split.len())
        .filter(|&i| model.predict(split.sample(i), seen) == split.labels[i])
        .count();
    correct as f64 / split.len() as f64
}

/// Loss of one minibatch and its gradient; `old` is the frozen previous model.
pub fn batch_objective(
    model: &Model,
    old: Option<&Model>,
    loss: &LossConfig,
    split: &Split,
    batch: &[usize],
    seen: usize,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    grad.fill(0.0);
    let inv_b = 1.0 / batch.len() as f64;
    let reg_layers = model.config().regularized_layers.indices(model.config().layers);
    let inv_layers = 1.0 / reg_layers.len().max(1) as f64;
    let (mut cls, mut reg) = (0.0, 0.0);
    for &i in batch {
        let x = split.sample(i);
        let pass = model.forward(x);
        let (ce, mut dlogits) = masked_cross_entropy(&pass.logits, split.labels[i], seen);
        cls += ce * inv_b;
        dlogits.iter_mut().for_each(|g| *g *= inv_b);
        let mut state_grads: Vec<Option<StateGrad>> = vec![None; model.config().layers];
        if let (Some(old), true) = (old, loss.is_active()) {
            let old_pass = old.forward(x);
            for l in reg_layers.clone() {
                let (v, mut g) = regularizer_with_gradient(
                    loss,
                    &old.state_bundle(&old_pass, l)?,
                    &model.state_bundle(&pass, l)?,
                    x,
                )?;
                reg += v * inv_b * inv_layers;
                g.scale(loss.lambda * inv_b * inv_layers);
                state_grads[l] = Some(g);
            }
        }
        model.backward(&pass, &dlogits, &state_grads, grad);
    }
    Ok((cls, reg))
}

/// Trains task after task; while training task `t` only task `t`'s training
/// split and the frozen model from task `t - 1` are consulted.
pub fn train_sequential(
    stream: &TaskStream,
    model_config: &ModelConfig,
    loss: &LossConfig,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    loss.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    optimizer.validate()?;
    if stream.num_tasks() == 0 {
        return Err(HarnessError::Config("stream has no tasks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(model_config, 1, stream.total_classes(), &mut rng)?;
    let source = InstrumentedStream::new(stream);
    let mut grad = vec![0.0; model.num_params()];
    let mut velocity = vec![0.0; model.num_params()];
    let mut rows = Vec::with_capacity(stream.num_tasks());
    let mut checkpoints = Vec::with_capacity(stream.num_tasks());
    let mut final_reg = Vec::with_capacity(stream.num_tasks());
    for task in 0..stream.num_tasks() {
        let seen = (task + 1) * stream.classes_per_task;
        let old = if task > 0 && loss.is_active() { Some(model.clone()) } else { None };
        let split = source.read(Phase::Training { task }, task, SplitKind::Train);
        let mut order: Vec<usize> = (0..split.len()).collect();
        let batches_per_epoch = split.len().div_ceil(optimizer.batch_size);
        let total_steps = (batches_per_epoch * optimizer.epochs).max(1);
        let mut step = 0;
        let mut epoch_reg = 0.0;
        velocity.fill(0.0);
        for _ in 0..optimizer.epochs {
            order.shuffle(&mut rng);
            epoch_reg = 0.0;
            for batch in order.chunks(optimizer.batch_size) {
                let (_, reg) = batch_objective(&model, old.as_ref(), loss, split, batch, seen, &mut grad)?;
                if optimizer.freeze_old_head {
                    model.mask_head_rows(task * stream.classes_per_task, &mut grad);
                }
                epoch_reg += reg / batches_per_epoch as f64;
                let lr = if optimizer.cosine_decay {
                    0.5 * optimizer.learning_rate * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
                } else {
                    optimizer.learning_rate
                };
                if let Some(limit) = optimizer.max_grad_norm {
                    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                    if norm > limit {
                        grad.iter_mut().for_each(|g| *g *= limit / norm);
                    }
                }
                for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = optimizer.momentum * *v + g;
                    *p -= lr * *v;
                }
                step += 1;
            }
        }
        if model.params().iter().any(|v| !v.is_finite()) {
            return Err(HarnessError::Config(format!("training diverged on task {task}; lower the learning rate")));
        }
        final_reg.push(epoch_reg);
        let row = (0..=task)
            .map(|j| accuracy(&model, source.read(Phase::Evaluation { after_task: task }, j, SplitKind::Test), seen))
            .collect();
        rows.push(row);
        checkpoints.push(Checkpoint { task, model: model.clone() });
    }
    Ok(TrainOutcome {
        accuracy: TaskAccuracyMatrix::new(rows)?,
        checkpoints,
        access_log: source.log(),
        final_reg,
    })
}
