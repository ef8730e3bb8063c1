//! Synthetic class-incremental task streams.
//!
//! Every class is its own random Schur-stable diagonal SSM driven by white
//! noise; a sample is the SSM's output sequence plus observation noise.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Parameters of [`generate_task_stream`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub seed: u64,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub tau: usize,
    /// State dimension of each class's generating SSM.
    pub n_features: usize,
    /// Largest eigenvalue magnitude of the generators.
    pub max_pole: f64,
    /// Standard deviation of the additive observation noise.
    pub observation_noise: f64,
    /// Steps simulated and discarded before a sample starts.
    pub burn_in: usize,
    /// Minimum Euclidean distance between the lag-1..=3 autocorrelations of
    /// any two classes; generators are redrawn until it holds.
    pub min_class_separation: f64,
    /// Rescale every class to unit stationary output variance.
    pub normalize_variance: bool,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_tasks: 3,
            classes_per_task: 2,
            samples_per_class: 200,
            tau: 16,
            n_features: 4,
            max_pole: 0.95,
            observation_noise: 0.1,
            burn_in: 32,
            min_class_separation: 0.5,
            normalize_variance: true,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_tasks", self.num_tasks),
            ("classes_per_task", self.classes_per_task),
            ("samples_per_class", self.samples_per_class),
            ("tau", self.tau),
            ("n_features", self.n_features),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.max_pole > 0.0 && self.max_pole < 1.0) {
            return Err(HarnessError::Config(format!("max_pole must lie in (0, 1), got {}", self.max_pole)));
        }
        if !(self.observation_noise >= 0.0 && self.observation_noise.is_finite()) {
            return Err(HarnessError::Config("observation_noise must be finite and nonnegative".into()));
        }
        if !(self.min_class_separation >= 0.0 && self.min_class_separation.is_finite()) {
            return Err(HarnessError::Config("min_class_separation must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }
}

/// Samples of one split; `inputs` is `len x tau`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub tau: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
    pub fn sample(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.tau..(i + 1) * self.tau]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub classes: Vec<usize>,
    pub train: Split,
    pub test: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub classes_per_task: usize,
    pub tau: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
    pub fn total_classes(&self) -> usize {
        self.tasks.len() * self.classes_per_task
    }
}

/// One class's generator: `h(t) = diag(a) h(t-1) + b x(t)`, `y = c^T h + noise`.
struct Generator {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl Generator {
    fn random(rng: &mut ChaCha8Rng, n: usize, max_pole: f64) -> Self {
        let a = (0..n).map(|_| rng.random_range(-max_pole..max_pole)).collect();
        let b = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let c = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Self { a, b, c }
    }

    /// Stationary output autocovariance at `lag` under unit white-noise input.
    fn autocovariance(&self, lag: i32) -> f64 {
        let n = self.a.len();
        let mut v = 0.0;
        for i in 0..n {
            for j in 0..n {
                v += self.c[i] * self.c[j] * self.b[i] * self.b[j] * self.a[i].powi(lag) / (1.0 - self.a[i] * self.a[j]);
            }
        }
        v
    }

    fn output_variance(&self) -> f64 {
        self.autocovariance(0)
    }

    fn signature(&self) -> [f64; 3] {
        let v = self.output_variance().max(f64::MIN_POSITIVE);
        [1, 2, 3].map(|lag| self.autocovariance(lag) / v)
    }

    fn sample(&self, rng: &mut ChaCha8Rng, tau: usize, burn_in: usize, gain: f64, noise: &Normal<f64>, out: &mut Vec<f64>) {
        let mut h = vec![0.0; self.a.len()];
        for t in 0..burn_in + tau {
            let x: f64 = StandardNormal.sample(rng);
            for (i, hi) in h.iter_mut().enumerate() {
                *hi = self.a[i] * *hi + self.b[i] * x;
            }
            if t >= burn_in {
                let y: f64 = h.iter().zip(&self.c).map(|(hi, ci)| hi * ci).sum();
                out.push(gain * y + noise.sample(rng));
            }
        }
    }
}

/// Redraws generators whose autocorrelation signature lies closer than
/// `separation` to an earlier class; gives up on separation after a bounded
/// number of attempts rather than looping forever.
fn distinct_generators(rng: &mut ChaCha8Rng, config: &StreamConfig) -> Vec<Generator> {
    const MAX_ATTEMPTS: usize = 1000;
    let mut gens: Vec<Generator> = Vec::with_capacity(config.total_classes());
    let mut sigs: Vec<[f64; 3]> = Vec::with_capacity(config.total_classes());
    for _ in 0..config.total_classes() {
        let mut attempt = 0;
        loop {
            let g = Generator::random(rng, config.n_features, config.max_pole);
            let sig = g.signature();
            let far = sigs.iter().all(|s| {
                s.iter().zip(&sig).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= config.min_class_separation
            });
            attempt += 1;
            if far || attempt >= MAX_ATTEMPTS {
                gens.push(g);
                sigs.push(sig);
                break;
            }
        }
    }
    gens
}

/// Builds a deterministic stream of `num_tasks` tasks with disjoint labels.
///
/// Class `k` belongs to task `k / classes_per_task`. Each class output is
/// rescaled to unit stationary variance so that classes differ only in
/// their temporal structure. Splits are 80/20 per class, then shuffled.
pub fn generate_task_stream(config: &StreamConfig) -> Result<TaskStream> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.observation_noise)
        .map_err(|e| HarnessError::Config(format!("observation noise: {e}")))?;
    let tau = config.tau;
    let n_train = (config.samples_per_class * 4).div_ceil(5).min(config.samples_per_class);
    let generators = distinct_generators(&mut rng, config);
    let mut tasks = Vec::with_capacity(config.num_tasks);
    for task in 0..config.num_tasks {
        let classes: Vec<usize> = (0..config.classes_per_task)
            .map(|k| task * config.classes_per_task + k)
            .collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for &class in &classes {
            let gen = &generators[class];
            let gain = if config.normalize_variance {
                1.0 / gen.output_variance().max(f64::MIN_POSITIVE).sqrt()
            } else {
                1.0
            };
            for s in 0..config.samples_per_class {
                let mut seq = Vec::with_capacity(tau);
                gen.sample(&mut rng, tau, config.burn_in, gain, &noise, &mut seq);
                if s < n_train {
                    train.push((seq, class));
                } else {
                    test.push((seq, class));
                }
            }
        }
        train.shuffle(&mut rng);
        test.shuffle(&mut rng);
        tasks.push(TaskData {
            classes,
            train: collect_split(train, tau),
            test: collect_split(test, tau),
        });
    }
    Ok(TaskStream {
        tasks,
        classes_per_task: config.classes_per_task,
        tau,
    })
}

fn collect_split(samples: Vec<(Vec<f64>, usize)>, tau: usize) -> Split {
    let mut inputs = Vec::with_capacity(samples.len() * tau);
    let mut labels = Vec::with_capacity(samples.len());
    for (seq, label) in samples {
        inputs.extend_from_slice(&seq);
        labels.push(label);
    }
    Split { inputs, labels, tau }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Train,
    Test,
}

/// What the trainer was doing when it touched a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Training { task: usize },
    Evaluation { after_task: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub phase: Phase,
    pub task: usize,
    pub split: SplitKind,
}

/// A [`TaskStream`] that records every dataset read.
#[derive(Debug)]
pub struct InstrumentedStream<'a> {
    stream: &'a TaskStream,
    log: Mutex<Vec<AccessRecord>>,
}

impl<'a> InstrumentedStream<'a> {
    pub fn new(stream: &'a TaskStream) -> Self {
        Self { stream, log: Mutex::new(Vec::new()) }
    }

    pub fn stream(&self) -> &TaskStream {
        self.stream
    }

    pub fn read(&self, phase: Phase, task: usize, split: SplitKind) -> &'a Split {
        self.log.lock().expect("access log poisoned").push(AccessRecord { phase, task, split });
        let data = &self.stream.tasks[task];
        match split {
            SplitKind::Train => &data.train,
            SplitKind::Test => &data.test,
        }
    }

    pub fn log(&self) -> Vec<AccessRecord> {
        self.log.lock().expect("access log poisoned").clone()
    }
}

/// Reads made while training task `t` that touch any task other than `t`.
pub fn exemplar_violations(log: &[AccessRecord]) -> Vec<AccessRecord> {
    log.iter()
        .filter(|r| matches!(r.phase, Phase::Training { task } if r.task != task))
        .copied()
        .collect()
}
