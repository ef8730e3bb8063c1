//! Monte Carlo check that the rank-one cosine tracks perturbation size.
//!
//! Each iteration draws `A_diag, C ~ N(0, I_n)`, perturbs both with Gaussian
//! noise at a sequence of levels, and correlates the level index with the
//! rank-one cosine between the soft-normalized original and perturbed systems.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use obsgrass::grassmann::{simplified_from_grams, DEFAULT_EQUALITY_EPSILON};
use obsgrass::sylvester::gram_diagonal_with_epsilon;
use obsgrass::soft_normalize;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{CliError, Result};

/// How a noise level maps to the Gaussian perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// The level is the standard deviation.
    #[default]
    Std,
    /// The level is the variance.
    Variance,
}

impl NoiseScale {
    pub fn std_dev(self, level: f64) -> f64 {
        match self {
            NoiseScale::Std => level,
            NoiseScale::Variance => level.sqrt(),
        }
    }
}

impl fmt::Display for NoiseScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseScale::Std => "std",
            NoiseScale::Variance => "variance",
        })
    }
}

impl FromStr for NoiseScale {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(NoiseScale::Std),
            "variance" => Ok(NoiseScale::Variance),
            other => Err(CliError::Input(format!("unknown noise scale '{other}' (expected std or variance)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub iterations: usize,
    pub n: usize,
    /// Noise parameter at each level; the level index is the correlation's x-axis.
    pub noise_levels: Vec<f64>,
    pub noise_scale: NoiseScale,
    pub seed: u64,
}

impl MonteCarloConfig {
    /// `levels` evenly spaced levels `i / divisor`, `i = 0..levels`.
    pub fn linear(iterations: usize, n: usize, levels: usize, divisor: f64, noise_scale: NoiseScale, seed: u64) -> Self {
        Self {
            iterations,
            n,
            noise_levels: (0..levels).map(|i| i as f64 / divisor).collect(),
            noise_scale,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n == 0 {
            return Err(CliError::Input("iterations and n must be at least 1".into()));
        }
        if self.noise_levels.len() < 3 {
            return Err(CliError::Input("at least three noise levels are needed for a p-value".into()));
        }
        if !self.noise_levels.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(CliError::Input("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    /// Mean over non-degenerate iterations; NaN when every iteration is degenerate.
    pub mean_pearson: f64,
    pub std_pearson: f64,
    pub mean_pvalue: f64,
    pub std_pvalue: f64,
    pub iterations: usize,
    /// Iterations whose cosine series was constant, leaving the correlation undefined.
    pub degenerate: usize,
}

impl MonteCarloResult {
    pub const CSV_HEADER: [&'static str; 6] =
        ["mean_pearson", "std_pearson", "mean_pvalue", "std_pvalue", "iterations", "degenerate"];
}

/// Pearson correlation, or `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "series lengths differ");
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a Pearson coefficient from `samples` pairs through the
/// t statistic with `samples - 2` degrees of freedom.
pub fn pearson_pvalue(r: f64, samples: usize) -> f64 {
    let df = samples as f64 - 2.0;
    let r2 = r * r;
    if r2 >= 1.0 {
        return 0.0;
    }
    // P(|T| > t) = I_{df / (df + t^2)}(df / 2, 1 / 2), and with
    // t^2 = df r^2 / (1 - r^2) the argument is 1 - r^2
    beta_reg(0.5 * df, 0.5, 1.0 - r2)
}

/// Cosine of the rank-one angle between two diagonal systems, one when
/// they coincide within the equality guard.
fn rank_one_cosine(a1: &DVector<f64>, c1: &DVector<f64>, a2: &DVector<f64>, c2: &DVector<f64>) -> Result<f64> {
    let close = |x: &DVector<f64>, y: &DVector<f64>| (x - y).amax() <= DEFAULT_EQUALITY_EPSILON;
    if close(a1, a2) && close(c1, c2) {
        return Ok(1.0);
    }
    // Saturated soft-normalized entries sit closer to one than the closed
    // form's default guard; the protocol evaluates them as they are.
    let g1 = gram_diagonal_with_epsilon(a1, c1, a1, c1, 0.0)?;
    let g2 = gram_diagonal_with_epsilon(a2, c2, a2, c2, 0.0)?;
    let g3 = gram_diagonal_with_epsilon(a1, c1, a2, c2, 0.0)?;
    Ok((1.0 - simplified_from_grams(&g1, &g2, &g3)?).sqrt())
}

/// Cosine series of one iteration over all noise levels.
pub fn cosine_series(config: &MonteCarloConfig, iteration: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(iteration);
    let n = config.n;
    let normal = |rng: &mut ChaCha8Rng| -> DVector<f64> { DVector::from_fn(n, |_, _| StandardNormal.sample(rng)) };
    let a_raw = normal(&mut rng);
    let c_raw = normal(&mut rng);
    let a = a_raw.map(soft_normalize);
    let c = c_raw.map(soft_normalize);
    config
        .noise_levels
        .iter()
        .map(|&level| {
            let sd = config.noise_scale.std_dev(level);
            let a2 = (&a_raw + normal(&mut rng) * sd).map(soft_normalize);
            let c2 = (&c_raw + normal(&mut rng) * sd).map(soft_normalize);
            rank_one_cosine(&a, &c, &a2, &c2)
        })
        .collect()
}

/// Sum in a fixed binary-tree order, independent of how values were produced.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        len => {
            let (l, r) = v.split_at(len / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

/// Mean and population standard deviation; NaN for an empty sample.
fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.len() as f64;
    let mean = pairwise_sum(v) / m;
    let sq: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&sq) / m).sqrt())
}

/// Runs the experiment on `threads` worker threads (all cores when `None`).
///
/// Every iteration owns a seeded random stream, and results are combined in
/// iteration order, so the outcome does not depend on the thread count.
pub fn run_monte_carlo(config: &MonteCarloConfig, threads: Option<usize>) -> Result<MonteCarloResult> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    let xs: Vec<f64> = (0..config.noise_levels.len()).map(|i| i as f64).collect();
    let per_iteration: Vec<Option<f64>> = pool.install(|| {
        (0..config.iterations as u64)
            .into_par_iter()
            .map(|it| cosine_series(config, it).map(|ys| pearson(&xs, &ys)))
            .collect::<Result<_>>()
    })?;
    let rs: Vec<f64> = per_iteration.iter().flatten().copied().collect();
    let ps: Vec<f64> = rs.iter().map(|&r| pearson_pvalue(r, xs.len())).collect();
    let (mean_pearson, std_pearson) = mean_std(&rs);
    let (mean_pvalue, std_pvalue) = mean_std(&ps);
    Ok(MonteCarloResult {
        mean_pearson,
        std_pearson,
        mean_pvalue,
        std_pvalue,
        iterations: config.iterations,
        degenerate: per_iteration.len() - rs.len(),
    })
}
