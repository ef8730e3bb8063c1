//! Wall-time comparisons of the Gram solvers and of the subspace distances.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use obsgrass::grassmann::{RANK_TOLERANCE, DEFAULT_EQUALITY_EPSILON};
use obsgrass::ssm::default_horizon;
use obsgrass::{
    classical_distance, count_flops, gram_diagonal, gram_sylvester_dense, simplified_distance, soft_normalize,
    truncated_observability, DiagonalSsm, Metric, PrincipalAngles, Solver,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Minimum dense / diagonal wall-time ratio asserted at `n = 16`.
pub const SPEEDUP_FLOOR: f64 = 10.0;
pub const SPEEDUP_CHECK_N: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub experiment: String,
    pub params: BTreeMap<String, String>,
    /// Seconds per call.
    pub mean_time: f64,
    pub std_time: f64,
    pub iterations: usize,
    pub flops: Option<u64>,
}

impl BenchmarkRecord {
    pub const CSV_HEADER: [&'static str; 6] = ["experiment", "params", "mean_time_s", "std_time_s", "iterations", "flops"];

    fn new(experiment: &str, params: &[(&str, String)], times: &[f64], flops: Option<u64>) -> Self {
        let (mean_time, std_time) = mean_std(times);
        Self {
            experiment: experiment.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            mean_time,
            std_time,
            iterations: times.len(),
            flops,
        }
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    /// `key=value` pairs joined by `;`, in key order.
    pub fn params_field(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }

    pub fn csv_row(&self) -> [String; 6] {
        [
            self.experiment.clone(),
            self.params_field(),
            format!("{:e}", self.mean_time),
            format!("{:e}", self.std_time),
            self.iterations.to_string(),
            self.flops.map(|f| f.to_string()).unwrap_or_default(),
        ]
    }
}

fn mean_std(times: &[f64]) -> (f64, f64) {
    let m = times.len() as f64;
    let mean = times.iter().sum::<f64>() / m;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / m;
    (mean, var.sqrt())
}

/// Times each call separately; returns seconds per call.
fn time_each(iterations: usize, mut call: impl FnMut(usize)) -> Vec<f64> {
    (0..iterations)
        .map(|i| {
            let start = Instant::now();
            call(i);
            // clocks can report zero for very fast calls; keep times positive
            start.elapsed().as_secs_f64().max(1e-9)
        })
        .collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterBench {
    pub records: Vec<BenchmarkRecord>,
    /// Mean dense time over mean diagonal time, per `n`.
    pub speedups: Vec<(usize, f64)>,
}

impl SylvesterBench {
    pub fn speedup_at(&self, n: usize) -> Option<f64> {
        self.speedups.iter().find(|(m, _)| *m == n).map(|(_, r)| *r)
    }

    /// Fails when the diagonal path is less than [`SPEEDUP_FLOOR`] times
    /// faster at `n = 16` (if measured).
    pub fn check(&self) -> Result<()> {
        match self.speedup_at(SPEEDUP_CHECK_N) {
            Some(r) if r < SPEEDUP_FLOOR => Err(CliError::Assertion(format!(
                "diagonal Gram path is only {r:.2}x faster than the dense solve at n = {SPEEDUP_CHECK_N} (floor {SPEEDUP_FLOOR})"
            ))),
            _ => Ok(()),
        }
    }
}

/// Times the closed-form diagonal Gram against the dense Sylvester solve on
/// identical random Schur-stable diagonal inputs.
pub fn bench_sylvester(n_values: &[usize], iterations: usize, seed: u64) -> Result<SylvesterBench> {
    if n_values.is_empty() || n_values.iter().any(|n| !(2..=64).contains(n)) {
        return Err(CliError::Input(format!("n values must lie in [2, 64], got {n_values:?}")));
    }
    if iterations < 100 {
        return Err(CliError::Input(format!("at least 100 iterations are required, got {iterations}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut speedups = Vec::new();
    for &n in n_values {
        let inputs: Vec<[DVector<f64>; 4]> = (0..iterations)
            .map(|_| {
                let mut a = || DVector::from_fn(n, |_, _| rng.random_range(-0.95..0.95));
                let (a1, a2) = (a(), a());
                [a1, normal_vec(&mut rng, n), a2, normal_vec(&mut rng, n)]
            })
            .collect();
        let dense: Vec<[DMatrix<f64>; 2]> = inputs
            .iter()
            .map(|[a1, _, a2, _]| [DMatrix::from_diagonal(a1), DMatrix::from_diagonal(a2)])
            .collect();
        let mut failure = None;
        let diag_times = time_each(iterations, |i| {
            let [a1, c1, a2, c2] = &inputs[i];
            if let Err(e) = black_box(gram_diagonal(a1, c1, a2, c2)) {
                failure.get_or_insert(e);
            }
        });
        let dense_times = time_each(iterations, |i| {
            let ([_, c1, _, c2], [d1, d2]) = (&inputs[i], &dense[i]);
            if let Err(e) = black_box(gram_sylvester_dense(d1, c1, d2, c2)) {
                failure.get_or_insert(e);
            }
        });
        if let Some(e) = failure {
            return Err(e.into());
        }
        let diag = BenchmarkRecord::new(
            "sylvester",
            &[("solver", "diagonal".into()), ("n", n.to_string())],
            &diag_times,
            Some(count_flops(Solver::Diagonal, n)?.flops),
        );
        let dense = BenchmarkRecord::new(
            "sylvester",
            &[("solver", "dense".into()), ("n", n.to_string())],
            &dense_times,
            Some(count_flops(Solver::DenseReference, n)?.flops),
        );
        speedups.push((n, dense.mean_time / diag.mean_time));
        records.push(diag);
        records.push(dense);
    }
    Ok(SylvesterBench { records, speedups })
}

/// Orthonormal basis of the numerically significant column space.
///
/// Long truncated bases of large systems are rank deficient in floating
/// point, so directions below the rank tolerance are dropped instead of
/// rejected.
fn significant_basis(o: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = o.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let max = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > RANK_TOLERANCE * max)
        .collect();
    u.select_columns(&keep)
}

/// Principal angles between two truncated observability bases, keeping only
/// their numerically significant directions.
pub fn truncated_angles(s1: &DiagonalSsm, s2: &DiagonalSsm, horizon: usize) -> Result<PrincipalAngles> {
    let x = significant_basis(&truncated_observability(s1, horizon)?);
    let z = significant_basis(&truncated_observability(s2, horizon)?);
    Ok(PrincipalAngles::from_cosines(x.tr_mul(&z).singular_values().iter().copied())?)
}

/// Diagonal system with soft-normalized Gaussian state, as produced by the
/// regularizer's aggregation.
pub fn stabilized_diagonal(rng: &mut ChaCha8Rng, n: usize) -> Result<DiagonalSsm> {
    let a = normal_vec(rng, n).map(soft_normalize);
    let c = normal_vec(rng, n);
    Ok(DiagonalSsm::new(a, DVector::from_element(n, 1.0), c)?)
}

pub const CLASSICAL_METRICS: [Metric; 3] = [Metric::BinetCauchy, Metric::FubiniStudy, Metric::Martin];

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceBench {
    pub records: Vec<BenchmarkRecord>,
}

impl DistanceBench {
    pub fn mean_time(&self, metric: Metric) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.param("metric") == Some(metric.name()))
            .map(|r| r.mean_time)
    }

    /// Fails unless the simplified distance is strictly the fastest.
    pub fn check(&self) -> Result<()> {
        let simplified = self.mean_time(Metric::Simplified).expect("simplified is always timed");
        for m in CLASSICAL_METRICS {
            let t = self.mean_time(m).expect("classical metrics are always timed");
            if simplified >= t {
                return Err(CliError::Assertion(format!(
                    "simplified distance ({simplified:e} s) is not faster than {m} ({t:e} s)"
                )));
            }
        }
        Ok(())
    }
}

/// Times the simplified distance against each principal-angle metric on
/// truncated bases long enough that the neglected tail is below `1e-12`.
pub fn bench_distance(n: usize, iterations: usize, seed: u64) -> Result<DistanceBench> {
    if n < 2 {
        return Err(CliError::Input(format!("n must be at least 2, got {n}")));
    }
    if iterations == 0 {
        return Err(CliError::Input("iterations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(DiagonalSsm, DiagonalSsm)> = (0..iterations)
        .map(|_| Ok((stabilized_diagonal(&mut rng, n)?, stabilized_diagonal(&mut rng, n)?)))
        .collect::<Result<_>>()?;
    let horizons: Vec<usize> = pairs
        .iter()
        .map(|(s1, s2)| default_horizon(s1.a_diag().amax().max(s2.a_diag().amax())).max(n))
        .collect();
    let mut failure: Option<obsgrass::Error> = None;
    let mut records = Vec::new();
    let times = time_each(iterations, |i| {
        let (s1, s2) = &pairs[i];
        if let Err(e) = black_box(simplified_distance(s1, s2, DEFAULT_EQUALITY_EPSILON)) {
            failure.get_or_insert(e);
        }
    });
    records.push(BenchmarkRecord::new(
        "distance",
        &[("metric", Metric::Simplified.name().into()), ("n", n.to_string())],
        &times,
        None,
    ));
    for metric in CLASSICAL_METRICS {
        let times = time_each(iterations, |i| {
            let (s1, s2) = &pairs[i];
            let result = truncated_angles(s1, s2, horizons[i]).and_then(|pa| Ok(classical_distance(&pa, metric)?));
            // an infinite Martin distance is a valid outcome of the pipeline
            match black_box(result) {
                Ok(_) | Err(CliError::Core(obsgrass::Error::InfiniteDistance)) => {}
                Err(CliError::Core(e)) => {
                    failure.get_or_insert(e);
                }
                Err(_) => unreachable!("only core errors arise here"),
            }
        });
        records.push(BenchmarkRecord::new(
            "distance",
            &[("metric", metric.name().into()), ("n", n.to_string())],
            &times,
            None,
        ));
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(DistanceBench { records })
}
