//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use obsgrass::ssm::{default_horizon, StateSpace};
use obsgrass::sylvester::sylvester_residual;
use obsgrass::{
    chordal_distance_sq, classical_distance, count_flops, gram_diagonal, gram_sylvester_dense, gram_truncated,
    ism_gradient, ism_loss, p_transform, principal_angles_truncated, AggregatedStates, DenseSsm, DiagonalSsm, Metric,
    Solver,
};
use obsgrass_cli::bench::bench_sylvester;
use obsgrass_cli::cl::{default_config, run_cl, sequential_baseline};
use obsgrass_cli::mc::{run_monte_carlo, MonteCarloConfig, NoiseScale};
use obsgrass_harness::{ckd, compute_metrics, TaskAccuracyMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn sylvester_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_diff, mut worst_residual) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let n = [2, 4, 8, 16][trial % 4];
        let mut sys = || {
            let a = DVector::from_fn(n, |_, _| rng.random_range(-0.95..0.95));
            DiagonalSsm::new(a, normal_vec(&mut rng, n), normal_vec(&mut rng, n)).unwrap()
        };
        let (s1, s2) = (sys(), sys());
        let k = default_horizon(s1.spectral_radius().max(s2.spectral_radius()));
        let (a1, a2) = (s1.state_matrix(), s2.state_matrix());
        let gd = gram_diagonal(s1.a_diag(), s1.c(), s2.a_diag(), s2.c()).map_err(|e| e.to_string())?;
        let gs = gram_sylvester_dense(&a1, s1.c(), &a2, s2.c()).map_err(|e| e.to_string())?;
        let gt = gram_truncated(&s1, &s2, k).map_err(|e| e.to_string())?;
        worst_diff = worst_diff
            .max((gd.matrix() - gs.matrix()).amax())
            .max((gd.matrix() - gt.matrix()).amax())
            .max((gs.matrix() - gt.matrix()).amax());
        for g in [&gd, &gs, &gt] {
            worst_residual = worst_residual.max(sylvester_residual(&a1, s1.c(), &a2, s2.c(), g.matrix()));
        }
    }
    check(
        worst_diff < 1e-9 && worst_residual < 1e-8,
        format!("max elementwise gap {worst_diff:.2e} (< 1e-9), max relative residual {worst_residual:.2e} (< 1e-8)"),
    )
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn p_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = 1 + trial % 8;
        let a = normal_mat(&mut rng, n, n);
        let a = &a * (0.8 / spectral_radius(&a));
        let s = DenseSsm::new(a, normal_vec(&mut rng, n), normal_vec(&mut rng, n)).unwrap();
        let p = loop {
            let p = normal_mat(&mut rng, n, n) + DMatrix::identity(n, n) * rng.random_range(0.0..2.0);
            let sv = p.singular_values();
            if sv.max() / sv.min() < 1e4 {
                break p;
            }
        };
        let t = p_transform(&s, &p).map_err(|e| e.to_string())?;
        worst = worst.max(chordal_distance_sq(&s, &t).map_err(|e| e.to_string())?);
    }
    check(worst < 1e-8, format!("max squared chordal distance {worst:.2e} over 100 transforms (< 1e-8)"))
}

fn monte_carlo() -> Outcome {
    let cfg = MonteCarloConfig::linear(10_000, 16, 100, 25.0, NoiseScale::Std, 0);
    let r = run_monte_carlo(&cfg, Some(1)).map_err(|e| e.to_string())?;
    let alt = MonteCarloConfig { noise_scale: NoiseScale::Variance, ..cfg };
    let v = run_monte_carlo(&alt, Some(1)).map_err(|e| e.to_string())?;
    check(
        (-0.9462..=-0.8462).contains(&r.mean_pearson),
        format!(
            "mean Pearson {:.4} (std {:.4}, mean p {:.2e}) with noise std i/25; \
             reading i/25 as the variance gives {:.4}",
            r.mean_pearson, r.std_pearson, r.mean_pvalue, v.mean_pearson
        ),
    )
}

fn flops_model() -> Outcome {
    let d = count_flops(Solver::Diagonal, 16).map_err(|e| e.to_string())?.flops;
    let s = count_flops(Solver::DenseReference, 16).map_err(|e| e.to_string())?.flops;
    check(
        d == 1024 && s == 102_400 && s / d == 100 && s % d == 0,
        format!("diagonal {d}, dense reference {s}, ratio {}", s as f64 / d as f64),
    )
}

fn speed_floor() -> Outcome {
    let b = bench_sylvester(&[16], 1000, 5).map_err(|e| e.to_string())?;
    let r = b.speedup_at(16).expect("n = 16 measured");
    check(r >= 10.0, format!("dense / diagonal wall time {r:.1} over 1000 iterations at n = 16 (>= 10)"))
}

/// Orthonormal `m x p` basis and a unit-scale perturbation direction.
fn subspace_pair(rng: &mut ChaCha8Rng, m: usize, p: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = normal_mat(rng, m, p).qr().q();
    let dir = normal_mat(rng, m, p) / (m as f64).sqrt();
    (x, dir)
}

fn distance_ratios(x: &DMatrix<f64>, dir: &DMatrix<f64>, t: f64) -> Result<[f64; 3], String> {
    let y = x + dir * t;
    let pa = principal_angles_truncated(x, &y).map_err(|e| e.to_string())?;
    let chord2 = classical_distance(&pa, Metric::Chordal).map_err(|e| e.to_string())?.value.powi(2);
    let mut out = [0.0; 3];
    for (o, m) in out.iter_mut().zip([Metric::BinetCauchy, Metric::FubiniStudy, Metric::Martin]) {
        *o = classical_distance(&pa, m).map_err(|e| e.to_string())?.value.powi(2) / chord2;
    }
    Ok(out)
}

fn distance_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut limit_ok = true;
    // At least two dimensions: for a line, Binet-Cauchy coincides with chordal
    // for every angle, so there is no limit to observe.
    for trial in 0..50 {
        let (m, p) = (8 + trial % 9, 2 + trial % 3);
        let (x, dir) = subspace_pair(&mut rng, m, p);
        let near = distance_ratios(&x, &dir, 1e-3)?;
        let far = distance_ratios(&x, &dir, 1e-1)?;
        for (a, b) in near.iter().zip(&far) {
            lo = lo.min(*a);
            hi = hi.max(*a);
            limit_ok &= (b - 1.0).abs() > (a - 1.0).abs();
        }
    }
    check(
        lo >= 0.99 && hi <= 1.01 && limit_ok,
        format!(
            "ratios at t = 1e-3 in [{lo:.6}, {hi:.6}]; deviation larger at t = 1e-1 for every pair and metric: {limit_ok}"
        ),
    )
}

fn gradient_check() -> Outcome {
    const STEP: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (tau, n) = (4, 8);
    let states = |rng: &mut ChaCha8Rng| {
        let mut raw = || DMatrix::from_fn(tau, n, |_, _| rng.random_range(-3.0..3.0));
        let (a, b, c) = (raw(), raw(), raw());
        AggregatedStates::from_raw(&a, &b, &c).unwrap()
    };
    let perturbed = |s: &AggregatedStates, on_a: bool, t: usize, i: usize, d: f64| {
        let (mut a, mut c) = (s.a_tilde().clone(), s.c_tilde().clone());
        if on_a {
            a[(t, i)] += d;
        } else {
            c[(t, i)] += d;
        }
        AggregatedStates::new(a, s.b_tilde().clone(), c).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let old = states(&mut rng);
        let new = states(&mut rng);
        let (ga, gc) = ism_gradient(&old, &new).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let (t, i, on_a) = (rng.random_range(0..tau), rng.random_range(0..n), rng.random_bool(0.5));
            let plus = ism_loss(&old, &perturbed(&new, on_a, t, i, STEP)).map_err(|e| e.to_string())?.0;
            let minus = ism_loss(&old, &perturbed(&new, on_a, t, i, -STEP)).map_err(|e| e.to_string())?.0;
            let numeric = (plus - minus) / (2.0 * STEP);
            let analytic = if on_a { ga[(t, i)] } else { gc[(t, i)] };
            worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
    }
    check(worst < 1e-4, format!("worst relative error {worst:.2e} over 200 coordinates (< 1e-4)"))
}

fn metric_formulas() -> Outcome {
    let acc = TaskAccuracyMatrix::new(vec![vec![0.9], vec![0.6, 0.8]]).map_err(|e| e.to_string())?;
    let m = compute_metrics(&acc).map_err(|e| e.to_string())?;
    let exact = (m.aa[1] - 0.7).abs() < 1e-15 && (m.aia[1] - 0.8).abs() < 1e-15 && (m.fm[0] - 0.3).abs() < 1e-15;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut zero_fm = true;
    for _ in 0..100 {
        let t = rng.random_range(2..7);
        // each task's accuracy never decreases as later tasks are learned
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for k in 0..t {
            let mut row: Vec<f64> = (0..k).map(|j| rows[k - 1][j] + rng.random_range(0.0..0.05)).collect();
            row.push(rng.random_range(0.0..0.7));
            rows.push(row.into_iter().map(|v: f64| v.min(1.0)).collect());
        }
        let m = compute_metrics(&TaskAccuracyMatrix::new(rows).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        zero_fm &= m.fm.iter().all(|&v| v == 0.0);
    }
    check(
        exact && zero_fm,
        format!("AA_2 = {}, AIA_2 = {}, FM_2 = {}; FM = 0 on 100 non-decreasing matrices: {zero_fm}", m.aa[1], m.aia[1], m.fm[0]),
    )
}

fn cl_efficacy() -> Outcome {
    let ism = default_config();
    let seq = sequential_baseline(&ism);
    let (mut fm, mut aa) = ([0.0; 2], [0.0; 2]);
    for seed in 0..3 {
        for (slot, cfg) in [&seq, &ism].into_iter().enumerate() {
            let r = run_cl(&cfg.reseeded(seed), false).map_err(|e| e.to_string())?;
            fm[slot] += r.metrics.final_fm().expect("three tasks") / 3.0;
            aa[slot] += r.metrics.final_aa() / 3.0;
        }
    }
    check(
        fm[1] < fm[0] && aa[1] >= aa[0] - 0.02,
        format!(
            "lambda = {}: FM_T {:.4} vs Seq {:.4}; AA_T {:.4} vs Seq {:.4} (3 seeds)",
            ism.loss.lambda, fm[1], fm[0], aa[1], aa[0]
        ),
    )
}

fn ckd_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = normal_mat(&mut rng, 32, 8);
        let c = rng.random_range(0.1..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        worst = worst
            .max(ckd(&w, &w).map_err(|e| e.to_string())?.abs())
            .max(ckd(&w, &(&w * c)).map_err(|e| e.to_string())?.abs());
    }
    let r = run_cl(&sequential_baseline(&default_config()), true).map_err(|e| e.to_string())?;
    let a = &r.ckd.as_ref().expect("drift requested")[0];
    let last = a.per_layer.ncols() - 1;
    let (second, fin) = (a.mean_at(1), a.mean_at(last));
    check(
        worst < 1e-10 && fin > second,
        format!("self / scaled CKD at most {worst:.1e}; lambda = 0 state-A CKD task 2 {second:.4} -> final {fin:.4}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("Sylvester correctness", 30, sylvester_correctness),
        ("P-equivalence invariance", 10, p_equivalence),
        ("Monte Carlo correlation", 300, monte_carlo),
        ("FLOPS model", 1, flops_model),
        ("Speed floor", 60, speed_floor),
        ("Distance equivalence", 10, distance_equivalence),
        ("Gradient check", 10, gradient_check),
        ("Metric formulas", 1, metric_formulas),
        ("Directional CL efficacy", 600, cl_efficacy),
        ("CKD properties and drift", 300, ckd_properties),
    ];
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        let timing = format!("{:.2} s, limit {limit} s", elapsed.as_secs_f64());
        println!("{} [{:>2}] {name}: {detail} ({timing})", if pass { "PASS" } else { "FAIL" }, i + 1);
        failed += usize::from(!pass);
    }
    println!("{}/10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
