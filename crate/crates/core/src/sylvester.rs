//! Gram matrices `G = O(A, C)^T O(A', C')` of extended observability matrices.
//!
//! `G` solves the Stein/Sylvester equation `A^T G A' - G = -C^T C'`. Three
//! routes are provided and cross-checked in the tests:
//!
//! * [`gram_truncated`]: the first `K` terms of `sum_t (A^T)^t C^T C' (A')^t`.
//! * [`gram_sylvester_dense`]: the `n^2 x n^2` Kronecker system solved by LU.
//! * [`gram_diagonal`]: `G_ij = c_i c'_j / (1 - a_i a'_j)` for diagonal `A`, `A'`,
//!   costing exactly `4 n^2` floating point operations.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ssm::StateSpace;

/// Smallest admissible `|1 - a_i a'_j|` in the diagonal closed form.
pub const DIAGONAL_EPSILON: f64 = 1e-9;

/// Relative residual above which a dense solve is reported as non-unique.
const DENSE_RESIDUAL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: DMatrix<f64>,
}

impl GramMatrix {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() || g.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "Gram matrix must be square and non-empty, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("GramMatrix::new"));
        }
        Ok(Self { g })
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn into_matrix(self) -> DMatrix<f64> {
        self.g
    }
    pub fn trace(&self) -> f64 {
        self.g.trace()
    }
    pub fn transpose(&self) -> GramMatrix {
        GramMatrix { g: self.g.transpose() }
    }
}

fn check_pair(c: &DVector<f64>, c2: &DVector<f64>, n_a: usize, n_a2: usize) -> Result<()> {
    if c.len() != n_a || c2.len() != n_a2 {
        return Err(Error::DimensionMismatch(format!(
            "C has {} entries for n={n_a}, C' has {} for n={n_a2}",
            c.len(),
            c2.len()
        )));
    }
    if c.len() != c2.len() {
        return Err(Error::DimensionMismatch(format!(
            "state dimensions differ: {} vs {}",
            c.len(),
            c2.len()
        )));
    }
    Ok(())
}

/// First `horizon` terms of the Gram series, built row by row from
/// `C A^t` and `C' A'^t`.
pub fn gram_truncated<S1, S2>(s1: &S1, s2: &S2, horizon: usize) -> Result<GramMatrix>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check_pair(s1.c(), s2.c(), s1.n(), s2.n())?;
    let n = s1.n();
    let mut g = DMatrix::zeros(n, n);
    let mut r1 = s1.c().clone();
    let mut r2 = s2.c().clone();
    for t in 0..horizon {
        g.ger(1.0, &r1, &r2, 1.0);
        if t + 1 < horizon {
            r1 = s1.apply_a_transpose(&r1);
            r2 = s2.apply_a_transpose(&r2);
        }
    }
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gram_truncated"));
    }
    Ok(GramMatrix { g })
}

/// Solves `A^T G A' - G = -C^T C'` through `(A'^T (x) A^T - I) vec(G) = -vec(C^T C')`.
pub fn gram_sylvester_dense(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    a2: &DMatrix<f64>,
    c2: &DVector<f64>,
) -> Result<GramMatrix> {
    let n = a.nrows();
    if !a.is_square() || !a2.is_square() || a2.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, A' is {}x{}",
            a.nrows(),
            a.ncols(),
            a2.nrows(),
            a2.ncols()
        )));
    }
    check_pair(c, c2, n, n)?;
    let nn = n * n;
    // column-major vec: index of G[i, j] is j * n + i
    let mut m = DMatrix::<f64>::zeros(nn, nn);
    for l in 0..n {
        for j in 0..n {
            let a2_lj = a2[(l, j)];
            if a2_lj == 0.0 {
                continue;
            }
            for k in 0..n {
                let col = l * n + k;
                for i in 0..n {
                    m[(j * n + i, col)] = a2_lj * a[(k, i)];
                }
            }
        }
    }
    for d in 0..nn {
        m[(d, d)] -= 1.0;
    }
    let rhs_mat = c * c2.transpose();
    let rhs = DVector::from_iterator(nn, rhs_mat.iter().map(|v| -v));
    let sol = m.lu().solve(&rhs).ok_or(Error::NoUniqueSolution { pivot: 0.0 })?;
    let g = DMatrix::from_column_slice(n, n, sol.as_slice());
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NoUniqueSolution { pivot: f64::NAN });
    }
    let residual = sylvester_residual(a, c, a2, c2, &g);
    if !(residual <= DENSE_RESIDUAL_LIMIT) {
        return Err(Error::NoUniqueSolution { pivot: residual });
    }
    Ok(GramMatrix { g })
}

/// `||A^T G A' - G + C^T C'||_F / ||C^T C'||_F` (absolute when `C^T C' = 0`).
pub fn sylvester_residual(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    a2: &DMatrix<f64>,
    c2: &DVector<f64>,
    g: &DMatrix<f64>,
) -> f64 {
    let cc = c * c2.transpose();
    let r = a.tr_mul(g) * a2 - g + &cc;
    let scale = cc.norm();
    if scale > 0.0 {
        r.norm() / scale
    } else {
        r.norm()
    }
}

/// `G_ij = c_i c'_j / (1 - a_i a'_j)`.
pub fn gram_diagonal(
    a_diag: &DVector<f64>,
    c: &DVector<f64>,
    a2_diag: &DVector<f64>,
    c2: &DVector<f64>,
) -> Result<GramMatrix> {
    gram_diagonal_with_epsilon(a_diag, c, a2_diag, c2, DIAGONAL_EPSILON)
}

pub fn gram_diagonal_with_epsilon(
    a_diag: &DVector<f64>,
    c: &DVector<f64>,
    a2_diag: &DVector<f64>,
    c2: &DVector<f64>,
    epsilon: f64,
) -> Result<GramMatrix> {
    gram_diagonal_counted(a_diag, c, a2_diag, c2, epsilon).map(|(g, _)| g)
}

/// Closed form plus the number of floating point operations it performed.
pub fn gram_diagonal_counted(
    a_diag: &DVector<f64>,
    c: &DVector<f64>,
    a2_diag: &DVector<f64>,
    c2: &DVector<f64>,
    epsilon: f64,
) -> Result<(GramMatrix, u64)> {
    let n = a_diag.len();
    if n == 0 {
        return Err(Error::InvalidArgument("state dimension must be at least 1".into()));
    }
    if a2_diag.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "a_diag has {n} entries, a'_diag has {}",
            a2_diag.len()
        )));
    }
    check_pair(c, c2, n, n)?;
    let mut flops = 0u64;
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let num = c[i] * c2[j];
            let prod = a_diag[i] * a2_diag[j];
            let den = 1.0 - prod;
            flops += 3;
            if !(den.abs() >= epsilon) {
                return Err(Error::DivisionNearOne { row: i, col: j, denominator: den, epsilon });
            }
            g[(i, j)] = num / den;
            flops += 1;
        }
    }
    Ok((GramMatrix { g }, flops))
}

/// Gram routes whose analytic cost is reported by [`count_flops`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Hadamard closed form for diagonal state matrices.
    Diagonal,
    /// Bartels-Stewart reference figure of `25 n^3`.
    DenseReference,
    /// `K` terms of the series, each `2 n^3 + n^2`.
    Truncated { horizon: usize },
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Solver::Diagonal => f.write_str("diagonal"),
            Solver::DenseReference => f.write_str("dense"),
            Solver::Truncated { horizon } => write!(f, "truncated:{horizon}"),
        }
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(Solver::Diagonal),
            "dense" | "dense-reference" | "bartels-stewart" => Ok(Solver::DenseReference),
            other => {
                if let Some(k) = other.strip_prefix("truncated:") {
                    let horizon = k.parse().map_err(|_| Error::UnknownSolver(other.to_string()))?;
                    Ok(Solver::Truncated { horizon })
                } else {
                    Err(Error::UnknownSolver(other.to_string()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlopsReport {
    pub solver_name: String,
    pub n: usize,
    pub flops: u64,
    pub wall_time: f64,
}

impl FlopsReport {
    pub const CSV_HEADER: &'static str = "solver,n,flops,wall_time_s";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:e}", self.solver_name, self.n, self.flops, self.wall_time)
    }
}

/// Analytic operation counts; `wall_time` is left at zero for callers that time.
pub fn count_flops(solver: Solver, n: usize) -> Result<FlopsReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let n64 = n as u64;
    let flops = match solver {
        Solver::Diagonal => 4 * n64 * n64,
        Solver::DenseReference => 25 * n64 * n64 * n64,
        Solver::Truncated { horizon } => horizon as u64 * (2 * n64 * n64 * n64 + n64 * n64),
    };
    Ok(FlopsReport {
        solver_name: solver.to_string(),
        n,
        flops,
        wall_time: 0.0,
    })
}

/// [`count_flops`] from a solver label such as `"diagonal"` or `"truncated:200"`.
pub fn count_flops_named(solver_name: &str, n: usize) -> Result<FlopsReport> {
    count_flops(solver_name.parse()?, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{DenseSsm, DiagonalSsm};
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn zero_state_matrix_gives_outer_product() {
        let z = DMatrix::zeros(2, 2);
        let c = v(&[1.0, 0.0]);
        let g = gram_sylvester_dense(&z, &c, &z, &c).unwrap();
        assert_eq!(g.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let s = DenseSsm::new(z.clone(), v(&[0.0, 0.0]), c.clone()).unwrap();
        for k in [1, 2, 10] {
            let gt = gram_truncated(&s, &s, k).unwrap();
            assert_eq!(gt.matrix(), g.matrix());
        }
        let c2 = v(&[2.0, -3.0]);
        let g = gram_sylvester_dense(&z, &c, &z, &c2).unwrap();
        assert_eq!(g.matrix(), &(&c * c2.transpose()));
    }

    #[test]
    fn geometric_series_oracle() {
        // sum_t 0.25^t summed directly, 200 terms
        let oracle: f64 = (0..200).map(|t| 0.25f64.powi(t)).sum();
        assert_abs_diff_eq!(oracle, 4.0 / 3.0, epsilon = 1e-15);
        let s = DiagonalSsm::from_slices(&[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let gt = gram_truncated(&s, &s, 200).unwrap();
        let gd = gram_diagonal(s.a_diag(), s.c(), s.a_diag(), s.c()).unwrap();
        for (x, y) in gt.matrix().iter().zip(gd.matrix().iter()) {
            assert_abs_diff_eq!(*x, oracle, epsilon = 1e-14);
            assert_abs_diff_eq!(*y, oracle, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_diagonal_gives_ones() {
        let g = gram_diagonal(&v(&[0.0, 0.0]), &v(&[1.0, 1.0]), &v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!(g.matrix().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn near_resonance_is_an_error() {
        let err = gram_diagonal(&v(&[1.0, 0.2]), &v(&[1.0, 1.0]), &v(&[1.0, 0.1]), &v(&[1.0, 1.0]))
            .unwrap_err();
        assert!(matches!(err, Error::DivisionNearOne { row: 0, col: 0, .. }));
    }

    #[test]
    fn diagonal_flop_counter() {
        for n in [1usize, 3, 16] {
            let a = DVector::from_element(n, 0.3);
            let (_, flops) = gram_diagonal_counted(&a, &a, &a, &a, DIAGONAL_EPSILON).unwrap();
            assert_eq!(flops, 4 * (n * n) as u64);
        }
    }

    #[test]
    fn analytic_flop_counts() {
        assert_eq!(count_flops(Solver::Diagonal, 16).unwrap().flops, 1024);
        assert_eq!(count_flops(Solver::DenseReference, 16).unwrap().flops, 102_400);
        assert_eq!(count_flops(Solver::Diagonal, 1).unwrap().flops, 4);
        assert_eq!(count_flops(Solver::Truncated { horizon: 10 }, 2).unwrap().flops, 10 * (16 + 4));
        assert_eq!(count_flops_named("truncated:10", 2).unwrap().solver_name, "truncated:10");
        assert!(matches!(count_flops_named("schur", 4), Err(Error::UnknownSolver(_))));
        assert!(count_flops(Solver::Diagonal, 0).is_err());
        let r = count_flops(Solver::Diagonal, 16).unwrap();
        assert_eq!(r.csv_row(), "diagonal,16,1024,0e0");
    }

    #[test]
    fn dense_rejects_resonant_system() {
        // eigenvalue product of 1 * 1 makes the Stein operator singular
        let a = DMatrix::identity(2, 2);
        let c = v(&[1.0, 1.0]);
        assert!(matches!(
            gram_sylvester_dense(&a, &c, &a, &c),
            Err(Error::NoUniqueSolution { .. })
        ));
    }

    #[test]
    fn dimension_checks() {
        let a = DMatrix::zeros(2, 2);
        let a3 = DMatrix::zeros(3, 3);
        let c = v(&[1.0, 1.0]);
        assert!(matches!(gram_sylvester_dense(&a, &c, &a3, &c), Err(Error::DimensionMismatch(_))));
        assert!(matches!(
            gram_diagonal(&v(&[0.1]), &c, &v(&[0.1]), &c),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn truncated_overflow() {
        let s = DiagonalSsm::from_slices(&[1e10], &[1.0], &[1.0]).unwrap();
        assert_eq!(gram_truncated(&s, &s, 100).unwrap_err(), Error::NonFinite("gram_truncated"));
    }
}
