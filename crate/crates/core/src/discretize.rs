//! Zero-order-hold discretization of continuous-time SSMs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// How `B_bar` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZohMethod {
    /// `sum_k delta^(k+1) A^k / (k+1)! B`, evaluated as the top-right block of
    /// `exp([[delta A, delta B], [0, 0]])`. Valid for singular `A`.
    #[default]
    Series,
    /// `(delta A)^-1 (exp(delta A) - I) delta B`; fails on singular `A`.
    Exact,
}

const SINGULAR_TOLERANCE: f64 = 1e-12;

/// `(exp(delta A), B_bar)` using the series path.
pub fn discretize_zoh(
    a_cont: &DMatrix<f64>,
    b_cont: &DVector<f64>,
    delta: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    discretize_zoh_with(a_cont, b_cont, delta, ZohMethod::Series)
}

pub fn discretize_zoh_with(
    a_cont: &DMatrix<f64>,
    b_cont: &DVector<f64>,
    delta: f64,
    method: ZohMethod,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = a_cont.nrows();
    if n == 0 || a_cont.ncols() != n || b_cont.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{}, B has {} entries",
            a_cont.nrows(),
            a_cont.ncols(),
            b_cont.len()
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }

    let (a_bar, b_bar) = match method {
        ZohMethod::Series => {
            let mut aug = DMatrix::zeros(n + 1, n + 1);
            aug.view_mut((0, 0), (n, n)).copy_from(&(a_cont * delta));
            aug.view_mut((0, n), (n, 1)).copy_from(&(b_cont * delta));
            let e = aug.exp();
            (
                e.view((0, 0), (n, n)).into_owned(),
                e.view((0, n), (n, 1)).column(0).into_owned(),
            )
        }
        ZohMethod::Exact => {
            let sv = a_cont.singular_values();
            let min_singular = sv.min();
            if min_singular <= SINGULAR_TOLERANCE * sv.max().max(1.0) {
                return Err(Error::SingularState { min_singular });
            }
            let scaled = a_cont * delta;
            let a_bar = scaled.exp();
            let rhs = (&a_bar - DMatrix::identity(n, n)) * (b_cont * delta);
            let b_bar = scaled
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularState { min_singular })?;
            (a_bar, b_bar)
        }
    };

    if !a_bar.iter().chain(b_bar.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("discretize_zoh"));
    }
    Ok((a_bar, b_bar))
}

/// Elementwise scalar ZOH for a diagonal state matrix.
pub fn discretize_zoh_diagonal(
    a_diag: &DVector<f64>,
    b_cont: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if a_diag.len() != b_cont.len() {
        return Err(Error::DimensionMismatch(format!(
            "a_diag has {} entries, B has {}",
            a_diag.len(),
            b_cont.len()
        )));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let a_bar = a_diag.map(|a| (delta * a).exp());
    let b_bar = a_diag.zip_map(b_cont, |a, b| {
        let x = delta * a;
        // expm1(x)/x -> 1 as x -> 0
        let phi = if x.abs() < 1e-300 { 1.0 } else { x.exp_m1() / x };
        phi * delta * b
    });
    if !a_bar.iter().chain(b_bar.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("discretize_zoh_diagonal"));
    }
    Ok((a_bar, b_bar))
}
