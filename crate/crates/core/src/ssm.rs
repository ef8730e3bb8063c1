//! Linear state-space models `h(t) = A h(t-1) + B x(t)`, `y(t) = C h(t)`.
//!
//! Two realizations are provided: [`DenseSsm`] with a general state matrix,
//! and [`DiagonalSsm`] whose state matrix is `diag(a_diag)` as in structured
//! SSM layers. Both expose the same [`StateSpace`] view so the simulation and
//! observability routines work on either.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Geometric-decay tolerance used to pick truncation horizons.
pub const HORIZON_TOLERANCE: f64 = 1e-12;
/// Upper bound on any automatically chosen truncation horizon.
pub const MAX_HORIZON: usize = 5000;
/// Largest condition number accepted by [`p_transform`].
pub const P_CONDITION_THRESHOLD: f64 = 1e6;

const POWER_ITERATIONS: usize = 50;

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Read-only view of an SSM shared by both realizations.
pub trait StateSpace {
    fn n(&self) -> usize;
    fn b(&self) -> &DVector<f64>;
    /// Output map, stored as a column but used as a row vector.
    fn c(&self) -> &DVector<f64>;
    /// `A h`
    fn apply_a(&self, h: &DVector<f64>) -> DVector<f64>;
    /// `(row A)` for a row vector stored as a column, i.e. `A^T row`.
    fn apply_a_transpose(&self, row: &DVector<f64>) -> DVector<f64>;
    fn state_matrix(&self) -> DMatrix<f64>;
    fn spectral_radius(&self) -> f64;

    /// `Some(a_diag)` when the state matrix is stored diagonally.
    fn diagonal(&self) -> Option<&DVector<f64>> {
        None
    }

    fn is_schur_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// General `(A, B, C)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSsm {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl DenseSsm {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be at least 1".into()));
        }
        if a.nrows() != n || a.ncols() != n || c.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B has {} entries, C has {}",
                a.nrows(),
                a.ncols(),
                n,
                c.len()
            )));
        }
        if !all_finite(a.iter().chain(b.iter()).chain(c.iter())) {
            return Err(Error::NonFinite("DenseSsm::new"));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
}

impl StateSpace for DenseSsm {
    fn n(&self) -> usize {
        self.b.len()
    }

    fn b(&self) -> &DVector<f64> {
        &self.b
    }

    fn c(&self) -> &DVector<f64> {
        &self.c
    }

    fn apply_a(&self, h: &DVector<f64>) -> DVector<f64> {
        &self.a * h
    }

    fn apply_a_transpose(&self, row: &DVector<f64>) -> DVector<f64> {
        self.a.tr_mul(row)
    }

    fn state_matrix(&self) -> DMatrix<f64> {
        self.a.clone()
    }

    fn spectral_radius(&self) -> f64 {
        spectral_radius_estimate(&self.a)
    }
}

/// Structured SSM with `A = diag(a_diag)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSsm {
    a_diag: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
}

impl DiagonalSsm {
    pub fn new(a_diag: DVector<f64>, b: DVector<f64>, c: DVector<f64>) -> Result<Self> {
        let n = a_diag.len();
        if n == 0 {
            return Err(Error::InvalidArgument("state dimension must be at least 1".into()));
        }
        if b.len() != n || c.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "a_diag has {} entries, B has {}, C has {}",
                n,
                b.len(),
                c.len()
            )));
        }
        if !all_finite(a_diag.iter().chain(b.iter()).chain(c.iter())) {
            return Err(Error::NonFinite("DiagonalSsm::new"));
        }
        Ok(Self { a_diag, b, c })
    }

    pub fn from_slices(a_diag: &[f64], b: &[f64], c: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(a_diag),
            DVector::from_column_slice(b),
            DVector::from_column_slice(c),
        )
    }

    pub fn a_diag(&self) -> &DVector<f64> {
        &self.a_diag
    }

    pub fn to_dense(&self) -> DenseSsm {
        DenseSsm {
            a: DMatrix::from_diagonal(&self.a_diag),
            b: self.b.clone(),
            c: self.c.clone(),
        }
    }
}

impl StateSpace for DiagonalSsm {
    fn n(&self) -> usize {
        self.a_diag.len()
    }

    fn b(&self) -> &DVector<f64> {
        &self.b
    }

    fn c(&self) -> &DVector<f64> {
        &self.c
    }

    fn apply_a(&self, h: &DVector<f64>) -> DVector<f64> {
        self.a_diag.component_mul(h)
    }

    fn apply_a_transpose(&self, row: &DVector<f64>) -> DVector<f64> {
        self.a_diag.component_mul(row)
    }

    fn state_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.a_diag)
    }

    fn spectral_radius(&self) -> f64 {
        self.a_diag.amax()
    }

    fn diagonal(&self) -> Option<&DVector<f64>> {
        Some(&self.a_diag)
    }
}

/// Either realization, as read from a serialized document.
#[derive(Debug, Clone, PartialEq)]
pub enum Ssm {
    Dense(DenseSsm),
    Diagonal(DiagonalSsm),
}

impl Ssm {
    pub fn to_dense(&self) -> DenseSsm {
        match self {
            Ssm::Dense(s) => s.clone(),
            Ssm::Diagonal(s) => s.to_dense(),
        }
    }

    fn inner(&self) -> &dyn StateSpace {
        match self {
            Ssm::Dense(s) => s,
            Ssm::Diagonal(s) => s,
        }
    }
}

impl From<DenseSsm> for Ssm {
    fn from(s: DenseSsm) -> Self {
        Ssm::Dense(s)
    }
}

impl From<DiagonalSsm> for Ssm {
    fn from(s: DiagonalSsm) -> Self {
        Ssm::Diagonal(s)
    }
}

impl StateSpace for Ssm {
    fn n(&self) -> usize {
        self.inner().n()
    }
    fn b(&self) -> &DVector<f64> {
        match self {
            Ssm::Dense(s) => s.b(),
            Ssm::Diagonal(s) => s.b(),
        }
    }
    fn c(&self) -> &DVector<f64> {
        match self {
            Ssm::Dense(s) => s.c(),
            Ssm::Diagonal(s) => s.c(),
        }
    }
    fn apply_a(&self, h: &DVector<f64>) -> DVector<f64> {
        self.inner().apply_a(h)
    }
    fn apply_a_transpose(&self, row: &DVector<f64>) -> DVector<f64> {
        self.inner().apply_a_transpose(row)
    }
    fn state_matrix(&self) -> DMatrix<f64> {
        self.inner().state_matrix()
    }
    fn spectral_radius(&self) -> f64 {
        self.inner().spectral_radius()
    }
    fn diagonal(&self) -> Option<&DVector<f64>> {
        match self {
            Ssm::Dense(_) => None,
            Ssm::Diagonal(s) => Some(s.a_diag()),
        }
    }
}

/// Spectral radius estimate from the growth rate of power iterates.
///
/// Uses `(|A^50 v| / |A^25 v|)^(1/25)`, which tolerates complex-conjugate
/// dominant pairs and cancels most of the transient from non-normal `A`.
pub fn spectral_radius_estimate(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // deterministic start vector with no special alignment to coordinate axes
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i as f64) * 0.618_033_988_7).fract());
    v /= v.norm();
    let half = POWER_ITERATIONS / 2;
    let mut log_growth_tail = 0.0;
    for k in 0..POWER_ITERATIONS {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        if !norm.is_finite() {
            return f64::INFINITY;
        }
        if k >= half {
            log_growth_tail += norm.ln();
        }
        v = w / norm;
    }
    (log_growth_tail / (POWER_ITERATIONS - half) as f64).exp()
}

/// Smallest `K` with `rho^K < 1e-12`, capped at [`MAX_HORIZON`].
pub fn default_horizon(spectral_radius: f64) -> usize {
    if spectral_radius <= 0.0 {
        return 1;
    }
    if spectral_radius >= 1.0 {
        return MAX_HORIZON;
    }
    let k = (HORIZON_TOLERANCE.ln() / spectral_radius.ln()).floor() as usize + 1;
    k.clamp(1, MAX_HORIZON)
}

/// Hidden states, inputs and outputs of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// Row `t` holds `h(t+1)`, the state after consuming `inputs[t]`.
    pub hidden: DMatrix<f64>,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// Runs the recurrence for `inputs.len()` steps starting from `h0`.
pub fn simulate<S: StateSpace + ?Sized>(
    ssm: &S,
    inputs: &[f64],
    h0: &DVector<f64>,
) -> Result<SimulationTrace> {
    let n = ssm.n();
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("simulation needs at least one input".into()));
    }
    if h0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, expected {n}",
            h0.len()
        )));
    }
    let mut hidden = DMatrix::zeros(inputs.len(), n);
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut h = h0.clone();
    for (t, &x) in inputs.iter().enumerate() {
        h = ssm.apply_a(&h) + ssm.b() * x;
        let y = ssm.c().dot(&h);
        if !y.is_finite() || !all_finite(h.iter()) {
            return Err(Error::NonFinite("simulate"));
        }
        hidden.set_row(t, &h.transpose());
        outputs.push(y);
    }
    Ok(SimulationTrace {
        hidden,
        inputs: inputs.to_vec(),
        outputs,
    })
}

/// Condition number from the ratio of extreme singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Change of state basis `(P A P^-1, P B, C P^-1)`.
pub fn p_transform(ssm: &DenseSsm, p: &DMatrix<f64>) -> Result<DenseSsm> {
    p_transform_with_threshold(ssm, p, P_CONDITION_THRESHOLD)
}

pub fn p_transform_with_threshold(
    ssm: &DenseSsm,
    p: &DMatrix<f64>,
    threshold: f64,
) -> Result<DenseSsm> {
    let n = ssm.n();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "transform is {}x{}, state dimension is {n}",
            p.nrows(),
            p.ncols()
        )));
    }
    let condition = condition_number(p);
    if !(condition < threshold) {
        return Err(Error::SingularTransform { condition, threshold });
    }
    let lu = p.clone().lu();
    let p_inv = lu
        .try_inverse()
        .ok_or(Error::SingularTransform { condition, threshold })?;
    let a = p * &ssm.a * &p_inv;
    let b = p * &ssm.b;
    // C P^-1 as a row is (P^-T C^T) as a column
    let c = p_inv.tr_mul(&ssm.c);
    DenseSsm::new(a, b, c)
}

/// The first `horizon` rows `C, CA, CA^2, ...` of the extended observability matrix.
pub fn truncated_observability<S: StateSpace + ?Sized>(ssm: &S, horizon: usize) -> Result<DMatrix<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let n = ssm.n();
    let mut out = DMatrix::zeros(horizon, n);
    let mut row = ssm.c().clone();
    for t in 0..horizon {
        if !all_finite(row.iter()) {
            return Err(Error::NonFinite("truncated_observability"));
        }
        out.set_row(t, &row.transpose());
        if t + 1 < horizon {
            row = ssm.apply_a_transpose(&row);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn memoryless_pass_through() {
        let ssm = DenseSsm::new(
            DMatrix::zeros(2, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let trace = simulate(&ssm, &[1.0, 1.0], &DVector::zeros(2)).unwrap();
        assert_eq!(trace.outputs, vec![1.0, 1.0]);
    }

    #[test]
    fn constant_state_under_identity() {
        let ssm = DenseSsm::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let h0 = DVector::from_vec(vec![1.0, 0.0]);
        let trace = simulate(&ssm, &[3.0, -2.0, 7.0], &h0).unwrap();
        assert_eq!(trace.outputs, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_impulse_response() {
        let ssm = DiagonalSsm::from_slices(&[0.5], &[1.0], &[1.0]).unwrap();
        let trace = simulate(&ssm, &[1.0, 0.0, 0.0], &DVector::zeros(1)).unwrap();
        assert_eq!(trace.outputs, vec![1.0, 0.5, 0.25]);
        for t in 0..3 {
            assert_eq!(trace.outputs[t], trace.hidden[(t, 0)]);
        }
    }

    #[test]
    fn simulate_rejects_empty_and_bad_h0() {
        let ssm = DiagonalSsm::from_slices(&[0.5], &[1.0], &[1.0]).unwrap();
        assert!(matches!(
            simulate(&ssm, &[], &DVector::zeros(1)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            simulate(&ssm, &[1.0], &DVector::zeros(2)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn simulate_overflow_is_non_finite() {
        let ssm = DiagonalSsm::from_slices(&[1e200], &[1.0], &[1.0]).unwrap();
        let err = simulate(&ssm, &[1.0, 1.0, 1.0], &DVector::zeros(1)).unwrap_err();
        assert_eq!(err, Error::NonFinite("simulate"));
    }

    #[test]
    fn constructors_validate() {
        assert!(DiagonalSsm::from_slices(&[], &[], &[]).is_err());
        assert!(DiagonalSsm::from_slices(&[0.1], &[1.0, 2.0], &[1.0]).is_err());
        assert!(DiagonalSsm::from_slices(&[f64::NAN], &[1.0], &[1.0]).is_err());
        assert!(DenseSsm::new(DMatrix::zeros(2, 3), DVector::zeros(2), DVector::zeros(2)).is_err());
    }

    #[test]
    fn identity_transform_is_noop() {
        let ssm = DenseSsm::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.5]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![-1.0, 0.5]),
        )
        .unwrap();
        let same = p_transform(&ssm, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(same, ssm);
    }

    #[test]
    fn permutation_relabels_diagonal_states() {
        let diag = DiagonalSsm::from_slices(&[0.1, 0.5, -0.3], &[1.0, 2.0, 3.0], &[0.5, -1.0, 2.0])
            .unwrap();
        let mut p = DMatrix::zeros(3, 3);
        // state i moves to slot perm[i]
        let perm = [2, 0, 1];
        for (i, &j) in perm.iter().enumerate() {
            p[(j, i)] = 1.0;
        }
        let moved = p_transform(&diag.to_dense(), &p).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            assert_eq!(moved.a()[(j, j)], diag.a_diag()[i]);
            assert_eq!(moved.b()[j], diag.b()[i]);
            assert_eq!(moved.c()[j], diag.c()[i]);
        }
        let x = [1.0, -0.5, 0.25, 2.0];
        let y1 = simulate(&diag, &x, &DVector::zeros(3)).unwrap().outputs;
        let y2 = simulate(&moved, &x, &DVector::zeros(3)).unwrap().outputs;
        for (a, b) in y1.iter().zip(&y2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn singular_transform_rejected() {
        let ssm = DiagonalSsm::from_slices(&[0.1, 0.2], &[1.0, 1.0], &[1.0, 1.0])
            .unwrap()
            .to_dense();
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(p_transform(&ssm, &p), Err(Error::SingularTransform { .. })));
        let mild = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-7]);
        assert!(matches!(p_transform(&ssm, &mild), Err(Error::SingularTransform { .. })));
    }

    #[test]
    fn observability_rows() {
        let nil = DenseSsm::new(
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let o = truncated_observability(&nil, 4).unwrap();
        assert_eq!(o.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0]);
        assert!(o.rows(1, 3).iter().all(|&v| v == 0.0));

        let ident = DenseSsm::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let o = truncated_observability(&ident, 5).unwrap();
        assert!(o.iter().all(|&v| v == 1.0));

        let diag = DiagonalSsm::from_slices(&[0.5, 0.25], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let o = truncated_observability(&diag, 3).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.5, 0.25, 0.25, 0.0625]);
        assert_eq!(o, expected);
        assert!(truncated_observability(&diag, 0).is_err());
    }

    #[test]
    fn horizon_from_decay_bound() {
        assert_eq!(default_horizon(0.0), 1);
        assert_eq!(default_horizon(1.0), MAX_HORIZON);
        let k = default_horizon(0.5);
        assert!(0.5f64.powi(k as i32) < HORIZON_TOLERANCE);
        assert!(0.5f64.powi(k as i32 - 1) >= HORIZON_TOLERANCE);
        assert_eq!(default_horizon(0.999_999), MAX_HORIZON);
    }

    #[test]
    fn spectral_radius_of_rotation_pair() {
        // complex pair 0.9 e^{+-i pi/3}, plus a smaller real mode
        let (s, c) = (std::f64::consts::FRAC_PI_3.sin(), std::f64::consts::FRAC_PI_3.cos());
        let a = DMatrix::from_row_slice(3, 3, &[0.9 * c, -0.9 * s, 0.0, 0.9 * s, 0.9 * c, 0.0, 0.0, 0.0, 0.3]);
        assert_abs_diff_eq!(spectral_radius_estimate(&a), 0.9, epsilon = 1e-9);
        let d = DiagonalSsm::from_slices(&[0.2, -0.7], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(d.spectral_radius(), 0.7);
        assert!(d.is_schur_stable());
    }
}
