//! Soft normalization and aggregation of selective-scan states into one
//! Schur-stable diagonal SSM per sequence position.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ssm::DiagonalSsm;

/// Largest double strictly below one.
const OPEN_UNIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// `SN(x) = 2 / (1 + exp(-x)) - 1`, kept strictly inside `(-1, 1)`.
///
/// Evaluated as `tanh(x / 2)`, which is the same function without the
/// cancellation near zero. Saturated values are pulled back to the largest
/// double below one in magnitude.
#[inline]
pub fn soft_normalize(x: f64) -> f64 {
    (0.5 * x).tanh().clamp(-OPEN_UNIT, OPEN_UNIT)
}

/// `dSN/dx = (1 - SN(x)^2) / 2`
#[inline]
pub fn soft_normalize_derivative(x: f64) -> f64 {
    let s = (0.5 * x).tanh();
    0.5 * (1.0 - s * s)
}

/// Discretized states of one selective-scan layer for one sequence.
///
/// `a_bar` and `b_bar` are `tau x o x n` tensors flattened as
/// `(t * o + k) * n + i`; `c` is `tau x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceStateBundle {
    a_bar: Vec<f64>,
    b_bar: Vec<f64>,
    c: DMatrix<f64>,
    tau: usize,
    o: usize,
    n: usize,
}

impl SequenceStateBundle {
    pub fn new(
        a_bar: Vec<f64>,
        b_bar: Vec<f64>,
        c: DMatrix<f64>,
        tau: usize,
        o: usize,
        n: usize,
    ) -> Result<Self> {
        if tau == 0 || o == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "bundle dimensions must be positive (tau={tau}, o={o}, n={n})"
            )));
        }
        let len = tau * o * n;
        if a_bar.len() != len || b_bar.len() != len || c.nrows() != tau || c.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected A_bar/B_bar with {len} entries and C of {tau}x{n}, got {}/{} and {}x{}",
                a_bar.len(),
                b_bar.len(),
                c.nrows(),
                c.ncols()
            )));
        }
        if !a_bar.iter().chain(&b_bar).chain(c.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("SequenceStateBundle::new"));
        }
        Ok(Self { a_bar, b_bar, c, tau, o, n })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }
    pub fn outer(&self) -> usize {
        self.o
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn a_bar(&self, t: usize, k: usize, i: usize) -> f64 {
        self.a_bar[(t * self.o + k) * self.n + i]
    }
    pub fn b_bar(&self, t: usize, k: usize, i: usize) -> f64 {
        self.b_bar[(t * self.o + k) * self.n + i]
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

/// Per-position soft-normalized `(A~, B~, C~)`, each `tau x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedStates {
    a_tilde: DMatrix<f64>,
    b_tilde: DMatrix<f64>,
    c_tilde: DMatrix<f64>,
}

impl AggregatedStates {
    /// Builds from already-normalized matrices; every entry must lie in `(-1, 1)`.
    pub fn new(a_tilde: DMatrix<f64>, b_tilde: DMatrix<f64>, c_tilde: DMatrix<f64>) -> Result<Self> {
        let shape = a_tilde.shape();
        if shape.0 == 0 || shape.1 == 0 || b_tilde.shape() != shape || c_tilde.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "A~ {:?}, B~ {:?}, C~ {:?}",
                shape,
                b_tilde.shape(),
                c_tilde.shape()
            )));
        }
        if !a_tilde
            .iter()
            .chain(b_tilde.iter())
            .chain(c_tilde.iter())
            .all(|v| v.abs() < 1.0)
        {
            return Err(Error::InvalidArgument(
                "aggregated states must lie strictly inside (-1, 1)".into(),
            ));
        }
        Ok(Self { a_tilde, b_tilde, c_tilde })
    }

    /// Applies `SN` to raw (unnormalized) per-position values.
    pub fn from_raw(a_raw: &DMatrix<f64>, b_raw: &DMatrix<f64>, c_raw: &DMatrix<f64>) -> Result<Self> {
        Self::new(
            a_raw.map(soft_normalize),
            b_raw.map(soft_normalize),
            c_raw.map(soft_normalize),
        )
    }

    pub fn tau(&self) -> usize {
        self.a_tilde.nrows()
    }
    pub fn n(&self) -> usize {
        self.a_tilde.ncols()
    }
    pub fn a_tilde(&self) -> &DMatrix<f64> {
        &self.a_tilde
    }
    pub fn b_tilde(&self) -> &DMatrix<f64> {
        &self.b_tilde
    }
    pub fn c_tilde(&self) -> &DMatrix<f64> {
        &self.c_tilde
    }

    /// The diagonal SSM `(diag(A~_t), B~_t, C~_t)` at position `t`.
    pub fn slice(&self, t: usize) -> DiagonalSsm {
        let row = |m: &DMatrix<f64>| DVector::from_iterator(m.ncols(), m.row(t).iter().copied());
        DiagonalSsm::new(row(&self.a_tilde), row(&self.b_tilde), row(&self.c_tilde))
            .expect("aggregated slices are finite and shape-consistent")
    }
}

/// Averages `A_bar`, `B_bar` over the outer channel dimension and applies `SN`;
/// `C~ = SN(C)`. Positions along the sequence stay independent.
pub fn aggregate_states(bundle: &SequenceStateBundle) -> AggregatedStates {
    let (tau, o, n) = (bundle.tau, bundle.o, bundle.n);
    let inv_o = 1.0 / o as f64;
    let mean_over_outer = |src: &[f64]| {
        DMatrix::from_fn(tau, n, |t, i| {
            let sum: f64 = (0..o).map(|k| src[(t * o + k) * n + i]).sum();
            soft_normalize(sum * inv_o)
        })
    };
    AggregatedStates {
        a_tilde: mean_over_outer(&bundle.a_bar),
        b_tilde: mean_over_outer(&bundle.b_bar),
        c_tilde: bundle.c.map(soft_normalize),
    }
}
