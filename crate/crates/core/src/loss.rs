//! Subspace regularizers for continual learning on SSM layers.
//!
//! [`ism_loss`] penalizes drift of the observability subspace of each
//! aggregated position `(A~_t, C~_t)` between a frozen model and the model
//! under training, using the rank-one distance. [`ism_plus_loss`] adds a
//! Frobenius penalty on `B~`. Two parameter/output baselines are provided for
//! comparison.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{rank_one_terms, within_guard, DEFAULT_EQUALITY_EPSILON};
use crate::ssm::{simulate, DiagonalSsm, StateSpace};
use crate::states::AggregatedStates;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    Ism,
    IsmPlus,
    ParamMse,
    OutputMse,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Sequence length summed over by the output baseline.
    #[serde(rename = "tau_outputs", default = "default_tau_outputs")]
    pub horizon_tau_outputs: usize,
}

fn default_tau_outputs() -> usize {
    16
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            variant: LossVariant::None,
            lambda: 0.0,
            gamma: 0.0,
            horizon_tau_outputs: default_tau_outputs(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.horizon_tau_outputs == 0 {
            return Err(Error::InvalidArgument("tau_outputs must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether the regularizer contributes at all.
    pub fn is_active(&self) -> bool {
        self.variant != LossVariant::None && self.lambda > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub per_slice: Vec<f64>,
}

fn check_same_shape(old: &AggregatedStates, new: &AggregatedStates) -> Result<()> {
    if old.tau() != new.tau() || old.n() != new.n() {
        return Err(Error::ShapeMismatch(format!(
            "old states are {}x{}, new states are {}x{}",
            old.tau(),
            old.n(),
            new.tau(),
            new.n()
        )));
    }
    Ok(())
}

fn row(m: &DMatrix<f64>, t: usize) -> Vec<f64> {
    m.row(t).iter().copied().collect()
}

/// Rank-one distance between two `(a, c)` slices with the equality guard.
pub fn slice_distance(a_old: &[f64], c_old: &[f64], a_new: &[f64], c_new: &[f64]) -> Result<f64> {
    if within_guard(a_old, c_old, a_new, c_new, DEFAULT_EQUALITY_EPSILON) {
        return Ok(0.0);
    }
    let terms = rank_one_terms(a_old, c_old, a_new, c_new)?;
    Ok((1.0 - terms.cos2()).clamp(0.0, 1.0))
}

/// Mean over positions of the rank-one distance, plus the per-position values.
pub fn ism_loss(old: &AggregatedStates, new: &AggregatedStates) -> Result<(f64, Vec<f64>)> {
    check_same_shape(old, new)?;
    let per_slice = (0..old.tau())
        .map(|t| {
            slice_distance(
                &row(old.a_tilde(), t),
                &row(old.c_tilde(), t),
                &row(new.a_tilde(), t),
                &row(new.c_tilde(), t),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let value = per_slice.iter().sum::<f64>() / per_slice.len() as f64;
    Ok((value, per_slice))
}

/// Mean over positions of `||B~_old,t - B~_new,t||^2`.
pub fn b_deviation(old: &AggregatedStates, new: &AggregatedStates) -> Result<f64> {
    check_same_shape(old, new)?;
    Ok((old.b_tilde() - new.b_tilde()).norm_squared() / old.tau() as f64)
}

pub fn ism_plus_loss(old: &AggregatedStates, new: &AggregatedStates, gamma: f64) -> Result<f64> {
    let (ism, _) = ism_loss(old, new)?;
    if gamma == 0.0 {
        return Ok(ism);
    }
    Ok(ism + gamma * b_deviation(old, new)?)
}

/// `||A - A'||_F^2 + ||B - B'||_F^2 + ||C - C'||_F^2`.
pub fn baseline_param_mse<S1, S2>(old: &S1, new: &S2) -> Result<f64>
where
    S1: StateSpace + ?Sized,
    S2: StateSpace + ?Sized,
{
    if old.n() != new.n() {
        return Err(Error::ShapeMismatch(format!(
            "state dimensions differ: {} vs {}",
            old.n(),
            new.n()
        )));
    }
    let da = (old.state_matrix() - new.state_matrix()).norm_squared();
    let db = (old.b() - new.b()).norm_squared();
    let dc = (old.c() - new.c()).norm_squared();
    Ok(da + db + dc)
}

/// `sum_t (y_new(t) - y_old(t))^2` with both models started from rest.
pub fn baseline_output_mse(old: &DiagonalSsm, new: &DiagonalSsm, inputs: &[f64]) -> Result<f64> {
    let y_old = simulate(old, inputs, &nalgebra::DVector::zeros(old.n()))?.outputs;
    let y_new = simulate(new, inputs, &nalgebra::DVector::zeros(new.n()))?.outputs;
    Ok(y_old.iter().zip(&y_new).map(|(a, b)| (a - b).powi(2)).sum())
}

/// `cls + lambda * reg`.
pub fn total_loss(cls: f64, reg: f64, config: &LossConfig) -> LossValue {
    total_loss_with_slices(cls, reg, Vec::new(), config)
}

pub fn total_loss_with_slices(cls: f64, reg: f64, per_slice: Vec<f64>, config: &LossConfig) -> LossValue {
    LossValue {
        total: cls + config.lambda * reg,
        cls,
        reg,
        per_slice,
    }
}

/// Rank-one distance between a frozen `(a_old, c_old)` and a trainable
/// `(a_new, c_new)`, with its gradient in the trainable arguments.
///
/// The gradient is that of the smooth expression `1 - ||G3||^2 / (Tr G1 Tr G2)`;
/// the equality guard only affects the returned value.
pub fn slice_distance_with_gradient(
    a_old: &[f64],
    c_old: &[f64],
    a_new: &[f64],
    c_new: &[f64],
    grad_a: &mut [f64],
    grad_c: &mut [f64],
) -> Result<f64> {
    let n = a_new.len();
    let terms = rank_one_terms(a_old, c_old, a_new, c_new)?;
    let (f, t1, t2) = (terms.cross, terms.trace1, terms.trace2);
    let scale = -1.0 / (t1 * t2);
    let ratio = f / t2;
    for j in 0..n {
        let (aj, cj) = (a_new[j], c_new[j]);
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for (&ai, &ci) in a_old.iter().zip(c_old) {
            let inv = 1.0 / (1.0 - ai * aj);
            let w = ci * ci * inv * inv;
            s2 += w;
            s3 += w * ai * inv;
        }
        let self_inv = 1.0 / (1.0 - aj * aj);
        let df_dc = 2.0 * cj * s2;
        let df_da = 2.0 * cj * cj * s3;
        let dt_dc = 2.0 * cj * self_inv;
        let dt_da = 2.0 * aj * cj * cj * self_inv * self_inv;
        grad_c[j] = scale * (df_dc - ratio * dt_dc);
        grad_a[j] = scale * (df_da - ratio * dt_da);
    }
    if within_guard(a_old, c_old, a_new, c_new, DEFAULT_EQUALITY_EPSILON) {
        return Ok(0.0);
    }
    Ok((1.0 - terms.cos2()).clamp(0.0, 1.0))
}

/// Gradient of the [`ism_loss`] value with respect to `A~` and `C~` of the new states.
pub fn ism_gradient(old: &AggregatedStates, new: &AggregatedStates) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_same_shape(old, new)?;
    let (tau, n) = (new.tau(), new.n());
    let inv_tau = 1.0 / tau as f64;
    let mut da = DMatrix::zeros(tau, n);
    let mut dc = DMatrix::zeros(tau, n);
    let mut ga = vec![0.0; n];
    let mut gc = vec![0.0; n];
    for t in 0..tau {
        slice_distance_with_gradient(
            &row(old.a_tilde(), t),
            &row(old.c_tilde(), t),
            &row(new.a_tilde(), t),
            &row(new.c_tilde(), t),
            &mut ga,
            &mut gc,
        )?;
        for j in 0..n {
            da[(t, j)] = ga[j] * inv_tau;
            dc[(t, j)] = gc[j] * inv_tau;
        }
    }
    Ok((da, dc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grassmann::simplified_distance;
    use crate::ssm::DenseSsm;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn states(a: &[f64], b: &[f64], c: &[f64], tau: usize, n: usize) -> AggregatedStates {
        AggregatedStates::new(
            DMatrix::from_row_slice(tau, n, a),
            DMatrix::from_row_slice(tau, n, b),
            DMatrix::from_row_slice(tau, n, c),
        )
        .unwrap()
    }

    #[test]
    fn identical_states_cost_nothing() {
        let s = states(&[0.1, 0.4, -0.3, 0.2], &[0.1; 4], &[0.5, -0.2, 0.3, 0.9], 2, 2);
        let (v, per) = ism_loss(&s, &s).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(per, vec![0.0, 0.0]);
        assert_eq!(ism_plus_loss(&s, &s, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn sign_flip_spans_same_line() {
        let old = states(&[0.5], &[0.0], &[0.9], 1, 1);
        let same = states(&[0.5], &[0.0], &[0.9], 1, 1);
        let flipped = states(&[0.5], &[0.0], &[-0.9], 1, 1);
        assert_eq!(ism_loss(&old, &same).unwrap().0, 0.0);
        assert_abs_diff_eq!(ism_loss(&old, &flipped).unwrap().0, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn loss_is_mean_of_slice_distances() {
        let old = states(&[0.1, 0.4, -0.3, 0.2], &[0.0; 4], &[0.5, -0.2, 0.3, 0.9], 2, 2);
        let new = states(&[0.2, 0.1, 0.3, -0.2], &[0.0; 4], &[0.4, 0.6, -0.3, 0.5], 2, 2);
        let (v, per) = ism_loss(&old, &new).unwrap();
        let d0 = simplified_distance(&old.slice(0), &new.slice(0), 1e-12).unwrap().value;
        let d1 = simplified_distance(&old.slice(1), &new.slice(1), 1e-12).unwrap().value;
        assert_abs_diff_eq!(per[0], d0, epsilon = 1e-15);
        assert_abs_diff_eq!(per[1], d1, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.5 * (d0 + d1), epsilon = 1e-15);
    }

    #[test]
    fn plus_variant_adds_b_penalty() {
        let old = states(&[0.1, 0.2, 0.3, 0.4], &[0.2, 0.3, 0.4, 0.5], &[0.5; 4], 1, 4);
        let new = states(&[0.1, 0.2, 0.3, 0.4], &[0.3, 0.4, 0.5, 0.6], &[0.5; 4], 1, 4);
        assert_abs_diff_eq!(ism_plus_loss(&old, &new, 1.0).unwrap(), 0.04, epsilon = 1e-12);
        assert_eq!(ism_plus_loss(&old, &new, 0.0).unwrap(), ism_loss(&old, &new).unwrap().0);
    }

    #[test]
    fn shape_mismatch() {
        let a = states(&[0.1, 0.2], &[0.0; 2], &[0.5; 2], 1, 2);
        let b = states(&[0.1, 0.2], &[0.0; 2], &[0.5; 2], 2, 1);
        assert!(matches!(ism_loss(&a, &b), Err(Error::ShapeMismatch(_))));
        assert!(matches!(ism_gradient(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn param_baseline() {
        let s = DenseSsm::new(
            DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]),
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.5, 0.6]),
        )
        .unwrap();
        assert_eq!(baseline_param_mse(&s, &s).unwrap(), 0.0);
        let t = DenseSsm::new(s.a().clone(), s.b().clone(), DVector::from_vec(vec![1.5, 0.6])).unwrap();
        assert_eq!(baseline_param_mse(&s, &t).unwrap(), 1.0);
        let u = DiagonalSsm::from_slices(&[0.1], &[1.0], &[1.0]).unwrap();
        assert!(matches!(baseline_param_mse(&s, &u), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn output_baseline_memoryless() {
        let old = DiagonalSsm::from_slices(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        let new = DiagonalSsm::from_slices(&[0.0, 0.0], &[1.0, 0.0], &[1.5, 0.0]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let expected: f64 = x.iter().map(|v| 0.25 * v * v).sum();
        assert_abs_diff_eq!(baseline_output_mse(&old, &new, &x).unwrap(), expected, epsilon = 1e-15);
        assert_eq!(baseline_output_mse(&old, &old, &x).unwrap(), 0.0);
    }

    #[test]
    fn total_composition() {
        let cfg = LossConfig { lambda: 0.5, ..LossConfig::default() };
        let v = total_loss(1.0, 2.0, &cfg);
        assert_eq!(v.total, 2.0);
        let zero = total_loss(1.25, 7.0, &LossConfig::default());
        assert_eq!(zero.total, 1.25);
    }

    #[test]
    fn scalar_gradient_closed_form() {
        // n = 1: d = 1 - (1 - a1^2)(1 - a2^2)/(1 - a1 a2)^2, independent of c,
        // dd/da2 = -2 (1 - a1^2)(a1 - a2)/(1 - a1 a2)^3
        let (a1, c1, a2, c2) = (0.3, 0.8, -0.45, 0.6);
        let mut ga = [0.0];
        let mut gc = [0.0];
        let d = slice_distance_with_gradient(&[a1], &[c1], &[a2], &[c2], &mut ga, &mut gc).unwrap();
        let expected_d = 1.0 - (1.0 - a1 * a1) * (1.0 - a2 * a2) / (1.0f64 - a1 * a2).powi(2);
        let expected_ga = -2.0 * (1.0 - a1 * a1) * (a1 - a2) / (1.0f64 - a1 * a2).powi(3);
        assert_abs_diff_eq!(d, expected_d, epsilon = 1e-14);
        assert_abs_diff_eq!(ga[0], expected_ga, epsilon = 1e-10);
        assert_abs_diff_eq!(gc[0], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn config_json_keys() {
        let cfg: LossConfig =
            serde_json::from_str(r#"{"variant": "ism_plus", "lambda": 2.0, "gamma": 0.1, "tau_outputs": 8}"#)
                .unwrap();
        assert_eq!(cfg.variant, LossVariant::IsmPlus);
        assert_eq!(cfg.horizon_tau_outputs, 8);
        let back = serde_json::to_value(cfg).unwrap();
        assert_eq!(back["tau_outputs"], 8);
        assert!(LossConfig { lambda: -1.0, ..cfg }.validate().is_err());
        assert!(serde_json::from_str::<LossConfig>(r#"{"variant": "ewc"}"#).is_err());
    }
}
