//! State regularizers between a frozen and a trainable layer, with gradients
//! carried back from the aggregated states to the discretized ones.

use nalgebra::DMatrix;
use obsgrass::loss::{b_deviation, baseline_output_mse, baseline_param_mse};
use obsgrass::states::soft_normalize_derivative;
use obsgrass::{aggregate_states, ism_gradient, ism_loss, AggregatedStates, LossConfig, LossVariant, SequenceStateBundle, StateSpace};

use crate::error::{HarnessError, Result};
use crate::model::StateGrad;

/// Gradient with respect to `(A~, B~, C~)`, each `tau x n`.
struct AggregatedGrad {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

/// Regularizer value for one sample and one layer, with its gradient with
/// respect to the trainable layer's states. `inputs` drives the output
/// baseline; it is cycled to `tau_outputs` steps.
pub fn regularizer_with_gradient(
    config: &LossConfig,
    old: &SequenceStateBundle,
    new: &SequenceStateBundle,
    inputs: &[f64],
) -> Result<(f64, StateGrad)> {
    let (tau, o, n) = (new.tau(), new.outer(), new.n());
    if (old.tau(), old.outer(), old.n()) != (tau, o, n) {
        return Err(HarnessError::ShapeMismatch("old and new state bundles differ in shape".into()));
    }
    if config.variant == LossVariant::None {
        return Ok((0.0, StateGrad::zeros(tau, o, n)));
    }
    let agg_old = aggregate_states(old);
    let agg_new = aggregate_states(new);
    let (value, g) = match config.variant {
        LossVariant::Ism => ism_term(&agg_old, &agg_new)?,
        LossVariant::IsmPlus => {
            let (v, mut g) = ism_term(&agg_old, &agg_new)?;
            let dev = b_deviation(&agg_old, &agg_new)?;
            g.b = (agg_new.b_tilde() - agg_old.b_tilde()) * (2.0 * config.gamma / tau as f64);
            (v + config.gamma * dev, g)
        }
        LossVariant::ParamMse => param_term(&agg_old, &agg_new)?,
        LossVariant::OutputMse => output_term(&agg_old, &agg_new, inputs, config.horizon_tau_outputs)?,
        LossVariant::None => unreachable!(),
    };
    Ok((value, chain_through_aggregation(new, &g)))
}

fn ism_term(old: &AggregatedStates, new: &AggregatedStates) -> Result<(f64, AggregatedGrad)> {
    let (value, _) = ism_loss(old, new)?;
    let (a, c) = ism_gradient(old, new)?;
    let b = DMatrix::zeros(new.tau(), new.n());
    Ok((value, AggregatedGrad { a, b, c }))
}

/// Mean over positions of the squared parameter deviation of each slice.
fn param_term(old: &AggregatedStates, new: &AggregatedStates) -> Result<(f64, AggregatedGrad)> {
    let tau = new.tau();
    let value = (0..tau)
        .map(|t| baseline_param_mse(&old.slice(t), &new.slice(t)))
        .sum::<Result<f64, _>>()?
        / tau as f64;
    let s = 2.0 / tau as f64;
    Ok((
        value,
        AggregatedGrad {
            a: (new.a_tilde() - old.a_tilde()) * s,
            b: (new.b_tilde() - old.b_tilde()) * s,
            c: (new.c_tilde() - old.c_tilde()) * s,
        },
    ))
}

/// Mean over positions of the output deviation of each slice SSM driven by
/// the sample; gradients by forward sensitivities of the recurrence.
fn output_term(
    old: &AggregatedStates,
    new: &AggregatedStates,
    inputs: &[f64],
    horizon: usize,
) -> Result<(f64, AggregatedGrad)> {
    if inputs.is_empty() {
        return Err(HarnessError::ShapeMismatch("output regularizer needs a nonempty input".into()));
    }
    let (tau, n) = (new.tau(), new.n());
    let x: Vec<f64> = inputs.iter().copied().cycle().take(horizon).collect();
    let mut value = 0.0;
    let mut g = AggregatedGrad {
        a: DMatrix::zeros(tau, n),
        b: DMatrix::zeros(tau, n),
        c: DMatrix::zeros(tau, n),
    };
    let inv_tau = 1.0 / tau as f64;
    for t in 0..tau {
        let (so, sn) = (old.slice(t), new.slice(t));
        value += baseline_output_mse(&so, &sn, &x)?;
        let (a1, b1, c1) = (so.a_diag(), so.b(), so.c());
        let (a2, b2, c2) = (sn.a_diag(), sn.b(), sn.c());
        let mut h1 = vec![0.0; n];
        let mut h2 = vec![0.0; n];
        let mut dh_da = vec![0.0; n];
        let mut dh_db = vec![0.0; n];
        for &xs in &x {
            let mut e = 0.0;
            for i in 0..n {
                // sensitivities use h2(s-1), so update them first
                dh_da[i] = h2[i] + a2[i] * dh_da[i];
                dh_db[i] = xs + a2[i] * dh_db[i];
                h1[i] = a1[i] * h1[i] + b1[i] * xs;
                h2[i] = a2[i] * h2[i] + b2[i] * xs;
                e += c2[i] * h2[i] - c1[i] * h1[i];
            }
            let w = 2.0 * e * inv_tau;
            for i in 0..n {
                g.c[(t, i)] += w * h2[i];
                g.a[(t, i)] += w * c2[i] * dh_da[i];
                g.b[(t, i)] += w * c2[i] * dh_db[i];
            }
        }
    }
    Ok((value * inv_tau, g))
}

/// `A~ = SN(mean_k A_bar)`, `B~ = SN(mean_k B_bar)`, `C~ = SN(C)`.
fn chain_through_aggregation(bundle: &SequenceStateBundle, g: &AggregatedGrad) -> StateGrad {
    let (tau, o, n) = (bundle.tau(), bundle.outer(), bundle.n());
    let inv_o = 1.0 / o as f64;
    let mut out = StateGrad::zeros(tau, o, n);
    for t in 0..tau {
        for i in 0..n {
            let (mut ma, mut mb) = (0.0, 0.0);
            for k in 0..o {
                ma += bundle.a_bar(t, k, i);
                mb += bundle.b_bar(t, k, i);
            }
            let ga = g.a[(t, i)] * soft_normalize_derivative(ma * inv_o) * inv_o;
            let gb = g.b[(t, i)] * soft_normalize_derivative(mb * inv_o) * inv_o;
            for k in 0..o {
                let idx = (t * o + k) * n + i;
                out.a_bar[idx] = ga;
                out.b_bar[idx] = gb;
            }
            out.c[t * n + i] = g.c[(t, i)] * soft_normalize_derivative(bundle.c()[(t, i)]);
        }
    }
    out
}
