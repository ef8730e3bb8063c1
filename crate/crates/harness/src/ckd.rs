//! Centered kernel disparity (`1 - linear CKA`) and state drift across
//! checkpoints.

use nalgebra::DMatrix;
use obsgrass::aggregate_states;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::model::Model;

/// Self-HSIC values below this are treated as a constant representation.
const KERNEL_FLOOR: f64 = 1e-300;

fn centered(w: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = w.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// `1 - HSIC(W1, W2) / sqrt(HSIC(W1, W1) HSIC(W2, W2))` with linear kernels.
///
/// Rows are observations. With column-centered `X`, `Y`, the linear-kernel
/// ratio reduces to `||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F)`.
pub fn ckd(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64> {
    if w1.nrows() != w2.nrows() || w1.nrows() < 2 {
        return Err(HarnessError::ShapeMismatch(format!(
            "CKD needs the same number (>= 2) of rows, got {} and {}",
            w1.nrows(),
            w2.nrows()
        )));
    }
    let (x, y) = (centered(w1), centered(w2));
    let xx = (x.transpose() * &x).norm();
    let yy = (y.transpose() * &y).norm();
    for s in [xx, yy] {
        if !(s > KERNEL_FLOOR) {
            return Err(HarnessError::DegenerateKernel(s));
        }
    }
    let cross = (y.transpose() * &x).norm_squared();
    Ok(1.0 - cross / (xx * yy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateLabel {
    A,
    B,
    C,
}

/// `per_layer[(l, c)]`: CKD of layer `l`'s state at checkpoint `c` against
/// the first checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkdReport {
    pub state_label: StateLabel,
    pub per_layer: DMatrix<f64>,
}

impl CkdReport {
    /// Mean over layers at checkpoint `c`.
    pub fn mean_at(&self, c: usize) -> f64 {
        self.per_layer.column(c).mean()
    }
}

/// Aggregated states of every probe sample, one row per sample, columns the
/// flattened `tau x n` state, per layer and per state label.
fn state_features(model: &Model, probes: &[&[f64]]) -> Result<Vec<[DMatrix<f64>; 3]>> {
    let layers = model.config().layers;
    let mut rows: Vec<[Vec<f64>; 3]> = vec![Default::default(); layers];
    let mut width = 0;
    for x in probes {
        let pass = model.forward(x);
        for (l, acc) in rows.iter_mut().enumerate() {
            let agg = aggregate_states(&model.state_bundle(&pass, l)?);
            width = agg.tau() * agg.n();
            // row-major flattening of each tau x n matrix
            for (dst, m) in acc.iter_mut().zip([agg.a_tilde(), agg.b_tilde(), agg.c_tilde()]) {
                dst.extend(m.transpose().iter());
            }
        }
    }
    Ok(rows
        .into_iter()
        .map(|r| r.map(|v| DMatrix::from_row_slice(probes.len(), width, &v)))
        .collect())
}

/// Passes the probe inputs through every checkpoint and reports, for each of
/// `A~`, `B~`, `C~`, the CKD of each layer against the first checkpoint.
pub fn ckd_state_drift(checkpoints: &[Model], probes: &[&[f64]]) -> Result<[CkdReport; 3]> {
    if checkpoints.len() < 2 {
        return Err(HarnessError::Config("state drift needs at least two checkpoints".into()));
    }
    if probes.len() < 2 {
        return Err(HarnessError::Config("state drift needs at least two probe inputs".into()));
    }
    let layers = checkpoints[0].config().layers;
    let feats = checkpoints
        .iter()
        .map(|m| state_features(m, probes))
        .collect::<Result<Vec<_>>>()?;
    let labels = [StateLabel::A, StateLabel::B, StateLabel::C];
    let mut reports = labels.map(|state_label| CkdReport {
        state_label,
        per_layer: DMatrix::zeros(layers, checkpoints.len()),
    });
    for (s, report) in reports.iter_mut().enumerate() {
        for l in 0..layers {
            for c in 0..checkpoints.len() {
                report.per_layer[(l, c)] = ckd(&feats[0][l][s], &feats[c][l][s])?;
            }
        }
    }
    Ok(reports)
}
