//! Average accuracy, average incremental accuracy and forgetting.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::train::TaskAccuracyMatrix;

/// Per-task metrics; `fm[k - 2]` holds `FM_k` for `k = 2..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClMetrics {
    pub aa: Vec<f64>,
    pub aia: Vec<f64>,
    pub fm: Vec<f64>,
}

impl ClMetrics {
    pub fn final_aa(&self) -> f64 {
        *self.aa.last().expect("metrics cover at least one task")
    }
    pub fn final_fm(&self) -> Option<f64> {
        self.fm.last().copied()
    }
}

/// `AA_k = (1/k) sum_{j<=k} a_{k,j}` (1-based `k`).
pub fn average_accuracy(acc: &TaskAccuracyMatrix, k: usize) -> f64 {
    let row = &acc.rows()[k - 1];
    row.iter().sum::<f64>() / k as f64
}

/// `FM_k = (1/(k-1)) sum_{j<k} max_{j<=i<=k} (a_{i,j} - a_{k,j})` (1-based `k`).
///
/// The current row takes part in the maximum, so a task whose accuracy only
/// improved contributes zero rather than a negative amount.
pub fn forgetting(acc: &TaskAccuracyMatrix, k: usize) -> Result<f64> {
    if k < 2 || k > acc.tasks() {
        return Err(HarnessError::InsufficientTasks(k));
    }
    let total: f64 = (1..k)
        .map(|j| {
            (j..=k)
                .map(|i| acc.get(i - 1, j - 1) - acc.get(k - 1, j - 1))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / (k - 1) as f64)
}

pub fn compute_metrics(acc: &TaskAccuracyMatrix) -> Result<ClMetrics> {
    let t = acc.tasks();
    if t == 0 {
        return Err(HarnessError::InsufficientTasks(0));
    }
    let aa: Vec<f64> = (1..=t).map(|k| average_accuracy(acc, k)).collect();
    let mut running = 0.0;
    let aia = aa
        .iter()
        .enumerate()
        .map(|(i, v)| {
            running += v;
            running / (i + 1) as f64
        })
        .collect();
    let fm = (2..=t).map(|k| forgetting(acc, k)).collect::<Result<_>>()?;
    Ok(ClMetrics { aa, aia, fm })
}
