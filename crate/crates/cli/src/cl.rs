//! End-to-end continual-learning runs and their CSV/JSON artifacts.

use std::fs;
use std::io::Write;
use std::path::Path;

use obsgrass::LossVariant;
use obsgrass_harness::{
    ckd_state_drift, compute_metrics, generate_task_stream, train_sequential, Checkpoint, CkdReport, ClMetrics, Model,
    RunConfig, TaskAccuracyMatrix,
};
use serde::Serialize;

use crate::error::Result;

/// Bundled Inf-SSM configuration with the tuned regularization weight.
pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

pub fn default_config() -> RunConfig {
    RunConfig::from_json(DEFAULT_CONFIG).expect("bundled configuration is valid")
}

/// The same run with the regularizer switched off (plain sequential fine-tuning).
pub fn sequential_baseline(config: &RunConfig) -> RunConfig {
    let mut cfg = config.clone();
    cfg.loss.variant = LossVariant::None;
    cfg.loss.lambda = 0.0;
    cfg
}

#[derive(Debug, Clone, Serialize)]
pub struct ClRunReport {
    pub config: RunConfig,
    pub accuracy: TaskAccuracyMatrix,
    pub metrics: ClMetrics,
    /// State drift of the first task's test inputs, one report per A, B, C.
    pub ckd: Option<Vec<CkdReport>>,
    #[serde(skip)]
    pub checkpoints: Vec<Checkpoint>,
}

pub fn run_cl(config: &RunConfig, with_ckd: bool) -> Result<ClRunReport> {
    config.validate()?;
    let stream = generate_task_stream(&config.stream)?;
    let outcome = train_sequential(&stream, &config.model, &config.loss, &config.optimizer, config.seed)?;
    let metrics = compute_metrics(&outcome.accuracy)?;
    let ckd = if with_ckd && outcome.checkpoints.len() >= 2 {
        let probe_split = &stream.tasks[0].test;
        let probes: Vec<&[f64]> = (0..probe_split.len()).map(|i| probe_split.sample(i)).collect();
        let models: Vec<Model> = outcome.checkpoints.iter().map(|c| c.model.clone()).collect();
        Some(ckd_state_drift(&models, &probes)?.to_vec())
    } else {
        None
    };
    Ok(ClRunReport {
        config: config.clone(),
        accuracy: outcome.accuracy,
        metrics,
        ckd,
        checkpoints: outcome.checkpoints,
    })
}

pub const ACCURACY_HEADER: [&str; 3] = ["task_k", "task_j", "acc"];
pub const METRICS_HEADER: [&str; 4] = ["k", "AA", "AIA", "FM"];
pub const CKD_HEADER: [&str; 4] = ["state", "layer", "task", "ckd"];

/// Tasks are numbered from 1 in every table.
pub fn write_accuracy_csv(w: impl Write, acc: &TaskAccuracyMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ACCURACY_HEADER)?;
    for (k, row) in acc.rows().iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            out.write_record([(k + 1).to_string(), (j + 1).to_string(), a.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `FM` is empty for `k = 1`, where forgetting is undefined.
pub fn write_metrics_csv(w: impl Write, m: &ClMetrics) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(METRICS_HEADER)?;
    for k in 0..m.aa.len() {
        let fm = if k == 0 { String::new() } else { m.fm[k - 1].to_string() };
        out.write_record([(k + 1).to_string(), m.aa[k].to_string(), m.aia[k].to_string(), fm])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ckd_csv(w: impl Write, reports: &[CkdReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CKD_HEADER)?;
    for r in reports {
        let label = format!("{:?}", r.state_label);
        for l in 0..r.per_layer.nrows() {
            for c in 0..r.per_layer.ncols() {
                out.write_record([label.clone(), (l + 1).to_string(), (c + 1).to_string(), r.per_layer[(l, c)].to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes the tables (`accuracy.csv`, `metrics.csv`, `ckd.csv`) or
/// `report.json`, plus the resolved `config.json` and one
/// `checkpoints/task_<k>.json` per task.
pub fn write_artifacts(dir: &Path, report: &ClRunReport, json: bool) -> Result<()> {
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&report.config)?)?;
    if json {
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    } else {
        write_accuracy_csv(fs::File::create(dir.join("accuracy.csv"))?, &report.accuracy)?;
        write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &report.metrics)?;
        if let Some(ckd) = &report.ckd {
            write_ckd_csv(fs::File::create(dir.join("ckd.csv"))?, ckd)?;
        }
    }
    for cp in &report.checkpoints {
        let path = dir.join("checkpoints").join(format!("task_{}.json", cp.task + 1));
        fs::write(path, serde_json::to_string(cp)?)?;
    }
    Ok(())
}
