//! Report rows and their CSV layouts.
//!
//! `report.csv` (sweeps):
//! `param,loss,alpha,seed,classes,feature_dim,train_acc,test_acc,mean_angle_deg,fc_memory_bytes,status`
//!
//! `summary.csv` (sweeps, one row per grid point and loss):
//! `param,loss,alpha,runs,failed,train_acc_mean,train_acc_sd,test_acc_mean,test_acc_sd,mean_angle_deg_mean,mean_angle_deg_sd`
//!
//! `angles.csv` (sweeps): `param,loss,alpha,seed,class,mean_angle_deg,count,split`
//!
//! `report.csv` (sensitivity): `norm,cos_positive,cos_negative,p_positive,p_negative`
//!
//! `report.csv` (simplex audit):
//! `classes,feature_dim,target_cosine,max_norm_dev,max_pairwise_dev,column_sum_norm,passed,extension_residual,fc_memory_bytes`
//!
//! Empty fields mean "not available" (diverged run, missing class, no search).
//! Wall-clock times go to `run.log` only, so reruns give identical CSV bytes.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::config::ExperimentKind;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Softmax,
    Wsoftmax,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Softmax => "softmax",
            LossKind::Wsoftmax => "wsoftmax",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
    /// A biased weight hit `α·w_c + w_i = 0` (e.g. M = 1 with α = 1).
    AntipodalCollapse,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::AntipodalCollapse => "antipodal_collapse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    /// Grid value (M, α or k).
    pub param: f64,
    pub loss: LossKind,
    pub alpha: f64,
    pub seed: u64,
    pub classes: usize,
    pub feature_dim: usize,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub mean_angle_deg: Option<f64>,
    pub fc_memory_bytes: u64,
    pub status: RunStatus,
    /// Test-split mean angle per class, degrees.
    pub class_angles_deg: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation (n − 1); zero for a single value.
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub param: f64,
    pub loss: LossKind,
    pub alpha: f64,
    pub runs: usize,
    /// Runs that did not finish (diverged or collapsed).
    pub failed: usize,
    pub train_acc: Option<MeanSd>,
    pub test_acc: Option<MeanSd>,
    pub mean_angle_deg: Option<MeanSd>,
    /// Per-class angle averaged over the runs where the class was present.
    pub class_angles_deg: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: ExperimentKind,
    pub rows: Vec<RunRow>,
}

impl SweepReport {
    /// Groups rows by (param, loss, alpha) in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(f64, LossKind, f64)> = Vec::new();
        for r in &self.rows {
            let k = (r.param, r.loss, r.alpha);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(param, loss, alpha)| {
                let group: Vec<&RunRow> =
                    self.rows.iter().filter(|r| r.param == param && r.loss == loss && r.alpha == alpha).collect();
                let ok: Vec<&RunRow> = group.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
                let collect = |f: fn(&RunRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
                let classes = ok.iter().map(|r| r.class_angles_deg.len()).max().unwrap_or(0);
                let class_angles_deg = (0..classes)
                    .map(|c| {
                        let v: Vec<f64> =
                            ok.iter().filter_map(|r| r.class_angles_deg.get(c).copied().flatten()).collect();
                        MeanSd::of(&v).map(|m| m.mean)
                    })
                    .collect();
                SummaryRow {
                    param,
                    loss,
                    alpha,
                    runs: group.len(),
                    failed: group.len() - ok.len(),
                    train_acc: MeanSd::of(&collect(|r| r.train_acc)),
                    test_acc: MeanSd::of(&collect(|r| r.test_acc)),
                    mean_angle_deg: MeanSd::of(&collect(|r| r.mean_angle_deg)),
                    class_angles_deg,
                }
            })
            .collect()
    }

    /// Summary entry for one grid point and loss, if present.
    pub fn find(&self, param: f64, loss: LossKind) -> Option<SummaryRow> {
        self.summary().into_iter().find(|s| s.param == param && s.loss == loss)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "param",
            "loss",
            "alpha",
            "seed",
            "classes",
            "feature_dim",
            "train_acc",
            "test_acc",
            "mean_angle_deg",
            "fc_memory_bytes",
            "status",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.param.to_string(),
                r.loss.as_str().into(),
                r.alpha.to_string(),
                r.seed.to_string(),
                r.classes.to_string(),
                r.feature_dim.to_string(),
                opt(r.train_acc),
                opt(r.test_acc),
                opt(r.mean_angle_deg),
                r.fc_memory_bytes.to_string(),
                r.status.as_str().into(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "param",
            "loss",
            "alpha",
            "runs",
            "failed",
            "train_acc_mean",
            "train_acc_sd",
            "test_acc_mean",
            "test_acc_sd",
            "mean_angle_deg_mean",
            "mean_angle_deg_sd",
        ])?;
        for s in self.summary() {
            let pair = |m: &Option<MeanSd>| [opt(m.as_ref().map(|v| v.mean)), opt(m.as_ref().map(|v| v.sd))];
            let [tm, ts] = pair(&s.train_acc);
            let [am, asd] = pair(&s.test_acc);
            let [gm, gs] = pair(&s.mean_angle_deg);
            w.write_record([
                s.param.to_string(),
                s.loss.as_str().into(),
                s.alpha.to_string(),
                s.runs.to_string(),
                s.failed.to_string(),
                tm,
                ts,
                am,
                asd,
                gm,
                gs,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_angles_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["param", "loss", "alpha", "seed", "class", "mean_angle_deg", "count", "split"])?;
        for r in &self.rows {
            for (c, (a, n)) in r.class_angles_deg.iter().zip(&r.class_counts).enumerate() {
                w.write_record([
                    r.param.to_string(),
                    r.loss.as_str().into(),
                    r.alpha.to_string(),
                    r.seed.to_string(),
                    c.to_string(),
                    opt(*a),
                    n.to_string(),
                    "test".into(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub norm: f64,
    pub cos_positive: f64,
    pub cos_negative: f64,
    pub p_positive: f64,
    pub p_negative: f64,
}

pub fn write_sensitivity_csv(rows: &[SensitivityRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["norm", "cos_positive", "cos_negative", "p_positive", "p_negative"])?;
    for r in rows {
        w.write_record([r.norm, r.cos_positive, r.cos_negative, r.p_positive, r.p_negative].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub classes: usize,
    pub feature_dim: usize,
    pub target_cosine: f64,
    pub max_norm_dev: f64,
    pub max_pairwise_dev: f64,
    pub column_sum_norm: f64,
    pub passed: bool,
    pub extension_residual: Option<f64>,
    pub fc_memory_bytes: u64,
}

pub fn write_audit_csv(rows: &[AuditRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "classes",
        "feature_dim",
        "target_cosine",
        "max_norm_dev",
        "max_pairwise_dev",
        "column_sum_norm",
        "passed",
        "extension_residual",
        "fc_memory_bytes",
    ])?;
    for r in rows {
        w.write_record([
            r.classes.to_string(),
            r.feature_dim.to_string(),
            r.target_cosine.to_string(),
            r.max_norm_dev.to_string(),
            r.max_pairwise_dev.to_string(),
            r.column_sum_norm.to_string(),
            r.passed.to_string(),
            opt(r.extension_residual),
            r.fc_memory_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
