//! Experiment sweeps and tables, plus the file outputs the CLI writes.
//!
//! Every sweep trains one model per (grid point, loss, seed). Runs are
//! independent and execute on the rayon pool; rows come back in grid order,
//! so a report depends only on the spec.

pub mod config;
pub mod plot;
pub mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::checkpoint;
use crate::data::{select_first_k_classes, Dataset};
use crate::error::{invalid, Error, Result};
use crate::loss::softmax_probs;
use crate::metrics::{accuracy, mean_angles, AngleReport};
use crate::model::{init_params, MlpSpec, ModelParams};
use crate::simplex::{build_simplex, extension_infeasibility_search, fc_param_memory, verify_equiangular};
use crate::trainer::{fit_from, TrainConfig, TrainRun};

pub use config::{DatasetSpec, ExperimentKind, ExperimentSpec, ModelConfig, DIGITS_TEST, DIGITS_TRAIN};
pub use plot::{chart_from_csv, ChartSpec};
pub use report::{AuditRow, LossKind, MeanSd, RunRow, RunStatus, SensitivityRow, SummaryRow, SweepReport};

/// Cosine of the winning and losing class in the sensitivity table.
pub const SENSITIVITY_COS: f64 = 0.05;

/// Largest class count that gets an extension search in the audit.
pub const AUDIT_SEARCH_MAX_CLASSES: usize = 8;

struct Job {
    param: f64,
    loss: LossKind,
    alpha: f64,
    seed: u64,
    data: usize,
    feature_dim: usize,
}

fn model_spec(cfg: &ModelConfig, input_dim: usize, classes: usize, feature_dim: usize) -> MlpSpec {
    MlpSpec {
        input_dim,
        hidden_dims: cfg.hidden_dims.clone(),
        feature_dim,
        activation: cfg.activation,
        num_classes: classes,
    }
}

fn initial_params(spec: &ExperimentSpec, mspec: &MlpSpec, seed: u64) -> Result<ModelParams> {
    let mut p = init_params(mspec, seed)?;
    if spec.model.simplex_init {
        p.seed_classifier_with_simplex()?;
    }
    Ok(p)
}

fn run_job(spec: &ExperimentSpec, data: &[(Dataset, Dataset)], job: &Job) -> Result<RunRow> {
    let start = Instant::now();
    let (train, test) = &data[job.data];
    let classes = train.num_classes;
    let mspec = model_spec(&spec.model, train.dim(), classes, job.feature_dim);
    let cfg = TrainConfig { alpha: job.alpha, seed: job.seed, eval_interval: 0, ..spec.train.clone() };
    let mut row = RunRow {
        param: job.param,
        loss: job.loss,
        alpha: job.alpha,
        seed: job.seed,
        classes,
        feature_dim: job.feature_dim,
        train_acc: None,
        test_acc: None,
        mean_angle_deg: None,
        fc_memory_bytes: fc_param_memory(job.feature_dim, classes),
        status: RunStatus::Ok,
        class_angles_deg: vec![None; classes],
        class_counts: vec![0; classes],
        wall_time_s: 0.0,
    };
    match fit_from(initial_params(spec, &mspec, job.seed)?, train, Some(test), &cfg) {
        Ok(run) => {
            let last = run.history.last().ok_or_else(|| invalid("training produced no history"))?;
            let angles = mean_angles(&run.params, test)?;
            row.train_acc = Some(last.train_acc);
            row.test_acc = last.test_acc;
            row.mean_angle_deg = angles.overall_mean.map(f64::to_degrees);
            row.class_angles_deg = angles.per_class_degrees();
            row.class_counts = angles.counts;
        }
        Err(Error::Diverged { .. }) => row.status = RunStatus::Diverged,
        Err(Error::AntipodalCollapse { .. }) => row.status = RunStatus::AntipodalCollapse,
        Err(e) => return Err(e),
    }
    row.wall_time_s = start.elapsed().as_secs_f64();
    Ok(row)
}

fn run_jobs(spec: &ExperimentSpec, data: &[(Dataset, Dataset)], jobs: &[Job]) -> Result<SweepReport> {
    let rows = jobs.par_iter().map(|j| run_job(spec, data, j)).collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { kind: spec.kind, rows })
}

fn load_data(spec: &ExperimentSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    spec.dataset.as_ref().ok_or_else(|| invalid("experiment needs a dataset"))?.load()
}

/// Softmax (α = 0) and W-Softmax (`train.alpha`) at every M in the grid.
pub fn run_units_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    let data = [load_data(spec)?];
    let mut jobs = Vec::new();
    for &m in &spec.grid {
        for (loss, alpha) in [(LossKind::Softmax, 0.0), (LossKind::Wsoftmax, spec.train.alpha)] {
            for &seed in &spec.seeds {
                jobs.push(Job { param: m, loss, alpha, seed, data: 0, feature_dim: m as usize });
            }
        }
    }
    run_jobs(spec, &data, &jobs)
}

/// One run per α per seed; α = 0 is always included as the softmax baseline.
pub fn run_alpha_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    let data = [load_data(spec)?];
    let classes = data[0].0.num_classes;
    let feature_dim = spec.model.feature_dim.unwrap_or(classes - 1);
    let mut grid = spec.grid.clone();
    if !grid.contains(&0.0) {
        grid.insert(0, 0.0);
    }
    let mut jobs = Vec::new();
    for &alpha in &grid {
        let loss = if alpha == 0.0 { LossKind::Softmax } else { LossKind::Wsoftmax };
        for &seed in &spec.seeds {
            jobs.push(Job { param: alpha, loss, alpha, seed, data: 0, feature_dim });
        }
    }
    run_jobs(spec, &data, &jobs)
}

/// For each k: the first k classes, M = max(k − 1, configured M), softmax vs W-Softmax.
pub fn run_class_count_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    let (train, test) = load_data(spec)?;
    let mut data = Vec::new();
    let mut jobs = Vec::new();
    for &k in &spec.grid {
        let k = k as usize;
        if k > train.num_classes {
            return Err(invalid(format!("class grid value {k} exceeds {} classes", train.num_classes)));
        }
        data.push((select_first_k_classes(&train, k)?, select_first_k_classes(&test, k)?));
        let feature_dim = (k - 1).max(spec.model.feature_dim.unwrap_or(0));
        for (loss, alpha) in [(LossKind::Softmax, 0.0), (LossKind::Wsoftmax, spec.train.alpha)] {
            for &seed in &spec.seeds {
                jobs.push(Job { param: k as f64, loss, alpha, seed, data: data.len() - 1, feature_dim });
            }
        }
    }
    run_jobs(spec, &data, &jobs)
}

/// Two-class softmax at ‖x‖ = norm with cosines ±0.05 against unit weights.
pub fn run_softmax_sensitivity(norms: &[f64]) -> Vec<SensitivityRow> {
    norms
        .iter()
        .map(|&n| {
            let p = softmax_probs(&[n * SENSITIVITY_COS, -n * SENSITIVITY_COS]);
            SensitivityRow {
                norm: n,
                cos_positive: SENSITIVITY_COS,
                cos_negative: -SENSITIVITY_COS,
                p_positive: p[0],
                p_negative: p[1],
            }
        })
        .collect()
}

/// Construction residuals for C = 2..=max_classes, with an extension search
/// for 3 ≤ C ≤ 8.
pub fn run_simplex_audit(max_classes: usize, trials: usize, seed: u64) -> Result<Vec<AuditRow>> {
    if max_classes < 2 {
        return Err(invalid("max_classes must be >= 2"));
    }
    (2..=max_classes)
        .into_par_iter()
        .map(|c| {
            let w = build_simplex(c)?;
            let r = verify_equiangular(w.matrix(), 1e-9);
            let extension_residual = if (3..=AUDIT_SEARCH_MAX_CLASSES).contains(&c) {
                Some(extension_infeasibility_search(c, trials, seed)?.best_residual)
            } else {
                None
            };
            Ok(AuditRow {
                classes: c,
                feature_dim: c - 1,
                target_cosine: r.target_cosine,
                max_norm_dev: r.max_norm_dev,
                max_pairwise_dev: r.max_pairwise_dev,
                column_sum_norm: r.column_sum_norm,
                passed: r.passed,
                extension_residual,
                fc_memory_bytes: fc_param_memory(c - 1, c),
            })
        })
        .collect()
}

/// Single training run on the spec's dataset (first seed). History is
/// recorded every `train.eval_interval` steps, or ten times if that is 0.
pub fn run_train(spec: &ExperimentSpec) -> Result<TrainRun> {
    let (train, test) = load_data(spec)?;
    let classes = train.num_classes;
    let m = spec.model.feature_dim.unwrap_or(classes - 1);
    let seed = spec.seeds[0];
    let mut cfg = TrainConfig { seed, ..spec.train.clone() };
    if cfg.eval_interval == 0 {
        cfg.eval_interval = (cfg.total_steps / 10).max(1);
    }
    let mspec = model_spec(&spec.model, train.dim(), classes, m);
    fit_from(initial_params(spec, &mspec, seed)?, &train, Some(&test), &cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub train_acc: f64,
    pub test_acc: f64,
    pub angles: AngleReport,
}

/// Accuracy on both splits and test-split angles for saved parameters.
pub fn run_eval(params: &ModelParams, spec: &ExperimentSpec) -> Result<EvalReport> {
    let (train, test) = spec.dataset.as_ref().ok_or_else(|| invalid("eval needs a dataset"))?.load()?;
    Ok(EvalReport {
        train_acc: accuracy(params, &train)?,
        test_acc: accuracy(params, &test)?,
        angles: mean_angles(params, &test)?,
    })
}

/// Result of any experiment kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Sweep(SweepReport),
    Sensitivity(Vec<SensitivityRow>),
    Audit(Vec<AuditRow>),
    Train(Box<TrainRun>),
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    Ok(match spec.kind {
        ExperimentKind::UnitsSweep => Report::Sweep(run_units_sweep(spec)?),
        ExperimentKind::AlphaSweep => Report::Sweep(run_alpha_sweep(spec)?),
        ExperimentKind::ClassCountSweep => Report::Sweep(run_class_count_sweep(spec)?),
        ExperimentKind::SoftmaxSensitivity => Report::Sensitivity(run_softmax_sensitivity(&spec.grid)),
        ExperimentKind::SimplexAudit => {
            Report::Audit(run_simplex_audit(spec.max_classes, spec.trials, spec.seeds.first().copied().unwrap_or(0))?)
        }
        ExperimentKind::Train => Report::Train(Box::new(run_train(spec)?)),
    })
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<String> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    String::from_utf8(buf).map_err(|e| invalid(e.to_string()))
}

pub fn train_log_csv(run: &TrainRun) -> Result<String> {
    csv_string(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["step", "lr", "loss", "train_acc", "test_acc"])?;
        for h in &run.history {
            w.write_record([
                h.step.to_string(),
                h.lr.to_string(),
                h.loss.to_string(),
                h.train_acc.to_string(),
                h.test_acc.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

impl Report {
    pub fn csv(&self) -> Result<String> {
        match self {
            Report::Sweep(s) => csv_string(|b| s.write_csv(b)),
            Report::Sensitivity(rows) => csv_string(|b| report::write_sensitivity_csv(rows, b)),
            Report::Audit(rows) => csv_string(|b| report::write_audit_csv(rows, b)),
            Report::Train(run) => train_log_csv(run),
        }
    }

    fn chart(&self) -> ChartSpec<'static> {
        match self {
            Report::Sweep(s) => match s.kind {
                ExperimentKind::UnitsSweep => ChartSpec {
                    title: "Test accuracy vs feature units M",
                    x: "param",
                    y: "test_acc",
                    series: Some("loss"),
                    log_x: true,
                },
                ExperimentKind::AlphaSweep => ChartSpec {
                    title: "Mean test angle vs alpha",
                    x: "param",
                    y: "mean_angle_deg",
                    series: None,
                    log_x: false,
                },
                _ => ChartSpec {
                    title: "Test accuracy vs class count k",
                    x: "param",
                    y: "test_acc",
                    series: Some("loss"),
                    log_x: false,
                },
            },
            Report::Sensitivity(_) => ChartSpec {
                title: "Winning softmax probability vs feature norm",
                x: "norm",
                y: "p_positive",
                series: None,
                log_x: false,
            },
            Report::Audit(_) => ChartSpec {
                title: "Best extension residual vs class count",
                x: "classes",
                y: "extension_residual",
                series: None,
                log_x: false,
            },
            Report::Train(_) => ChartSpec { title: "Training loss", x: "step", y: "loss", series: None, log_x: false },
        }
    }

    fn log(&self, spec: &ExperimentSpec) -> String {
        let mut log = format!("kind={}\n", spec.kind.as_str());
        match self {
            Report::Sweep(s) => {
                for r in &s.rows {
                    let _ = writeln!(
                        log,
                        "param={} loss={} alpha={} seed={} status={} train_acc={:?} test_acc={:?} mean_angle_deg={:?} wall_time_s={:.3}",
                        r.param,
                        r.loss.as_str(),
                        r.alpha,
                        r.seed,
                        r.status.as_str(),
                        r.train_acc,
                        r.test_acc,
                        r.mean_angle_deg,
                        r.wall_time_s
                    );
                }
            }
            Report::Sensitivity(rows) => {
                let _ = writeln!(log, "rows={}", rows.len());
            }
            Report::Audit(rows) => {
                let failed = rows.iter().filter(|r| !r.passed).count();
                let _ = writeln!(log, "rows={} failed={failed}", rows.len());
            }
            Report::Train(run) => {
                let _ = writeln!(log, "steps={} params={}", run.step, run.params.num_params());
            }
        }
        log
    }
}

/// Writes `report.csv`, `report.svg` and `run.log` (plus `summary.csv` and
/// `angles.csv` for sweeps, `model.json` for training) into `out_dir`.
pub fn write_outputs(report: &Report, spec: &ExperimentSpec, out_dir: &Path, elapsed_s: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    let csv = report.csv()?;
    put("report.csv", &csv)?;
    put("report.svg", &chart_from_csv(&csv, &report.chart())?)?;
    match report {
        Report::Sweep(s) => {
            put("summary.csv", &csv_string(|b| s.write_summary_csv(b))?)?;
            put("angles.csv", &csv_string(|b| s.write_angles_csv(b))?)?;
        }
        Report::Train(run) => put("model.json", &checkpoint::to_json(&run.params)?)?,
        _ => {}
    }
    let mut log = report.log(spec);
    let _ = writeln!(log, "wall_time_s={elapsed_s:.3}");
    put("run.log", &log)?;
    Ok(written)
}
