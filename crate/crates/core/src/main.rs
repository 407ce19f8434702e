use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use wsoftmax::checkpoint;
use wsoftmax::experiments::{run_eval, run_experiment, write_outputs, ExperimentKind, ExperimentSpec, Report};
use wsoftmax::Error;

#[derive(Parser)]
#[command(name = "wsoftmax", version, about = "Simplex classifier weights and W-Softmax experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy vs feature width M, softmax and W-Softmax.
    UnitsSweep(Common),
    /// Accuracy and mean angle vs α.
    AlphaSweep(Common),
    /// Softmax vs W-Softmax on the first k classes.
    ClassSweep(Common),
    /// Two-class softmax probabilities as the feature norm grows.
    Sensitivity(Common),
    /// Simplex construction residuals and extension searches.
    SimplexAudit(Common),
    /// Train one model and save it as model.json.
    Train(Common),
    /// Evaluate a saved model on the configured dataset.
    Eval(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment spec; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: out_dir from the spec, else out/<kind>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the spec's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// W-Softmax α (for alpha-sweep: the one α compared against α = 0).
    #[arg(long)]
    alpha: Option<f64>,
    /// Feature width M (for units-sweep: the single grid point).
    #[arg(long)]
    units: Option<usize>,
    /// Largest class count (simplex-audit) or top of the k grid (class-sweep).
    #[arg(long)]
    max_classes: Option<usize>,
    /// Model file to evaluate (eval).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load_spec(kind: ExperimentKind, args: &Common) -> wsoftmax::Result<ExperimentSpec> {
    let mut spec = match &args.config {
        Some(path) => {
            let mut s: ExperimentSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
            // a config written for another kind still supplies data and model settings
            s.kind = kind;
            s
        }
        None => ExperimentSpec::default_for(kind),
    };
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(alpha) = args.alpha {
        match kind {
            ExperimentKind::AlphaSweep => spec.grid = vec![alpha],
            _ => spec.train.alpha = alpha,
        }
    }
    if let Some(m) = args.units {
        match kind {
            ExperimentKind::UnitsSweep => spec.grid = vec![m as f64],
            _ => spec.model.feature_dim = Some(m),
        }
    }
    if let Some(c) = args.max_classes {
        match kind {
            ExperimentKind::ClassCountSweep => spec.grid = (2..=c).map(|k| k as f64).collect(),
            _ => spec.max_classes = c,
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec, args: &Common, name: &str) -> PathBuf {
    args.out.clone().or_else(|| spec.out_dir.clone()).unwrap_or_else(|| Path::new("out").join(name))
}

fn run(cli: Cli) -> wsoftmax::Result<()> {
    let (kind, args) = match cli.command {
        Command::UnitsSweep(a) => (ExperimentKind::UnitsSweep, a),
        Command::AlphaSweep(a) => (ExperimentKind::AlphaSweep, a),
        Command::ClassSweep(a) => (ExperimentKind::ClassCountSweep, a),
        Command::Sensitivity(a) => (ExperimentKind::SoftmaxSensitivity, a),
        Command::SimplexAudit(a) => (ExperimentKind::SimplexAudit, a),
        Command::Train(a) => (ExperimentKind::Train, a),
        Command::Eval(a) => return eval(&a),
    };
    let spec = load_spec(kind, &args)?;
    let dir = out_dir(&spec, &args, kind.as_str());
    let start = Instant::now();
    let report = run_experiment(&spec)?;
    let files = write_outputs(&report, &spec, &dir, start.elapsed().as_secs_f64())?;
    if let Report::Train(run) = &report {
        if let Some(last) = run.history.last() {
            println!(
                "step {} train_acc {:.4} test_acc {:.4}",
                last.step,
                last.train_acc,
                last.test_acc.unwrap_or(f64::NAN)
            );
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn eval(args: &Common) -> wsoftmax::Result<()> {
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("eval needs --checkpoint <model.json>".into()))?;
    let params = checkpoint::load(path)?;
    let spec = load_spec(ExperimentKind::Train, args)?;
    let start = Instant::now();
    let ev = run_eval(&params, &spec)?;
    let dir = out_dir(&spec, args, "eval");
    fs::create_dir_all(&dir)?;
    let mut csv = Vec::new();
    ev.angles.write_csv(&mut csv)?;
    fs::write(dir.join("report.csv"), csv)?;
    let log = format!(
        "kind=eval\ncheckpoint={}\ntrain_acc={}\ntest_acc={}\nmean_angle_deg={:?}\nskipped={}\nwall_time_s={:.3}\n",
        path.display(),
        ev.train_acc,
        ev.test_acc,
        ev.angles.overall_mean.map(f64::to_degrees),
        ev.angles.skipped,
        start.elapsed().as_secs_f64()
    );
    fs::write(dir.join("run.log"), log)?;
    println!("train_acc {:.4} test_acc {:.4}", ev.train_acc, ev.test_acc);
    println!("wrote {}", dir.join("report.csv").display());
    Ok(())
}

fn report_error(kind: &str, message: &str) {
    let line = serde_json::json!({ "kind": kind, "message": message });
    eprintln!("error: {line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            report_error("usage", text.trim().trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
