//! Momentum SGD over mini-batches, with a conventional-softmax warm-start
//! before switching to W-Softmax.

use serde::{Deserialize, Serialize};

use crate::data::{batch_indices, Dataset};
use crate::error::{invalid, Error, Result};
use crate::loss::{wsoftmax_loss_batch, GradientFlow, LinearClassifier, WSoftmaxConfig};
use crate::metrics::{accuracy, mean_angles};
use crate::model::{init_params, MlpSpec, ModelParams};
use crate::tensor::Matrix;

fn default_batch_size() -> usize {
    50
}
fn default_lr0() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_decay_rate() -> f64 {
    0.9
}
fn default_decay_steps() -> usize {
    6000
}
fn default_weight_reg() -> f64 {
    0.0005
}
fn default_total_steps() -> usize {
    3000
}
fn default_alpha() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_decay_rate")]
    pub decay_rate: f64,
    #[serde(default = "default_decay_steps")]
    pub decay_steps: usize,
    #[serde(default = "default_weight_reg")]
    pub weight_reg: f64,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    /// Steps trained with α = 0 before switching to `alpha`; `None` means 20% of `total_steps`.
    #[serde(default)]
    pub warmstart_steps: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub flow: GradientFlow,
    #[serde(default)]
    pub seed: u64,
    /// Record history every this many steps (0: only at the end).
    #[serde(default)]
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            lr0: default_lr0(),
            momentum: default_momentum(),
            decay_rate: default_decay_rate(),
            decay_steps: default_decay_steps(),
            weight_reg: default_weight_reg(),
            total_steps: default_total_steps(),
            warmstart_steps: None,
            alpha: default_alpha(),
            flow: GradientFlow::Full,
            seed: 0,
            eval_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if !in_unit(self.lr0) || !in_unit(self.decay_rate) {
            return Err(invalid("lr0 and decay_rate must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_reg.is_finite() && self.weight_reg >= 0.0) {
            return Err(invalid(format!("weight_reg must be >= 0, got {}", self.weight_reg)));
        }
        if self.decay_steps == 0 {
            return Err(invalid("decay_steps must be >= 1"));
        }
        if self.warmstart_steps.is_some_and(|w| w > self.total_steps) {
            return Err(invalid("warmstart_steps exceeds total_steps"));
        }
        WSoftmaxConfig::new(self.alpha)?;
        Ok(())
    }

    pub fn warmstart(&self) -> usize {
        self.warmstart_steps.unwrap_or(self.total_steps / 5)
    }

    /// α in effect at `step`.
    pub fn alpha_at(&self, step: usize) -> f64 {
        if step < self.warmstart() {
            0.0
        } else {
            self.alpha
        }
    }
}

/// `lr0 · decay_rate^(step / decay_steps)`, continuous in `step`.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.lr0 * cfg.decay_rate.powf(step as f64 / cfg.decay_steps as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub lr: f64,
    /// Mean regularized batch loss since the previous entry.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Overall mean angle (radians) between test features and their class weight.
    pub mean_angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub step: usize,
    pub params: ModelParams,
    pub velocity: ModelParams,
    pub history: Vec<HistoryEntry>,
}

impl TrainRun {
    pub fn new(params: ModelParams) -> Self {
        TrainRun { step: 0, velocity: params.zeros_like(), params, history: Vec::new() }
    }
}

/// Regularized batch loss and its gradient with respect to every parameter.
pub fn batch_loss_grad(
    params: &ModelParams,
    xs: &Matrix,
    labels: &[usize],
    loss_cfg: &WSoftmaxConfig,
    weight_reg: f64,
) -> Result<(f64, ModelParams)> {
    let (features, cache) = params.forward_batch(xs)?;
    let head = LinearClassifier::bias_free(params.classifier.clone());
    let out = wsoftmax_loss_batch(&head, &features, labels, loss_cfg)?;
    let mut grads = params.zeros_like();
    params.backward(&cache, &out.grad_x, &mut grads);
    grads.classifier = out.grad_weights;

    let mut loss = out.loss;
    if weight_reg > 0.0 {
        let mut penalty = 0.0;
        let mut gs = grads.groups_mut();
        for (p, g) in params.groups().iter().zip(gs.iter_mut()) {
            if g.regularized {
                for (gv, &pv) in g.data.iter_mut().zip(p.iter()) {
                    penalty += pv * pv;
                    *gv += 2.0 * weight_reg * pv;
                }
            }
        }
        loss += weight_reg * penalty;
    }
    Ok((loss, grads))
}

/// One momentum step on `(xs, labels)`; returns the regularized batch loss.
pub fn train_step(run: &mut TrainRun, xs: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let loss_cfg = WSoftmaxConfig::new(cfg.alpha_at(run.step))?.with_flow(cfg.flow);
    let (loss, grads) = batch_loss_grad(&run.params, xs, labels, &loss_cfg, cfg.weight_reg)?;
    if !loss.is_finite() || grads.groups().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Diverged { step: run.step, loss });
    }
    momentum_update(&mut run.params, &mut run.velocity, &grads, lr_at(cfg, run.step), cfg.momentum);
    run.step += 1;
    Ok(loss)
}

/// `v ← μ·v − lr·g; p ← p + v`.
fn momentum_update(params: &mut ModelParams, velocity: &mut ModelParams, grads: &ModelParams, lr: f64, momentum: f64) {
    let mut vel = velocity.groups_mut();
    let mut par = params.groups_mut();
    for ((v, p), g) in vel.iter_mut().zip(par.iter_mut()).zip(grads.groups()) {
        for ((vi, pi), &gi) in v.data.iter_mut().zip(p.data.iter_mut()).zip(g) {
            *vi = momentum * *vi - lr * gi;
            *pi += *vi;
        }
    }
}

fn evaluate(
    run: &TrainRun,
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    loss: f64,
) -> Result<HistoryEntry> {
    let (test_acc, mean_angle) = match test {
        Some(t) => (Some(accuracy(&run.params, t)?), mean_angles(&run.params, t)?.overall_mean),
        None => (None, None),
    };
    Ok(HistoryEntry {
        step: run.step,
        lr: lr_at(cfg, run.step),
        loss,
        train_acc: accuracy(&run.params, train)?,
        test_acc,
        mean_angle,
    })
}

/// Trains from freshly initialized parameters (seeded by `cfg.seed`).
pub fn fit(train: &Dataset, test: Option<&Dataset>, spec: &MlpSpec, cfg: &TrainConfig) -> Result<TrainRun> {
    fit_from(init_params(spec, cfg.seed)?, train, test, cfg)
}

/// Runs `cfg.total_steps` steps starting from `params`. Batches come from a
/// per-epoch permutation seeded by `cfg.seed`.
pub fn fit_from(params: ModelParams, train: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let spec = params.spec();
    if train.dim() != spec.input_dim {
        return Err(Error::DimensionMismatch { expected: spec.input_dim, got: train.dim() });
    }
    if train.num_classes > spec.num_classes {
        return Err(invalid(format!("dataset has {} classes, model only {}", train.num_classes, spec.num_classes)));
    }

    let mut run = TrainRun::new(params);
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    let mut epoch = 0u64;
    'outer: while run.step < cfg.total_steps {
        for idx in batch_indices(train.len(), cfg.batch_size, cfg.seed, epoch) {
            if run.step >= cfg.total_steps {
                break 'outer;
            }
            let (xs, labels) = train.gather(&idx);
            loss_sum += train_step(&mut run, &xs, &labels, cfg)?;
            loss_count += 1;
            if cfg.eval_interval > 0 && run.step.is_multiple_of(cfg.eval_interval) && run.step < cfg.total_steps {
                let entry = evaluate(&run, cfg, train, test, loss_sum / loss_count as f64)?;
                run.history.push(entry);
                (loss_sum, loss_count) = (0.0, 0);
            }
        }
        epoch += 1;
    }
    let loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { f64::NAN };
    let entry = evaluate(&run, cfg, train, test, loss)?;
    run.history.push(entry);
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_blobs, BlobSpec, CenterLayout};
    use crate::loss::finite_diff_check;
    use crate::model::Activation;
    use proptest::prelude::*;

    fn spec(input: usize, hidden: Vec<usize>, m: usize, c: usize) -> MlpSpec {
        MlpSpec { input_dim: input, hidden_dims: hidden, feature_dim: m, activation: Activation::Prelu, num_classes: c }
    }

    fn batch() -> (Matrix, Vec<usize>) {
        (Matrix::new(3, 3, vec![0.5, -1.0, 0.2, 1.5, 0.3, -0.7, -0.4, 0.8, 1.1]).unwrap(), vec![0, 2, 1])
    }

    #[test]
    fn lr_schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.01);
        assert!((lr_at(&cfg, 6000) - 0.009).abs() < 1e-15);
        assert!((lr_at(&cfg, 12000) - 0.0081).abs() < 1e-15);
        // continuous, not staircase
        assert!(lr_at(&cfg, 3000) < 0.01 && lr_at(&cfg, 3000) > 0.009);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert_eq!(TrainConfig::default().warmstart(), 600);
        for bad in [
            TrainConfig { lr0: 0.0, ..Default::default() },
            TrainConfig { decay_rate: 1.5, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { alpha: -0.1, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { warmstart_steps: Some(5000), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let parsed: TrainConfig = serde_json::from_str(r#"{"alpha": 0.5}"#).unwrap();
        assert_eq!(parsed, TrainConfig { alpha: 0.5, ..Default::default() });
    }

    #[test]
    fn regularized_gradient_matches_finite_differences() {
        let p = init_params(&spec(3, vec![4], 2, 3), 5).unwrap();
        let (xs, labels) = batch();
        let cfg = WSoftmaxConfig::new(0.7).unwrap();
        let (_, grads) = batch_loss_grad(&p, &xs, &labels, &cfg, 0.01).unwrap();
        let err = finite_diff_check(
            |flat| {
                let mut q = p.clone();
                q.set_flat(flat).unwrap();
                batch_loss_grad(&q, &xs, &labels, &cfg, 0.01).unwrap().0
            },
            &p.to_flat(),
            &grads.to_flat(),
            1e-6,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn momentum_free_step_is_plain_sgd() {
        let p = init_params(&spec(3, vec![4], 2, 3), 1).unwrap();
        let (xs, labels) = batch();
        let cfg =
            TrainConfig { momentum: 0.0, weight_reg: 0.0, warmstart_steps: Some(0), alpha: 0.5, ..Default::default() };
        let (_, g) = batch_loss_grad(&p, &xs, &labels, &WSoftmaxConfig::new(0.5).unwrap(), 0.0).unwrap();
        let mut run = TrainRun::new(p.clone());
        train_step(&mut run, &xs, &labels, &cfg).unwrap();
        let expected: Vec<f64> = p.to_flat().iter().zip(g.to_flat()).map(|(a, b)| a + (0.0 - 0.01 * b)).collect();
        assert_eq!(run.params.to_flat(), expected);
        assert_eq!(run.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_velocity() {
        let p = init_params(&spec(3, vec![4], 2, 3), 1).unwrap();
        let mut params = p.clone();
        let mut vel = p.zeros_like();
        vel.set_flat(&vec![0.5; p.num_params()]).unwrap();
        let before = params.to_flat();
        params.set_flat(&before.iter().map(|v| v - 0.5).collect::<Vec<_>>()).unwrap();
        momentum_update(&mut params, &mut vel, &p.zeros_like(), 0.01, 0.9);
        assert!(vel.to_flat().iter().all(|&v| v == 0.9 * 0.5));
        // p - 0.5 + 0.45
        for (a, b) in params.to_flat().iter().zip(&before) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }

        let mut params = p.clone();
        let mut vel = p.zeros_like();
        momentum_update(&mut params, &mut vel, &p.zeros_like(), 0.01, 0.9);
        assert_eq!(params, p);
    }

    fn blobs(classes: usize, dim: usize, spread: f64) -> (Dataset, Dataset) {
        make_blobs(&BlobSpec { classes, dim, centers: CenterLayout::SimplexScaled, spread, per_class: 100, seed: 3 })
            .unwrap()
    }

    #[test]
    fn fit_is_deterministic() {
        let (train, test) = blobs(3, 2, 0.3);
        let cfg = TrainConfig { total_steps: 120, eval_interval: 40, seed: 8, ..Default::default() };
        let s = spec(2, vec![8], 2, 3);
        let a = fit(&train, Some(&test), &s, &cfg).unwrap();
        let b = fit(&train, Some(&test), &s, &cfg).unwrap();
        assert_eq!(a, b);
        let steps: Vec<usize> = a.history.iter().map(|h| h.step).collect();
        assert_eq!(steps, vec![40, 80, 120]);
        assert!(a.history.iter().all(|h| h.loss.is_finite()));
    }

    #[test]
    fn full_warmstart_equals_alpha_zero() {
        let (train, _) = blobs(3, 2, 0.3);
        let s = spec(2, vec![8], 2, 3);
        let zero = TrainConfig { total_steps: 100, alpha: 0.0, ..Default::default() };
        let warm = TrainConfig { total_steps: 100, alpha: 1.0, warmstart_steps: Some(100), ..Default::default() };
        let a = fit(&train, None, &s, &zero).unwrap();
        let b = fit(&train, None, &s, &warm).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn separable_two_class_blobs_reach_high_accuracy() {
        let (train, test) = make_blobs(&BlobSpec {
            classes: 2,
            dim: 2,
            centers: CenterLayout::SimplexScaled,
            spread: 0.2,
            per_class: 200,
            seed: 0,
        })
        .unwrap();
        let cfg = TrainConfig { total_steps: 500, ..Default::default() };
        let run = fit(&train, Some(&test), &spec(2, vec![8], 2, 2), &cfg).unwrap();
        let last = run.history.last().unwrap();
        assert!(last.train_acc >= 0.99, "{last:?}");
    }

    #[test]
    fn diverging_run_reports_step() {
        let (train, _) = blobs(3, 2, 0.3);
        let mut p = init_params(&spec(2, vec![], 2, 3), 0).unwrap();
        p.layers[0].weight.set(0, 0, 1e308);
        p.layers[0].weight.set(1, 0, -1e308);
        let cfg = TrainConfig { total_steps: 10, ..Default::default() };
        assert!(matches!(fit_from(p, &train, None, &cfg), Err(Error::Diverged { step: 0, .. })));
    }

    #[test]
    fn fit_rejects_mismatched_data() {
        let (train, _) = blobs(3, 2, 0.3);
        let cfg = TrainConfig { total_steps: 10, ..Default::default() };
        assert!(fit(&train, None, &spec(5, vec![], 2, 3), &cfg).is_err());
        assert!(fit(&train, None, &spec(2, vec![], 2, 2), &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn small_step_decreases_instance_loss(seed in any::<u64>(), label in 0usize..3, alpha in 0.0f64..1.5) {
            let p = init_params(&spec(3, vec![4], 3, 3), seed).unwrap();
            let xs = Matrix::new(1, 3, vec![0.4, -0.9, 0.6]).unwrap();
            let loss_cfg = WSoftmaxConfig::new(alpha).unwrap();
            let before = batch_loss_grad(&p, &xs, &[label], &loss_cfg, 0.0).unwrap().0;
            for lr in [1e-3, 1e-4] {
                let cfg = TrainConfig { lr0: lr, momentum: 0.0, weight_reg: 0.0, warmstart_steps: Some(0), alpha, ..Default::default() };
                let mut run = TrainRun::new(p.clone());
                train_step(&mut run, &xs, &[label], &cfg).unwrap();
                let after = batch_loss_grad(&run.params, &xs, &[label], &loss_cfg, 0.0).unwrap().0;
                prop_assert!(after <= before, "lr {lr}: {before} -> {after}");
            }
        }

        #[test]
        fn lr_strictly_decreasing(step in 0usize..1_000_000, rate in 0.01f64..0.999) {
            let cfg = TrainConfig { decay_rate: rate, ..Default::default() };
            prop_assert!(lr_at(&cfg, step + 1) < lr_at(&cfg, step));
        }
    }
}
