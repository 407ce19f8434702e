//! Softmax cross-entropy and the weights-biased softmax (W-Softmax) loss.
//!
//! For an instance of class `c`, W-Softmax replaces every negative class
//! weight `w_i` (i ≠ c) by
//!
//! ```text
//! w'_i = (α·w_c + w_i) / ‖α·w_c + w_i‖
//! ```
//!
//! and evaluates ordinary cross-entropy on the scores `[w'_1ᵀx, …, w_cᵀx, …, w'_Cᵀx]`.
//! The classifier weights are the unit-normalized columns of an unconstrained
//! matrix `V`, so gradients are returned with respect to `V` and flow through
//! both the column normalization and the biasing above.

pub mod gradcheck;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{axpy, dot, matvec, norm, Matrix, Vector};

pub use gradcheck::{finite_diff_check, max_relative_error, numeric_gradient};

/// Below this norm `α·w_c + w_i` is treated as the zero vector.
const COLLAPSE_EPS: f64 = 1e-12;

/// Tolerance on ‖w_i‖ = 1 for functions that take already-normalized weights.
const UNIT_TOL: f64 = 1e-8;

/// Last FC layer. Without biases its effective weights are the unit-normalized
/// columns of `weights`; with biases (the conventional baseline) they are used raw.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    weights: Matrix,
    bias: Option<Vector>,
}

impl LinearClassifier {
    pub fn bias_free(weights: Matrix) -> Self {
        LinearClassifier { weights, bias: None }
    }

    pub fn with_bias(weights: Matrix, bias: Vector) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::DimensionMismatch { expected: weights.cols(), got: bias.len() });
        }
        Ok(LinearClassifier { weights, bias: Some(bias) })
    }

    pub fn use_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&Vector> {
        self.bias.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn effective_weights(&self) -> Result<Matrix> {
        if self.use_bias() {
            Ok(self.weights.clone())
        } else {
            self.weights.normalize_columns()
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vector> {
        let mut f = matvec(&self.effective_weights()?, x)?;
        if let Some(b) = &self.bias {
            f.iter_mut().zip(b.iter()).for_each(|(fi, bi)| *fi += bi);
        }
        Ok(f)
    }
}

/// Whether the gradient of a biased weight `w'_j` reaches the positive weight `w_c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientFlow {
    #[default]
    Full,
    /// Treats `w_c` inside every `w'_j` as a constant.
    DetachPositive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WSoftmaxConfig {
    pub alpha: f64,
    #[serde(default)]
    pub flow: GradientFlow,
}

impl WSoftmaxConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        let cfg = WSoftmaxConfig { alpha, flow: GradientFlow::Full };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_flow(mut self, flow: GradientFlow) -> Self {
        self.flow = flow;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!("alpha must be a finite value >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Loss and gradients for a single instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_x: Vector,
    /// Gradient with respect to the classifier's raw `weights` (M×C).
    pub grad_weights: Matrix,
    pub grad_bias: Option<Vector>,
}

/// Mean loss over a batch with gradients of that mean.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLossGrad {
    pub loss: f64,
    /// One row per instance (N×M).
    pub grad_x: Matrix,
    pub grad_weights: Matrix,
}

/// Max-subtracted softmax.
pub fn softmax_probs(logits: &[f64]) -> Vector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|f| (f - m).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Vector::from_vec_unchecked(p)
}

/// `-log softmax(logits)[label]`, accurate when the label already wins by a wide margin.
pub(crate) fn nll(logits: &[f64], label: usize) -> f64 {
    let fc = logits[label];
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if fc >= m {
        let rest: f64 = logits.iter().enumerate().filter(|&(j, _)| j != label).map(|(_, f)| (f - fc).exp()).sum();
        rest.ln_1p()
    } else {
        (m - fc) + logits.iter().map(|f| (f - m).exp()).sum::<f64>().ln()
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Conventional softmax cross-entropy, with biases when the classifier has them.
pub fn softmax_ce_loss(clf: &LinearClassifier, x: &[f64], label: usize) -> Result<LossGrad> {
    let (m, c) = (clf.feature_dim(), clf.num_classes());
    if x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: x.len() });
    }
    check_label(label, c)?;
    let eff = clf.effective_weights()?;
    let logits = clf.logits(x)?;
    let loss = nll(&logits, label);
    let mut g = softmax_probs(&logits).into_inner();
    g[label] -= 1.0;

    let mut grad_x = vec![0.0; m];
    for (r, gx) in grad_x.iter_mut().enumerate() {
        *gx = dot(eff.row(r), &g);
    }
    // dE[r, j] = g_j x_r
    let mut grad_eff = Matrix::zeros(m, c);
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, &g, grad_eff.row_mut(r));
    }
    let grad_weights = if clf.use_bias() { grad_eff } else { through_normalization(clf.weights(), &eff, &grad_eff) };
    Ok(LossGrad {
        loss,
        grad_x: Vector::from_vec_unchecked(grad_x),
        grad_weights,
        grad_bias: clf.use_bias().then(|| Vector::from_vec_unchecked(g)),
    })
}

/// Pulls a gradient on unit columns `w = v/‖v‖` back to `v`:
/// `dv = (I - w wᵀ) dw / ‖v‖`.
fn through_normalization(raw: &Matrix, unit: &Matrix, grad_unit: &Matrix) -> Matrix {
    let (m, c) = (raw.rows(), raw.cols());
    let mut out = Matrix::zeros(m, c);
    for j in 0..c {
        let vn = raw.column_norm(j);
        let proj: f64 = (0..m).map(|r| unit.get(r, j) * grad_unit.get(r, j)).sum();
        for r in 0..m {
            out.set(r, j, (grad_unit.get(r, j) - proj * unit.get(r, j)) / vn);
        }
    }
    out
}

fn check_unit_columns(w: &Matrix) -> Result<()> {
    for j in 0..w.cols() {
        let n = w.column_norm(j);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(invalid(format!("column {j} has norm {n}, expected unit weights")));
        }
    }
    Ok(())
}

/// `W'` for positive class `c`: column `c` unchanged, every other column
/// replaced by `normalize(α·w_c + w_i)`. Columns of `w` must be unit-norm.
pub fn bias_weights(w: &Matrix, positive: usize, alpha: f64) -> Result<Matrix> {
    WSoftmaxConfig::new(alpha)?;
    check_label(positive, w.cols())?;
    check_unit_columns(w)?;
    let mut out = w.clone();
    let wc = w.column(positive);
    for i in (0..w.cols()).filter(|&i| i != positive) {
        let mut u = w.column(i).into_inner();
        axpy(alpha, &wc, &mut u);
        let n = norm(&u);
        if n <= COLLAPSE_EPS {
            return Err(Error::AntipodalCollapse { positive, negative: i });
        }
        u.iter_mut().for_each(|v| *v /= n);
        out.set_column(i, &u)?;
    }
    Ok(out)
}

/// Class probabilities under the biased weights for an instance labelled `positive`.
pub fn wsoftmax_probs(w: &Matrix, x: &[f64], positive: usize, cfg: &WSoftmaxConfig) -> Result<Vector> {
    let biased = bias_weights(w, positive, cfg.alpha)?;
    Ok(softmax_probs(&matvec(&biased, x)?))
}

/// Per-class unit weights stored as rows (C×M) together with the raw column norms.
struct UnitRows {
    rows: Matrix,
    norms: Vec<f64>,
}

impl UnitRows {
    fn from_columns(v: &Matrix) -> Result<Self> {
        let rows = v.transpose();
        let mut norms = Vec::with_capacity(v.cols());
        let mut unit = rows.clone();
        for j in 0..v.cols() {
            let n = norm(rows.row(j));
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            unit.row_mut(j).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(UnitRows { rows: unit, norms })
    }
}

/// One instance of the W-Softmax loss. Accumulates `∂L/∂w_j` (not yet through
/// the column normalization) into `grad_unit` and writes `∂L/∂x` into `grad_x`.
fn wsoftmax_instance(
    unit: &Matrix,
    x: &[f64],
    label: usize,
    cfg: &WSoftmaxConfig,
    scratch: &mut Vec<Vec<f64>>,
    grad_unit: &mut Matrix,
    grad_x: &mut [f64],
) -> Result<f64> {
    let classes = unit.rows();
    let wc = unit.row(label);
    let mut logits = vec![0.0; classes];
    let mut inv_norms = vec![1.0; classes];
    scratch.resize_with(classes, Vec::new);
    for j in 0..classes {
        let biased = &mut scratch[j];
        biased.clear();
        biased.extend_from_slice(unit.row(j));
        if j != label {
            axpy(cfg.alpha, wc, biased);
            let n = norm(biased);
            if n <= COLLAPSE_EPS {
                return Err(Error::AntipodalCollapse { positive: label, negative: j });
            }
            inv_norms[j] = 1.0 / n;
            biased.iter_mut().for_each(|v| *v /= n);
        }
        logits[j] = dot(biased, x);
    }
    let loss = nll(&logits, label);
    let mut g = softmax_probs(&logits).into_inner();
    g[label] -= 1.0;

    grad_x.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..classes {
        axpy(g[j], &scratch[j], grad_x);
    }

    // ∂L/∂u_j = g_j (I - w'_j w'_jᵀ) x / ‖u_j‖, with u_j = α w_c + w_j
    let mut du = vec![0.0; x.len()];
    for j in (0..classes).filter(|&j| j != label) {
        let s = g[j] * inv_norms[j];
        for ((d, &xi), &wi) in du.iter_mut().zip(x).zip(&scratch[j]) {
            *d = s * (xi - logits[j] * wi);
        }
        axpy(1.0, &du, grad_unit.row_mut(j));
        if cfg.flow == GradientFlow::Full {
            axpy(cfg.alpha, &du, grad_unit.row_mut(label));
        }
    }
    axpy(g[label], x, grad_unit.row_mut(label));
    Ok(loss)
}

/// Mean W-Softmax loss over a batch (`xs` holds one instance per row) and its
/// gradients with respect to every instance and to the raw weights.
pub fn wsoftmax_loss_batch(
    clf: &LinearClassifier,
    xs: &Matrix,
    labels: &[usize],
    cfg: &WSoftmaxConfig,
) -> Result<BatchLossGrad> {
    if clf.use_bias() {
        return Err(Error::BiasNotAllowed);
    }
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if xs.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: xs.rows() });
    }
    let (m, classes) = (clf.feature_dim(), clf.num_classes());
    if xs.cols() != m {
        return Err(Error::DimensionMismatch { expected: m, got: xs.cols() });
    }
    for &l in labels {
        check_label(l, classes)?;
    }

    let unit = UnitRows::from_columns(clf.weights())?;
    let n = labels.len();
    let mut grad_unit = Matrix::zeros(classes, m);
    let mut grad_x = Matrix::zeros(n, m);
    let mut scratch = Vec::new();
    let mut total = 0.0;
    for (k, &label) in labels.iter().enumerate() {
        total += wsoftmax_instance(&unit.rows, xs.row(k), label, cfg, &mut scratch, &mut grad_unit, grad_x.row_mut(k))?;
    }
    let inv_n = 1.0 / n as f64;
    grad_x.as_mut_slice().iter_mut().for_each(|v| *v *= inv_n);

    let mut grad_weights = Matrix::zeros(m, classes);
    for j in 0..classes {
        let w = unit.rows.row(j);
        let gw = grad_unit.row(j);
        let proj = dot(w, gw);
        let scale = inv_n / unit.norms[j];
        for r in 0..m {
            grad_weights.set(r, j, (gw[r] - proj * w[r]) * scale);
        }
    }
    Ok(BatchLossGrad { loss: total * inv_n, grad_x, grad_weights })
}

/// Single-instance W-Softmax loss.
pub fn wsoftmax_loss(clf: &LinearClassifier, x: &[f64], label: usize, cfg: &WSoftmaxConfig) -> Result<LossGrad> {
    let xs = Matrix::new(1, x.len(), x.to_vec())?;
    let b = wsoftmax_loss_batch(clf, &xs, &[label], cfg)?;
    Ok(LossGrad {
        loss: b.loss,
        grad_x: Vector::from_vec_unchecked(b.grad_x.into_inner()),
        grad_weights: b.grad_weights,
        grad_bias: None,
    })
}
