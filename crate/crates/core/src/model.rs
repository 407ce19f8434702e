//! Feedforward feature extractor plus a bias-free cosine classifier head.
//!
//! Hidden layers apply the configured activation; the last layer, which
//! produces the M-dimensional feature `x`, is linear so features can point in
//! any direction of R^M.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::loss::LinearClassifier;
use crate::simplex::build_simplex;
use crate::tensor::{argmax, axpy, dot, Matrix, Vector};

pub const PRELU_INIT_SLOPE: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Prelu,
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    /// Number of units M in the feature layer feeding the classifier.
    pub feature_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("all layer widths must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every dense layer, classifier excluded.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// `y = W x + b` with `W` stored out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Matrix::zeros(fan_out, fan_in), bias: vec![0.0; fan_out] }
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let (n, out) = (input.rows(), self.weight.rows());
        let mut y = Matrix::zeros(n, out);
        for k in 0..n {
            let x = input.row(k);
            let row = y.row_mut(k);
            for (o, yo) in row.iter_mut().enumerate() {
                *yo = self.bias[o] + dot(self.weight.row(o), x);
            }
        }
        y
    }
}

/// Parameters of the whole network. The same shape doubles as the gradient
/// and momentum buffers in the trainer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    spec: MlpSpec,
    pub layers: Vec<Dense>,
    /// Per-channel PReLU slopes, one vector per hidden layer (empty unless PReLU).
    pub slopes: Vec<Vec<f64>>,
    /// Unconstrained classifier matrix V (M×C); class weights are its unit columns.
    pub classifier: Matrix,
}

pub struct ForwardCache {
    /// Input to each dense layer.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
}

/// Mutable view of one parameter tensor, flagged when weight decay applies.
pub struct ParamGroup<'a> {
    pub data: &'a mut [f64],
    pub regularized: bool,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec_unchecked(rows, cols, data)
}

/// Xavier-uniform weights, zero biases, PReLU slopes at 0.25.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(fi, fo)| Dense { weight: xavier(&mut rng, fo, fi, fi, fo), bias: vec![0.0; fo] })
        .collect();
    let classifier = xavier(&mut rng, spec.feature_dim, spec.num_classes, spec.feature_dim, spec.num_classes);
    Ok(ModelParams { slopes: default_slopes(spec), spec: spec.clone(), layers, classifier })
}

fn default_slopes(spec: &MlpSpec) -> Vec<Vec<f64>> {
    match spec.activation {
        Activation::Prelu => spec.hidden_dims.iter().map(|&h| vec![PRELU_INIT_SLOPE; h]).collect(),
        _ => Vec::new(),
    }
}

impl ModelParams {
    /// Assembles parameters from parts, checking every shape against `spec`.
    pub fn from_parts(spec: MlpSpec, layers: Vec<Dense>, slopes: Vec<Vec<f64>>, classifier: Matrix) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::DimensionMismatch { expected: shapes.len(), got: layers.len() });
        }
        for (l, &(fi, fo)) in layers.iter().zip(&shapes) {
            if l.weight.rows() != fo || l.weight.cols() != fi {
                return Err(invalid(format!(
                    "layer weight is {}x{}, expected {fo}x{fi}",
                    l.weight.rows(),
                    l.weight.cols()
                )));
            }
            if l.bias.len() != fo {
                return Err(Error::DimensionMismatch { expected: fo, got: l.bias.len() });
            }
        }
        let want_slopes: Vec<usize> = default_slopes(&spec).iter().map(Vec::len).collect();
        if slopes.iter().map(Vec::len).collect::<Vec<_>>() != want_slopes {
            return Err(invalid("PReLU slope shapes do not match the hidden layers"));
        }
        if classifier.rows() != spec.feature_dim || classifier.cols() != spec.num_classes {
            return Err(invalid("classifier shape does not match feature_dim x num_classes"));
        }
        let p = ModelParams { spec, layers, slopes, classifier };
        if p.groups().iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(p)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Same shapes, all zeros (slopes included).
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(|l| Dense::zeros(l.weight.cols(), l.weight.rows())).collect(),
            slopes: self.slopes.iter().map(|s| vec![0.0; s.len()]).collect(),
            classifier: Matrix::zeros(self.classifier.rows(), self.classifier.cols()),
        }
    }

    /// Replaces V with the equiangular simplex, zero-padded to M rows.
    pub fn seed_classifier_with_simplex(&mut self) -> Result<()> {
        let c = self.spec.num_classes;
        if self.spec.feature_dim < c - 1 {
            return Err(invalid(format!("simplex head needs feature_dim >= {}, got {}", c - 1, self.spec.feature_dim)));
        }
        let s = build_simplex(c)?;
        let mut v = Matrix::zeros(self.spec.feature_dim, c);
        for r in 0..c - 1 {
            v.row_mut(r).copy_from_slice(s.matrix().row(r));
        }
        self.classifier = v;
        Ok(())
    }

    pub fn classifier_head(&self) -> LinearClassifier {
        LinearClassifier::bias_free(self.classifier.clone())
    }

    /// Read-only views of every tensor in a fixed order.
    pub fn groups(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(&l.bias);
        }
        for s in &self.slopes {
            out.push(s);
        }
        out.push(self.classifier.as_slice());
        out
    }

    /// Mutable views in the same order as [`ModelParams::groups`]. Dense
    /// weights and V are regularized; biases and slopes are not.
    pub fn groups_mut(&mut self) -> Vec<ParamGroup<'_>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(ParamGroup { data: l.weight.as_mut_slice(), regularized: true });
            out.push(ParamGroup { data: &mut l.bias, regularized: false });
        }
        for s in &mut self.slopes {
            out.push(ParamGroup { data: s, regularized: false });
        }
        out.push(ParamGroup { data: self.classifier.as_mut_slice(), regularized: true });
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.groups().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch { expected: self.num_params(), got: flat.len() });
        }
        let mut offset = 0;
        for g in self.groups_mut() {
            let n = g.data.len();
            g.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Features for a batch (one instance per row) plus what backprop needs.
    pub fn forward_batch(&self, xs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if xs.cols() != self.spec.input_dim {
            return Err(Error::DimensionMismatch { expected: self.spec.input_dim, got: xs.cols() });
        }
        let hidden = self.spec.hidden_dims.len();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut h = xs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i < hidden {
                h = self.activate(i, &z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, ForwardCache { inputs, pre }))
    }

    fn activate(&self, layer: usize, z: &Matrix) -> Matrix {
        let mut a = z.clone();
        let width = z.cols();
        for (idx, v) in a.as_mut_slice().iter_mut().enumerate() {
            *v = match self.spec.activation {
                Activation::Prelu => {
                    if *v > 0.0 {
                        *v
                    } else {
                        self.slopes[layer][idx % width] * *v
                    }
                }
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
            };
        }
        a
    }

    /// Backpropagates `grad_features` (N×M) through the extractor, writing
    /// layer and slope gradients into `grads`. The classifier gradient is untouched.
    pub fn backward(&self, cache: &ForwardCache, grad_features: &Matrix, grads: &mut ModelParams) {
        let hidden = self.spec.hidden_dims.len();
        let mut delta = grad_features.clone();
        for i in (0..self.layers.len()).rev() {
            if i < hidden {
                delta = self.activation_backward(i, &cache.pre[i], &delta, grads);
            }
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let g = &mut grads.layers[i];
            g.weight.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
            g.bias.iter_mut().for_each(|v| *v = 0.0);
            let mut next = if i > 0 { Some(Matrix::zeros(input.rows(), input.cols())) } else { None };
            for k in 0..delta.rows() {
                let d = delta.row(k);
                let x = input.row(k);
                for (o, &dout) in d.iter().enumerate() {
                    if dout == 0.0 {
                        continue;
                    }
                    g.bias[o] += dout;
                    axpy(dout, x, g.weight.row_mut(o));
                    if let Some(n) = next.as_mut() {
                        axpy(dout, layer.weight.row(o), n.row_mut(k));
                    }
                }
            }
            if let Some(n) = next {
                delta = n;
            }
        }
    }

    fn activation_backward(&self, layer: usize, z: &Matrix, delta: &Matrix, grads: &mut ModelParams) -> Matrix {
        let width = z.cols();
        let mut out = delta.clone();
        if self.spec.activation == Activation::Prelu {
            grads.slopes[layer].iter_mut().for_each(|v| *v = 0.0);
        }
        for (idx, (d, &zv)) in out.as_mut_slice().iter_mut().zip(z.as_slice()).enumerate() {
            match self.spec.activation {
                Activation::Prelu => {
                    if zv <= 0.0 {
                        grads.slopes[layer][idx % width] += *d * zv;
                        *d *= self.slopes[layer][idx % width];
                    }
                }
                Activation::Relu => {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
                Activation::Tanh => {
                    let t = zv.tanh();
                    *d *= 1.0 - t * t;
                }
            }
        }
        out
    }

    pub fn forward_features(&self, x: &[f64]) -> Result<Vector> {
        let xs = Matrix::new(1, x.len(), x.to_vec())?;
        let (f, _) = self.forward_batch(&xs)?;
        let out = f.into_inner();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(Vector::from_vec_unchecked(out))
    }

    /// Class scores against the original unit-norm weights (no biasing).
    pub fn scores(&self, feature: &[f64]) -> Result<Vector> {
        self.classifier_head().logits(feature)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let f = self.forward_features(x)?;
        Ok(argmax(&self.scores(&f)?))
    }

    /// Predictions for every row of `xs`, with the head normalized once.
    pub fn predict_batch(&self, xs: &Matrix) -> Result<Vec<usize>> {
        let (features, _) = self.forward_batch(xs)?;
        let unit = self.classifier.normalize_columns()?;
        let mut scores = vec![0.0; unit.cols()];
        Ok((0..features.rows())
            .map(|k| {
                scores.iter_mut().for_each(|s| *s = 0.0);
                for (r, &f) in features.row(k).iter().enumerate() {
                    axpy(f, unit.row(r), &mut scores);
                }
                argmax(&scores)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::finite_diff_check;
    use proptest::prelude::*;

    fn spec(hidden: Vec<usize>, act: Activation) -> MlpSpec {
        MlpSpec { input_dim: 3, hidden_dims: hidden, feature_dim: 2, activation: act, num_classes: 3 }
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(vec![4, 5], Activation::Prelu);
        assert_eq!(init_params(&s, 9).unwrap(), init_params(&s, 9).unwrap());
        assert_ne!(init_params(&s, 9).unwrap(), init_params(&s, 10).unwrap());
    }

    #[test]
    fn xavier_bound_for_square_layer() {
        let s = MlpSpec {
            input_dim: 3,
            hidden_dims: vec![3],
            feature_dim: 3,
            activation: Activation::Relu,
            num_classes: 3,
        };
        let p = init_params(&s, 1).unwrap();
        for l in &p.layers {
            assert!(l.weight.as_slice().iter().all(|v| v.abs() <= 1.0));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
        assert!(p.slopes.is_empty());
        let s = spec(vec![4], Activation::Prelu);
        assert_eq!(init_params(&s, 0).unwrap().slopes, vec![vec![0.25; 4]]);
    }

    #[test]
    fn zero_depth_identity_passes_input_through() {
        let s = MlpSpec {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            activation: Activation::Prelu,
            num_classes: 2,
        };
        let mut p = init_params(&s, 0).unwrap();
        assert_eq!(p.layers.len(), 1);
        p.layers[0].weight = Matrix::identity(3);
        let x = [0.5, -2.0, 7.0];
        assert_eq!(p.forward_features(&x).unwrap().as_slice(), &x);
    }

    #[test]
    fn prelu_negative_branch() {
        let s = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![1],
            feature_dim: 1,
            activation: Activation::Prelu,
            num_classes: 2,
        };
        let mut p = init_params(&s, 0).unwrap();
        p.layers[0].weight = Matrix::identity(1);
        p.layers[1].weight = Matrix::identity(1);
        assert_eq!(p.forward_features(&[-2.0]).unwrap().as_slice(), &[-0.5]);
        assert_eq!(p.forward_features(&[3.0]).unwrap().as_slice(), &[3.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = init_params(&spec(vec![4], Activation::Tanh), 0).unwrap();
        assert!(matches!(p.forward_features(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn predict_examples() {
        let s =
            MlpSpec { input_dim: 1, hidden_dims: vec![], feature_dim: 1, activation: Activation::Relu, num_classes: 2 };
        let mut p = init_params(&s, 0).unwrap();
        p.layers[0].weight = Matrix::identity(1);
        p.seed_classifier_with_simplex().unwrap();
        assert_eq!(p.predict(&[4.0]).unwrap(), 0);
        assert_eq!(p.predict(&[-4.0]).unwrap(), 1);

        let s =
            MlpSpec { input_dim: 3, hidden_dims: vec![], feature_dim: 3, activation: Activation::Relu, num_classes: 3 };
        let mut p = init_params(&s, 4).unwrap();
        p.layers[0].weight = Matrix::identity(3);
        let unit = p.classifier.normalize_columns().unwrap();
        for i in 0..3 {
            assert_eq!(p.predict(&unit.column(i).scaled(2.5)).unwrap(), i);
        }
        // identical columns tie, lowest index wins
        p.classifier = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p.predict(&[1.0, 0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn simplex_seed_needs_room() {
        let s =
            MlpSpec { input_dim: 2, hidden_dims: vec![], feature_dim: 2, activation: Activation::Relu, num_classes: 5 };
        let mut p = init_params(&s, 0).unwrap();
        assert!(p.seed_classifier_with_simplex().is_err());
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(&spec(vec![4, 3], Activation::Prelu), 2).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn backward_matches_finite_differences_for_each_activation() {
        for act in [Activation::Prelu, Activation::Tanh, Activation::Relu] {
            let s = MlpSpec { input_dim: 4, hidden_dims: vec![5, 3], feature_dim: 3, activation: act, num_classes: 3 };
            let mut p = init_params(&s, 17).unwrap();
            if act == Activation::Prelu {
                p.slopes = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![0.15, 0.25, 0.35]];
            }
            let xs = Matrix::new(2, 4, vec![0.3, -1.1, 0.7, 0.2, -0.4, 0.9, -0.6, 1.3]).unwrap();
            let probe = Matrix::new(2, 3, vec![0.5, -0.2, 0.8, -0.7, 0.1, 0.3]).unwrap();
            // scalar objective: <probe, features>
            let objective = |q: &ModelParams| {
                let (f, _) = q.forward_batch(&xs).unwrap();
                dot(f.as_slice(), probe.as_slice())
            };
            let (_, cache) = p.forward_batch(&xs).unwrap();
            let mut grads = p.zeros_like();
            p.backward(&cache, &probe, &mut grads);
            let base = p.clone();
            let err = finite_diff_check(
                |flat| {
                    let mut q = base.clone();
                    q.set_flat(flat).unwrap();
                    objective(&q)
                },
                &p.to_flat(),
                &grads.to_flat(),
                1e-6,
            );
            assert!(err < 1e-5, "{act:?}: {err}");
        }
    }

    proptest! {
        #[test]
        fn features_finite_and_predict_scale_invariant(x in prop::collection::vec(-50.0f64..50.0, 3), s in 0.01f64..100.0, seed in any::<u64>()) {
            let p = init_params(&spec(vec![6], Activation::Prelu), seed).unwrap();
            let f = p.forward_features(&x).unwrap();
            prop_assert!(f.iter().all(|v| v.is_finite()));
            // rescaling the feature never changes the winning class
            prop_assume!(f.norm() > 1e-9);
            let a = argmax(&p.scores(&f).unwrap());
            let b = argmax(&p.scores(&f.scaled(s)).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
