//! Equiangular classifier weights: C unit vectors in R^(C-1) whose pairwise
//! inner products all equal -1/(C-1).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::tensor::{axpy, dot, norm, Matrix};

/// The (C-1)×C simplex weight matrix; column `i` is the weight of class `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights {
    weights: Matrix,
}

impl SimplexWeights {
    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn into_matrix(self) -> Matrix {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn target_cosine(&self) -> f64 {
        -1.0 / (self.num_classes() as f64 - 1.0)
    }
}

/// Smallest feature dimension that admits C equiangular unit weights.
pub fn min_feature_dim(classes: usize) -> Result<usize> {
    if classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {classes}")));
    }
    Ok(classes - 1)
}

/// Builds `W_C` by the recurrence
///
/// ```text
/// W_2 = [1, -1]
/// W_C = [ s·W_{C-1}          0 ]    s = sqrt(((C-1)^2 - 1) / (C-1)^2)
///       [ -1/(C-1) ... -1/(C-1) 1 ]
/// ```
pub fn build_simplex(classes: usize) -> Result<SimplexWeights> {
    min_feature_dim(classes)?;
    let mut w = Matrix::from_vec_unchecked(1, 2, vec![1.0, -1.0]);
    for c in 3..=classes {
        let k = (c - 1) as f64;
        let scale = ((k * k - 1.0) / (k * k)).sqrt();
        let mut next = Matrix::zeros(c - 1, c);
        for r in 0..c - 2 {
            for j in 0..c - 1 {
                next.set(r, j, scale * w.get(r, j));
            }
        }
        for j in 0..c - 1 {
            next.set(c - 2, j, -1.0 / k);
        }
        next.set(c - 2, c - 1, 1.0);
        w = next;
    }
    Ok(SimplexWeights { weights: w })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquiangularReport {
    pub max_norm_dev: f64,
    pub max_pairwise_dev: f64,
    pub target_cosine: f64,
    /// L2 norm of the sum of all columns; zero for a centred simplex.
    pub column_sum_norm: f64,
    pub passed: bool,
}

/// Checks unit column norms and pairwise dots of -1/(C-1), both within `tol`.
pub fn verify_equiangular(w: &Matrix, tol: f64) -> EquiangularReport {
    let c = w.cols();
    let target = if c >= 2 { -1.0 / (c as f64 - 1.0) } else { f64::NAN };
    let gram = w.column_gram();
    let mut max_norm_dev = 0.0f64;
    let mut max_pairwise_dev = 0.0f64;
    for i in 0..c {
        max_norm_dev = max_norm_dev.max((gram.get(i, i).sqrt() - 1.0).abs());
        for j in i + 1..c {
            max_pairwise_dev = max_pairwise_dev.max((gram.get(i, j) - target).abs());
        }
    }
    let column_sum: Vec<f64> = (0..w.rows()).map(|r| w.row(r).iter().sum()).collect();
    EquiangularReport {
        max_norm_dev,
        max_pairwise_dev,
        target_cosine: target,
        column_sum_norm: norm(&column_sum),
        passed: c >= 2 && max_norm_dev <= tol && max_pairwise_dev <= tol,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtensionSearch {
    pub classes: usize,
    pub trials: usize,
    pub best_residual: f64,
    pub best_vector: Vec<f64>,
}

/// How far a unit `w` is from having equal inner products with every column:
/// `min_t max_i |w_iᵀw - t|`, which is half the spread of the dots.
pub fn extension_residual(w: &Matrix, candidate: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in column_dots(w, candidate) {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    0.5 * (hi - lo)
}

fn column_dots(w: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (r, &vr) in v.iter().enumerate() {
        axpy(vr, w.row(r), &mut out);
    }
    out
}

const REFINE_ITERS: usize = 60;

/// Searches the unit sphere in R^(C-1) for a vector that would extend
/// `build_simplex(C)` to C+1 equiangular columns, and reports the best
/// residual reached. No such vector exists, so the residual stays positive.
///
/// Each trial starts from a uniform random direction and refines it by
/// projected gradient descent on `Σ (d_i - d̄)^4`, which concentrates on the
/// extreme dots and therefore tracks the spread.
pub fn extension_infeasibility_search(classes: usize, trials: usize, seed: u64) -> Result<ExtensionSearch> {
    if classes < 3 {
        return Err(invalid(format!("extension search needs C >= 3, got {classes}")));
    }
    if trials == 0 {
        return Err(invalid("extension search needs at least one trial"));
    }
    let simplex = build_simplex(classes)?;
    let w = simplex.matrix();
    let dim = w.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best_residual = f64::INFINITY;
    let mut best_vector = vec![0.0; dim];
    for _ in 0..trials {
        let mut v: Vec<f64> = loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.iter().map(|x| x / n).collect();
            }
        };
        let mut step = 0.5;
        for _ in 0..REFINE_ITERS {
            let r = extension_residual(w, &v);
            if r < best_residual {
                best_residual = r;
                best_vector.clone_from(&v);
            }
            let dots = column_dots(w, &v);
            let mean = dots.iter().sum::<f64>() / dots.len() as f64;
            let mut grad = vec![0.0; dim];
            for (r, g) in grad.iter_mut().enumerate() {
                *g = w.row(r).iter().zip(&dots).map(|(wi, d)| 4.0 * (d - mean).powi(3) * wi).sum();
            }
            let radial = dot(&grad, &v);
            axpy(-radial, &v.clone(), &mut grad);
            let gn = norm(&grad);
            if gn < 1e-14 {
                break;
            }
            axpy(-step / gn, &grad, &mut v);
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x /= n);
            step *= 0.9;
        }
        let r = extension_residual(w, &v);
        if r < best_residual {
            best_residual = r;
            best_vector.clone_from(&v);
        }
    }
    Ok(ExtensionSearch { classes, trials, best_residual, best_vector })
}

/// Bytes needed for an M×C bias-free FC layer stored as 32-bit floats.
pub fn fc_param_memory(feature_dim: usize, classes: usize) -> u64 {
    feature_dim as u64 * classes as u64 * 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Vector;
    use proptest::prelude::*;

    #[test]
    fn min_feature_dim_examples() {
        assert_eq!(min_feature_dim(10).unwrap(), 9);
        assert_eq!(min_feature_dim(100).unwrap(), 99);
        assert_eq!(min_feature_dim(2).unwrap(), 1);
        assert!(min_feature_dim(1).is_err());
        assert!(min_feature_dim(0).is_err());
    }

    #[test]
    fn two_and_three_class_constructions() {
        assert_eq!(build_simplex(2).unwrap().matrix().as_slice(), &[1.0, -1.0]);
        let w3 = build_simplex(3).unwrap();
        let expected = [0.75f64.sqrt(), -(0.75f64.sqrt()), 0.0, -0.5, -0.5, 1.0];
        for (a, b) in w3.matrix().as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!((w3.matrix().get(0, 0) - 0.866025).abs() < 1e-6);
        assert!(build_simplex(1).is_err());
    }

    #[test]
    fn four_class_pairwise_dots() {
        let w = build_simplex(4).unwrap();
        assert_eq!((w.matrix().rows(), w.matrix().cols()), (3, 4));
        let g = w.matrix().column_gram();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { -1.0 / 3.0 };
                assert!((g.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn verify_examples() {
        let r = verify_equiangular(build_simplex(5).unwrap().matrix(), 1e-9);
        assert!(r.passed);
        assert_eq!(r.target_cosine, -0.25);

        let r = verify_equiangular(&Matrix::identity(3), 1e-9);
        assert!(!r.passed);
        assert!((r.max_pairwise_dev - 0.5).abs() < 1e-15);

        let r = verify_equiangular(build_simplex(2).unwrap().matrix(), 1e-9);
        assert!(r.passed);
        assert_eq!(r.target_cosine, -1.0);
    }

    #[test]
    fn full_rank() {
        for c in [2, 3, 7, 20, 50] {
            assert_eq!(build_simplex(c).unwrap().matrix().rank(1e-9), c - 1);
        }
    }

    #[test]
    fn extension_search_rejects_small_inputs() {
        assert!(extension_infeasibility_search(2, 10, 0).is_err());
        assert!(extension_infeasibility_search(3, 0, 0).is_err());
    }

    // Independent oracle: dense enumeration of the unit circle / sphere.
    fn brute_force_min_residual(classes: usize) -> f64 {
        let w = build_simplex(classes).unwrap();
        let m = w.matrix();
        let mut best = f64::INFINITY;
        match classes {
            3 => {
                let n = 200_000;
                for k in 0..n {
                    let t = std::f64::consts::TAU * k as f64 / n as f64;
                    best = best.min(extension_residual(m, &[t.cos(), t.sin()]));
                }
            }
            4 => {
                let (nt, np) = (600, 1200);
                for a in 0..=nt {
                    let theta = std::f64::consts::PI * a as f64 / nt as f64;
                    for b in 0..np {
                        let phi = std::f64::consts::TAU * b as f64 / np as f64;
                        let v = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                        best = best.min(extension_residual(m, &v));
                    }
                }
            }
            _ => unreachable!(),
        }
        best
    }

    #[test]
    fn extension_search_matches_enumeration_oracle() {
        // slack = how far the grid minimum can sit above the true minimum
        for (c, floor, slack) in [(3, 0.1, 1e-4), (4, 0.05, 5e-3)] {
            let oracle = brute_force_min_residual(c);
            let found = extension_infeasibility_search(c, 1000, 7).unwrap();
            assert!(found.best_residual > floor, "C={c}: {}", found.best_residual);
            // the search cannot beat the global minimum, and should get close to it
            assert!(found.best_residual >= oracle - slack, "C={c}: {} < oracle {oracle}", found.best_residual);
            assert!(found.best_residual <= oracle + 1e-2, "C={c}: {} vs oracle {oracle}", found.best_residual);
            let v = Vector::new(found.best_vector).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_memory_examples() {
        assert_eq!(fc_param_memory(9, 10), 360);
        assert_eq!(fc_param_memory(1, 2), 8);
        assert_eq!(fc_param_memory(99, 100), 39600);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn simplex_invariants_hold(c in 2usize..=200) {
            let w = build_simplex(c).unwrap();
            let r = verify_equiangular(w.matrix(), 1e-9);
            prop_assert!(r.passed, "C={} {:?}", c, r);
            prop_assert!(r.column_sum_norm < 1e-9);
        }

        #[test]
        fn random_orthonormal_sets_fail(c in 3usize..12, seed in any::<u64>()) {
            // Gram-Schmidt on random Gaussian columns in R^c
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cols: Vec<Vec<f64>> = Vec::new();
            while cols.len() < c {
                let mut v: Vec<f64> = (0..c).map(|_| StandardNormal.sample(&mut rng)).collect();
                for q in &cols {
                    let p = dot(&v, q);
                    axpy(-p, q, &mut v);
                }
                let n = norm(&v);
                if n > 1e-6 {
                    cols.push(v.iter().map(|x| x / n).collect());
                }
            }
            let mut m = Matrix::zeros(c, c);
            for (j, col) in cols.iter().enumerate() {
                m.set_column(j, col).unwrap();
            }
            prop_assert!(!verify_equiangular(&m, 1e-9).passed);
        }
    }
}
