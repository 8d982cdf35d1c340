//! Ridge regression for the linear head.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::gemm;

/// Row-major `rows × cols` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("feature rows have differing lengths"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// How features and labels are preprocessed before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Standardize each column (population std), center labels, refit the
    /// intercept from the label mean. Constant columns are zeroed.
    #[default]
    Standardize,
    /// Raw features, uncentered labels, zero intercept.
    Raw,
}

/// Per-feature affine normalization applied before the linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    /// Zero marks a constant column, whose normalized value is always 0.
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Scale mapping a raw feature to its normalized value (0 for constant columns).
    #[inline]
    pub fn inv_std(&self, j: usize) -> f64 {
        if self.std[j] > 0.0 {
            1.0 / self.std[j]
        } else {
            0.0
        }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.mean[j]) * self.inv_std(j))
            .collect()
    }
}

/// Fitted linear head: `prediction = weights · norm(f) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub norm: FeatureNorm,
    pub lambda: f64,
    pub preprocess: Preprocess,
}

impl RidgeFit {
    pub fn predict(&self, raw: &[f64]) -> f64 {
        raw.iter()
            .enumerate()
            .map(|(j, &v)| self.weights[j] * (v - self.norm.mean[j]) * self.norm.inv_std(j))
            .sum::<f64>()
            + self.bias
    }

    /// Weights in raw feature units, `w_j / std_j`.
    pub fn raw_weights(&self) -> Vec<f64> {
        (0..self.weights.len())
            .map(|j| self.weights[j] * self.norm.inv_std(j))
            .collect()
    }
}

/// Solves `(XᵀX + λI) w = Xᵀy` on the given matrix without preprocessing.
///
/// Uses the primal system when `n ≥ d` and the dual `w = Xᵀ(XXᵀ + λI)⁻¹y`
/// otherwise. A singular system (only possible at `λ = 0`) falls back to
/// the SVD pseudo-inverse, giving the minimum-norm least-squares solution.
pub fn ridge_solve(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (n, d) = (x.rows, x.cols);
    if n == 0 || d == 0 {
        return Err(Error::invalid("ridge regression needs n >= 1 and d >= 1"));
    }
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", y.len())));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid("lambda must be finite and nonnegative"));
    }
    if x.data.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge inputs".into()));
    }
    if n >= d {
        let mut gram = vec![0.0; d * d];
        // XᵀX: Xᵀ is X with swapped strides
        gemm(d, n, d, &x.data, 1, d, &x.data, d, 1, &mut gram);
        let mut a = DMatrix::from_row_slice(d, d, &gram);
        for i in 0..d {
            a[(i, i)] += lambda;
        }
        let xty: Vec<f64> = (0..d).map(|j| (0..n).map(|i| x.data[i * d + j] * y[i]).sum()).collect();
        let w = solve_spd(a, DVector::from_vec(xty))?;
        Ok(w.as_slice().to_vec())
    } else {
        let mut kern = vec![0.0; n * n];
        gemm(n, d, n, &x.data, d, 1, &x.data, 1, d, &mut kern);
        let mut a = DMatrix::from_row_slice(n, n, &kern);
        for i in 0..n {
            a[(i, i)] += lambda;
        }
        let alpha = solve_spd(a, DVector::from_column_slice(y))?;
        Ok((0..d)
            .map(|j| (0..n).map(|i| x.data[i * d + j] * alpha[i]).sum())
            .collect())
    }
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let sol = ch.solve(&b);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let svd = a.svd(true, true);
    svd.solve(&b, scale * 1e-12)
        .map_err(|e| Error::Format(format!("pseudo-inverse solve failed: {e}")))
}

/// Fits the ridge head with the chosen preprocessing.
pub fn fit_ridge(features: &FeatureMatrix, labels: &[f64], lambda: f64, preprocess: Preprocess) -> Result<RidgeFit> {
    let (n, d) = (features.rows, features.cols);
    if n == 0 || d == 0 {
        return Err(Error::invalid("ridge regression needs n >= 1 and d >= 1"));
    }
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} rows", labels.len())));
    }
    if features.data.iter().chain(labels).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("ridge inputs".into()));
    }
    match preprocess {
        Preprocess::Raw => {
            let weights = ridge_solve(features, labels, lambda)?;
            Ok(RidgeFit {
                weights,
                bias: 0.0,
                norm: FeatureNorm::identity(d),
                lambda,
                preprocess,
            })
        }
        Preprocess::Standardize => {
            let norm = column_stats(features);
            let mut z = features.data.clone();
            for row in z.chunks_exact_mut(d) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = (*v - norm.mean[j]) * norm.inv_std(j);
                }
            }
            let y_mean = labels.iter().sum::<f64>() / n as f64;
            let yc: Vec<f64> = labels.iter().map(|v| v - y_mean).collect();
            let weights = ridge_solve(&FeatureMatrix::new(n, d, z)?, &yc, lambda)?;
            Ok(RidgeFit {
                weights,
                bias: y_mean,
                norm,
                lambda,
                preprocess,
            })
        }
    }
}

fn column_stats(x: &FeatureMatrix) -> FeatureNorm {
    let (n, d) = (x.rows as f64, x.cols);
    let mut mean = vec![0.0; d];
    for row in x.data.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    let mut constant = vec![true; d];
    let first = x.row(0);
    for row in x.data.chunks_exact(d) {
        for j in 0..d {
            let e = row[j] - mean[j];
            var[j] += e * e;
            if row[j] != first[j] {
                constant[j] = false;
            }
        }
    }
    let std = var
        .iter()
        .zip(&constant)
        .map(|(v, &c)| if c { 0.0 } else { (v / n).sqrt() })
        .collect();
    FeatureNorm { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn random_problem(seed: u64, n: usize, d: usize) -> (FeatureMatrix, Vec<f64>) {
        let mut r = rng::stream(seed, 0);
        let x: Vec<f64> = (0..n * d).map(|_| rng::standard_normal(&mut r) * 2.0 + 1.0).collect();
        let y: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
        (FeatureMatrix::new(n, d, x).unwrap(), y)
    }

    #[test]
    fn noiseless_line_is_interpolated() {
        let x = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let fit = fit_ridge(&x, &[1.0, 2.0], 0.0, Preprocess::Standardize).unwrap();
        assert!((fit.raw_weights()[0] - 1.0).abs() < 1e-12);
        assert!((fit.predict(&[1.0]) - 1.0).abs() < 1e-12);
        assert!((fit.predict(&[2.0]) - 2.0).abs() < 1e-12);
        let raw = ridge_solve(&x, &[1.0, 2.0], 0.0).unwrap();
        assert!((raw[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        // Σxy = 5, Σx² = 5 → w = 5 / (5 + λ)
        let x = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let w = ridge_solve(&x, &[1.0, 2.0], 5.0).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dual_and_primal_agree() {
        let (x, y) = random_problem(3, 6, 10);
        let dual = ridge_solve(&x, &y, 0.7).unwrap();
        // primal via an explicit d×d solve
        let xm = DMatrix::from_row_slice(6, 10, x.as_slice());
        let a = xm.transpose() * &xm + DMatrix::identity(10, 10) * 0.7;
        let b = xm.transpose() * DVector::from_column_slice(&y);
        let primal = a.cholesky().unwrap().solve(&b);
        for (p, q) in dual.iter().zip(primal.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_zero_underdetermined_interpolates() {
        let (x, y) = random_problem(4, 5, 12);
        let fit = fit_ridge(&x, &y, 0.0, Preprocess::Standardize).unwrap();
        for (i, yi) in y.iter().enumerate() {
            assert!((fit.predict(x.row(i)) - yi).abs() < 1e-9);
        }
    }

    #[test]
    fn least_squares_residual_is_orthogonal() {
        let (x, y) = random_problem(5, 40, 6);
        let w = ridge_solve(&x, &y, 0.0).unwrap();
        for j in 0..6 {
            let dot: f64 = (0..40)
                .map(|i| {
                    let pred: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                    x.row(i)[j] * (y[i] - pred)
                })
                .sum();
            assert!(dot.abs() < 1e-8, "{dot}");
        }
    }

    #[test]
    fn constant_columns_are_ignored() {
        let x = FeatureMatrix::new(3, 2, vec![1.0, 5.0, 2.0, 5.0, 3.0, 5.0]).unwrap();
        let fit = fit_ridge(&x, &[1.0, 2.0, 3.0], 0.0, Preprocess::Standardize).unwrap();
        assert_eq!(fit.norm.std[1], 0.0);
        assert_eq!(fit.weights[1], 0.0);
        assert!((fit.predict(&[4.0, 123.0]) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_conventions() {
        let x = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        let raw = fit_ridge(&x, &[0.5], 1.0, Preprocess::Raw).unwrap();
        assert!((raw.weights[0] - 0.25).abs() < 1e-15);
        assert_eq!(raw.bias, 0.0);
        let std = fit_ridge(&x, &[0.5], 1.0, Preprocess::Standardize).unwrap();
        assert_eq!(std.weights, vec![0.0]);
        assert_eq!(std.bias, 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = FeatureMatrix::new(0, 3, vec![]).unwrap();
        assert!(fit_ridge(&x, &[], 1.0, Preprocess::Standardize).is_err());
        let x = FeatureMatrix::new(2, 0, vec![]).unwrap();
        assert!(fit_ridge(&x, &[1.0, 2.0], 1.0, Preprocess::Standardize).is_err());
        let x = FeatureMatrix::new(1, 1, vec![f64::NAN]).unwrap();
        assert!(fit_ridge(&x, &[1.0], 1.0, Preprocess::Standardize).is_err());
        let x = FeatureMatrix::new(1, 1, vec![1.0]).unwrap();
        assert!(fit_ridge(&x, &[1.0, 2.0], 1.0, Preprocess::Standardize).is_err());
        assert!(ridge_solve(&x, &[1.0], -1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn shrinkage_is_monotone(seed in 0u64..1000, l1 in 0.0f64..50.0, dl in 0.0f64..50.0) {
            let (x, y) = random_problem(seed, 12, 5);
            let a = fit_ridge(&x, &y, l1, Preprocess::Standardize).unwrap();
            let b = fit_ridge(&x, &y, l1 + dl, Preprocess::Standardize).unwrap();
            let na: f64 = a.weights.iter().map(|v| v * v).sum();
            let nb: f64 = b.weights.iter().map(|v| v * v).sum();
            prop_assert!(nb <= na * (1.0 + 1e-10) + 1e-15);
        }
    }
}
