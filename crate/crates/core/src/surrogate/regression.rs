//! Ordinary least squares for the per-cluster `(p, q) -> (v, a)` maps.
//!
//! The solve goes through a thin SVD of the (centered) design matrix, so
//! rank-deficient designs get the minimum-norm coefficients. Singular values
//! at or below `max(N, d) * sigma_max * f64::EPSILON` count as zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SurrogateError;

/// Per-column affine map applied to raw inputs before regression and
/// distance computation: `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// z-scoring over `rows`. With `center = false` only the scale is fitted
    /// (mean stays zero) so a model without intercept remains strictly linear.
    /// Constant columns get scale 1.
    pub fn fit(rows: &[&[f64]], center: bool) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let mean = if center { column_means(rows, dim) } else { vec![0.0; dim] };
        let n = rows.len().max(1) as f64;
        let scale = (0..dim)
            .map(|j| {
                let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                let s = (ss / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Column means computed relative to the first row, so identical rows give
/// back that row exactly.
pub(crate) fn column_means(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let Some(first) = rows.first() else { return vec![0.0; dim] };
    let n = rows.len() as f64;
    (0..dim)
        .map(|j| {
            let shift: f64 = rows.iter().map(|r| r[j] - first[j]).sum();
            first[j] + shift / n
        })
        .collect()
}

/// `v = A1 z + b1`, `a = A2 z + b2` with `z` the scaled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    /// Rows of A1, `n_v x 2 n_p`.
    pub coef_v: Vec<Vec<f64>>,
    /// Rows of A2, `n_v x 2 n_p`.
    pub coef_a: Vec<Vec<f64>>,
    pub intercept_v: Option<Vec<f64>>,
    pub intercept_a: Option<Vec<f64>>,
    pub scaler: Option<Scaler>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegressionOptions {
    pub intercept: bool,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self { intercept: true }
    }
}

/// Minimum-norm least-squares solution `W` of `X W ~= Y`.
pub fn lstsq(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return DMatrix::zeros(d, y.ncols());
    }
    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return DMatrix::zeros(d, y.ncols());
    }
    let eps = n.max(d) as f64 * sigma_max * f64::EPSILON;
    svd.solve(y, eps).expect("u and v_t were requested")
}

/// Fits one output block: returns `(A, b)` with `A` as `n_out x d` rows.
fn fit_block(z: &[Vec<f64>], y: &[&[f64]], intercept: bool) -> (Vec<Vec<f64>>, Option<Vec<f64>>) {
    let n = z.len();
    let d = z.first().map_or(0, |r| r.len());
    let n_out = y.first().map_or(0, |r| r.len());
    let z_rows: Vec<&[f64]> = z.iter().map(|r| r.as_slice()).collect();
    let (z_mean, y_mean) = if intercept {
        (column_means(&z_rows, d), column_means(y, n_out))
    } else {
        (vec![0.0; d], vec![0.0; n_out])
    };
    let xm = DMatrix::from_fn(n, d, |i, j| z[i][j] - z_mean[j]);
    let ym = DMatrix::from_fn(n, n_out, |i, j| y[i][j] - y_mean[j]);
    let w = lstsq(&xm, &ym);
    let coef: Vec<Vec<f64>> = (0..n_out).map(|o| (0..d).map(|j| w[(j, o)]).collect()).collect();
    let b = intercept.then(|| {
        (0..n_out)
            .map(|o| y_mean[o] - coef[o].iter().zip(&z_mean).map(|(c, m)| c * m).sum::<f64>())
            .collect()
    });
    (coef, b)
}

/// Least-squares fit of `v` and `a` on `inputs`, after applying `scaler`.
pub fn fit_regression(
    inputs: &[&[f64]],
    outputs_v: &[&[f64]],
    outputs_a: &[&[f64]],
    scaler: Option<Scaler>,
    options: RegressionOptions,
) -> Result<RegressionModel, SurrogateError> {
    let n = inputs.len();
    if n == 0 || outputs_v.len() != n || outputs_a.len() != n {
        return Err(SurrogateError::Invalid(format!(
            "regression needs matching non-empty rows (inputs {n}, v {}, a {})",
            outputs_v.len(),
            outputs_a.len()
        )));
    }
    let d = inputs[0].len();
    if inputs.iter().any(|r| r.len() != d) {
        return Err(SurrogateError::Invalid("ragged input rows".into()));
    }
    if let Some(s) = &scaler {
        if s.dim() != d {
            return Err(SurrogateError::Invalid("scaler dimension mismatch".into()));
        }
    }
    let all = inputs.iter().chain(outputs_v).chain(outputs_a);
    if all.flat_map(|r| r.iter()).any(|x| !x.is_finite()) {
        return Err(SurrogateError::Invalid("non-finite training value".into()));
    }
    let z: Vec<Vec<f64>> = match &scaler {
        Some(s) => inputs.iter().map(|r| s.apply(r)).collect(),
        None => inputs.iter().map(|r| r.to_vec()).collect(),
    };
    let (coef_v, intercept_v) = fit_block(&z, outputs_v, options.intercept);
    let (coef_a, intercept_a) = fit_block(&z, outputs_a, options.intercept);
    let model = RegressionModel { coef_v, coef_a, intercept_v, intercept_a, scaler };
    if !model.is_finite() {
        return Err(SurrogateError::Invalid("fit produced non-finite coefficients".into()));
    }
    Ok(model)
}

fn affine(rows: &[Vec<f64>], b: Option<&Vec<f64>>, z: &[f64]) -> Vec<f64> {
    rows.iter()
        .enumerate()
        .map(|(o, row)| {
            let dot: f64 = row.iter().zip(z).map(|(c, x)| c * x).sum();
            dot + b.map_or(0.0, |b| b[o])
        })
        .collect()
}

impl RegressionModel {
    pub fn input_dim(&self) -> usize {
        self.coef_v.first().map_or(0, |r| r.len())
    }

    pub fn n_v(&self) -> usize {
        self.coef_v.len()
    }

    /// Evaluates the model on a raw (unscaled) input.
    pub fn predict(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let scaled;
        let z = match &self.scaler {
            Some(s) => {
                scaled = s.apply(input);
                scaled.as_slice()
            }
            None => input,
        };
        self.predict_scaled(z)
    }

    /// Evaluates the model on an input that is already scaled.
    pub fn predict_scaled(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (affine(&self.coef_v, self.intercept_v.as_ref(), z), affine(&self.coef_a, self.intercept_a.as_ref(), z))
    }

    pub fn is_finite(&self) -> bool {
        let mats = self.coef_v.iter().chain(&self.coef_a).flatten();
        let vecs = self.intercept_v.iter().chain(&self.intercept_a).flatten();
        let sc = self.scaler.iter().flat_map(|s| s.mean.iter().chain(&s.scale));
        mats.chain(vecs).chain(sc).all(|x| x.is_finite())
    }

    /// Sum of squared residuals over a training set, both outputs together.
    pub fn residual_sum_of_squares(&self, inputs: &[&[f64]], outputs_v: &[&[f64]], outputs_a: &[&[f64]]) -> f64 {
        inputs
            .iter()
            .zip(outputs_v)
            .zip(outputs_a)
            .map(|((x, v), a)| {
                let (pv, pa) = self.predict(x);
                let rv: f64 = pv.iter().zip(v.iter()).map(|(p, t)| (p - t).powi(2)).sum();
                let ra: f64 = pa.iter().zip(a.iter()).map(|(p, t)| (p - t).powi(2)).sum();
                rv + ra
            })
            .sum()
    }
}
