//! Marginal pre-processing and the angular-radial coordinate change.
//!
//! Positive data is mapped margin-wise through `φ(x/ν) = ln(exp(x/ν) − 1)`
//! with `ν` the per-margin standard deviation, then centred at the geometric
//! median of the transformed sample. `φ : ℝ₊ → ℝ` is increasing and
//! asymptotically linear, so it leaves the upper tail behaviour alone while
//! stretching the lower tail away from the natural zero bound. The centred
//! data is decomposed into a radius `r = ‖x‖` and a unit angle `w = x/r`.

use serde::{Deserialize, Serialize};

use crate::dataio::ObservationMatrix;
use crate::error::{Result, SparError};
use crate::matrix::Matrix;

/// Arguments above this use the linear asymptote of `φ` and softplus;
/// the truncation error there is below 1e−13.
const LINEAR_BRANCH: f64 = 30.0;

/// `φ(z) = ln(exp(z) − 1)`, overflow-safe.
fn phi(z: f64) -> f64 {
    if z > LINEAR_BRANCH {
        z
    } else {
        z.exp_m1().ln()
    }
}

/// Softplus `ln(1 + exp(z))`, the inverse of `φ`, overflow-safe.
fn softplus(z: f64) -> f64 {
    if z > LINEAR_BRANCH {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Invertible map between raw positive observations and centred coordinates:
/// per-margin scale constants `ν_i` plus the star-centre `m*` on the
/// transformed scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTransform {
    nu: Vec<f64>,
    star_centre: Vec<f64>,
}

impl MarginalTransform {
    pub fn new(nu: Vec<f64>, star_centre: Vec<f64>) -> Result<Self> {
        if nu.len() != star_centre.len() {
            return Err(SparError::ShapeMismatch { expected: nu.len(), got: star_centre.len() });
        }
        if let Some(j) = nu.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SparError::ParamDomain(format!("nu[{j}] must be finite positive, got {}", nu[j])));
        }
        if let Some(j) = star_centre.iter().position(|v| !v.is_finite()) {
            return Err(SparError::ParamDomain(format!("star_centre[{j}] is not finite")));
        }
        Ok(Self { nu, star_centre })
    }

    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn star_centre(&self) -> &[f64] {
        &self.star_centre
    }

    /// Raw positive row → centred coordinates: `φ(x_i/ν_i) − m*_i`.
    pub fn forward(&self, raw_row: &[f64]) -> Result<Vec<f64>> {
        if raw_row.len() != self.dim() {
            return Err(SparError::ShapeMismatch { expected: self.dim(), got: raw_row.len() });
        }
        raw_row
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if !(x.is_finite() && x > 0.0) {
                    return Err(SparError::NonPositiveData { row: 0, column: i, value: x });
                }
                Ok(phi(x / self.nu[i]) - self.star_centre[i])
            })
            .collect()
    }

    /// Centred row → raw scale: `ν_i · softplus(x_i + m*_i)`; defined on all
    /// of ℝ^d and always strictly positive.
    pub fn inverse(&self, x_row: &[f64]) -> Result<Vec<f64>> {
        if x_row.len() != self.dim() {
            return Err(SparError::ShapeMismatch { expected: self.dim(), got: x_row.len() });
        }
        Ok(x_row
            .iter()
            .zip(self.nu.iter().zip(&self.star_centre))
            .map(|(&x, (&nu, &m))| nu * softplus(x + m))
            .collect())
    }

    /// Forward-map every row of a raw matrix.
    pub fn forward_matrix(&self, raw: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(raw.nrows(), raw.ncols());
        for i in 0..raw.nrows() {
            let row = self.forward(raw.row(i)).map_err(|e| match e {
                SparError::NonPositiveData { column, value, .. } => {
                    SparError::NonPositiveData { row: i, column, value }
                }
                other => other,
            })?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Inverse-map every row of a centred matrix.
    pub fn inverse_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.nrows(), x.ncols());
        for i in 0..x.nrows() {
            let row = self.inverse(x.row(i))?;
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }
}

/// Estimate the transform from raw data: `ν_i` is the unbiased (n−1) sample
/// standard deviation of margin `i`, the star-centre the geometric median of
/// the transformed rows.
pub fn fit_transform(raw: &ObservationMatrix) -> Result<MarginalTransform> {
    let values = raw.values();
    let (n, d) = (values.nrows(), values.ncols());
    if n < d + 1 {
        return Err(SparError::InsufficientData { context: "fit_transform", needed: d + 1, got: n });
    }
    let mut nu = Vec::with_capacity(d);
    for j in 0..d {
        let col = values.column(j);
        if let Some(i) = col.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SparError::NonPositiveData { row: i, column: j, value: col[i] });
        }
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var <= 0.0 {
            return Err(SparError::DegenerateMargin { column: j });
        }
        nu.push(var.sqrt());
    }
    let mut transformed = Matrix::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            transformed.row_mut(i)[j] = phi(values.row(i)[j] / nu[j]);
        }
    }
    let median = geometric_median(&transformed, 1e-8, 10_000)?;
    MarginalTransform::new(nu, median.point)
}

/// Geometric median as returned by Weiszfeld iteration.
#[derive(Debug, Clone)]
pub struct GeometricMedian {
    pub point: Vec<f64>,
    /// False when `max_iter` was exhausted before the step norm fell below
    /// tolerance; the point is still the best iterate found.
    pub converged: bool,
    pub iterations: usize,
}

/// Weiszfeld fixed-point iteration for the minimizer of
/// `Σ_t ‖y − x_t‖`, started at the componentwise mean. Iterates that land
/// on a data point get their distance floored at 1e−12.
pub fn geometric_median(points: &Matrix, tol: f64, max_iter: usize) -> Result<GeometricMedian> {
    let (n, d) = (points.nrows(), points.ncols());
    if n == 0 {
        return Err(SparError::InsufficientData { context: "geometric_median", needed: 1, got: 0 });
    }
    let mut y = vec![0.0; d];
    for row in points.rows_iter() {
        for (acc, &v) in y.iter_mut().zip(row) {
            *acc += v / n as f64;
        }
    }
    if n == 1 {
        return Ok(GeometricMedian { point: y, converged: true, iterations: 0 });
    }
    let mut next = vec![0.0; d];
    for it in 1..=max_iter {
        next.iter_mut().for_each(|v| *v = 0.0);
        let mut weight_sum = 0.0;
        for row in points.rows_iter() {
            let dist = y.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let w = 1.0 / dist.max(1e-12);
            weight_sum += w;
            for (acc, &v) in next.iter_mut().zip(row) {
                *acc += w * v;
            }
        }
        next.iter_mut().for_each(|v| *v /= weight_sum);
        let step = y.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        y.copy_from_slice(&next);
        if step < tol {
            return Ok(GeometricMedian { point: y, converged: true, iterations: it });
        }
    }
    log::warn!("geometric_median: no convergence after {max_iter} iterations");
    Ok(GeometricMedian { point: y, converged: false, iterations: max_iter })
}

/// Radii and unit angles of a centred sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarSample {
    r: Vec<f64>,
    w: Matrix,
}

impl PolarSample {
    pub fn new(r: Vec<f64>, w: Matrix) -> Result<Self> {
        if r.len() != w.nrows() {
            return Err(SparError::ShapeMismatch { expected: r.len(), got: w.nrows() });
        }
        for (t, &rv) in r.iter().enumerate() {
            if !(rv.is_finite() && rv > 0.0) {
                return Err(SparError::DegeneratePoint { row: t });
            }
            let norm = w.row(t).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(SparError::InvalidModel(format!("angle row {t} has norm {norm}")));
            }
        }
        Ok(Self { r, w })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn angles(&self) -> &Matrix {
        &self.w
    }
}

/// Decompose centred rows into radii and unit angles. Zero rows have no
/// angle and are rejected.
pub fn to_polar(x: &Matrix) -> Result<PolarSample> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut r = Vec::with_capacity(n);
    let mut w = Matrix::zeros(n, d);
    for t in 0..n {
        let row = x.row(t);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(SparError::DegeneratePoint { row: t });
        }
        r.push(norm);
        for (out, &v) in w.row_mut(t).iter_mut().zip(row) {
            *out = v / norm;
        }
    }
    Ok(PolarSample { r, w })
}

/// Recompose rows `x_t = r_t · w_t`.
pub fn from_polar(p: &PolarSample) -> Matrix {
    let mut x = Matrix::zeros(p.len(), p.dim());
    for t in 0..p.len() {
        for (out, &wv) in x.row_mut(t).iter_mut().zip(p.w.row(t)) {
            *out = p.r[t] * wv;
        }
    }
    x
}
