//! Linear readout training and the squared-correlation performance metric.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{QrcError, Result};

/// Singular values below this fraction of the largest one are discarded.
pub const SVD_RELATIVE_CUTOFF: f64 = 1e-10;
/// Series with variance below this are treated as constant.
pub const CONSTANT_VARIANCE: f64 = 1e-24;

pub const BIAS_LABEL: &str = "bias";

/// `L × (O+1)` record of measured features, the last column being a constant
/// bias of one.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    cols: usize,
    data: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Empty matrix for the given feature labels; the bias column is implied.
    pub fn new(feature_labels: Vec<String>) -> Self {
        let mut labels = feature_labels;
        labels.push(BIAS_LABEL.to_string());
        Self {
            cols: labels.len(),
            data: Vec::new(),
            labels,
        }
    }

    /// Builds a design matrix from row-major features (bias excluded).
    pub fn from_features(feature_labels: Vec<String>, features: &[f64]) -> Result<Self> {
        let width = feature_labels.len();
        if width == 0 && !features.is_empty() || width > 0 && !features.len().is_multiple_of(width) {
            return Err(QrcError::Shape(format!(
                "{} feature values do not fill rows of width {width}",
                features.len()
            )));
        }
        let mut m = Self::new(feature_labels);
        if width > 0 {
            for row in features.chunks(width) {
                m.push_row(row)?;
            }
        }
        Ok(m)
    }

    /// Appends one row of features followed by the bias.
    pub fn push_row(&mut self, features: &[f64]) -> Result<()> {
        if features.len() + 1 != self.cols {
            return Err(QrcError::Shape(format!(
                "row has {} features, expected {}",
                features.len(),
                self.cols - 1
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(QrcError::Validation(format!(
                "non-finite feature in row {}",
                self.rows()
            )));
        }
        self.data.extend_from_slice(features);
        self.data.push(1.0);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of observables, `O`.
    pub fn n_features(&self) -> usize {
        self.cols - 1
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(QrcError::Shape(format!(
                "row range {start}..{end} outside 0..{}",
                self.rows()
            )));
        }
        Ok(Self {
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
            labels: self.labels.clone(),
        })
    }

    /// Multiplies a feature column by `factor`. The bias column is fixed.
    pub fn scale_feature(&mut self, j: usize, factor: f64) -> Result<()> {
        if j >= self.n_features() {
            return Err(QrcError::Validation(format!("feature column {j} out of range")));
        }
        let cols = self.cols;
        for row in self.data.chunks_mut(cols) {
            row[j] *= factor;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (k, row) in self.data.chunks(self.cols).enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(QrcError::Validation(format!("non-finite entry in row {k}")));
            }
            if row[self.cols - 1] != 1.0 {
                return Err(QrcError::Validation(format!("bias entry of row {k} is not 1")));
            }
        }
        Ok(())
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.rows(), self.cols, |i, j| self.data[i * self.cols + j])
    }

    /// `X w`.
    pub fn predict(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.cols {
            return Err(QrcError::Shape(format!(
                "{} weights for {} columns",
                weights.len(),
                self.cols
            )));
        }
        Ok(self
            .data
            .chunks(self.cols)
            .map(|row| row.iter().zip(weights).map(|(x, w)| x * w).sum())
            .collect())
    }
}

/// Thin SVD of a design matrix, reused for many targets.
///
/// Keeps the left singular vectors whose singular value exceeds
/// `1e-10 · σ_max`; solving a target is then `w = V Σ⁺ Uᵀ y`.
#[derive(Clone, Debug)]
pub struct LeastSquares {
    u: Mat<f64>,
    sigma: Vec<f64>,
    v: Mat<f64>,
}

impl LeastSquares {
    pub fn new(x: &DesignMatrix) -> Result<Self> {
        let rows = x.rows();
        let cols = x.cols();
        if rows == 0 {
            return Err(QrcError::Validation("design matrix has no rows".into()));
        }
        let svd = x
            .to_faer()
            .thin_svd()
            .map_err(|e| QrcError::Numeric(format!("SVD did not converge: {e:?}")))?;
        let s = svd.S().column_vector();
        let k = rows.min(cols);
        let smax = if k > 0 { s[0] } else { 0.0 };
        let rank = (0..k)
            .take_while(|&i| smax > 0.0 && s[i] > SVD_RELATIVE_CUTOFF * smax)
            .count();
        let u = svd.U().subcols(0, rank).to_owned();
        let v = svd.V().subcols(0, rank).to_owned();
        let sigma = (0..rank).map(|i| s[i]).collect();
        Ok(Self { u, sigma, v })
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    /// `Uᵀ y` over the retained singular directions.
    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        (0..self.rank())
            .map(|k| {
                self.u
                    .col_as_slice(k)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Squared norm of the best ridge-free fit, `‖U Uᵀ y‖²`.
    pub fn explained_energy(&self, y: &[f64]) -> f64 {
        self.project(y).iter().map(|c| c * c).sum()
    }

    pub fn solve(&self, y: &[f64], ridge: f64) -> Vec<f64> {
        let coeffs = self.project(y);
        let mut w = vec![0.0; self.v.nrows()];
        for (k, c) in coeffs.iter().enumerate() {
            let s = self.sigma[k];
            let gain = if ridge > 0.0 { s / (s * s + ridge) } else { 1.0 / s };
            for (wi, vi) in w.iter_mut().zip(self.v.col_as_slice(k)) {
                *wi += vi * gain * c;
            }
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSolution {
    pub weights: Vec<f64>,
    pub train_mse: f64,
    pub effective_rank: usize,
    /// Set when the design matrix was identically zero and no fit was possible.
    pub degenerate_design: bool,
}

/// Minimizes `‖X w − y‖² (+ ridge ‖w‖²)` through a rank-truncated SVD.
pub fn fit_readout(x: &DesignMatrix, target: &[f64], ridge: f64) -> Result<RegressionSolution> {
    if target.len() != x.rows() {
        return Err(QrcError::Shape(format!(
            "target has {} samples, design has {} rows",
            target.len(),
            x.rows()
        )));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(QrcError::Validation(format!("ridge must be >= 0, got {ridge}")));
    }
    if target.iter().any(|y| !y.is_finite()) {
        return Err(QrcError::Validation("target has non-finite values".into()));
    }
    let ls = LeastSquares::new(x)?;
    let (weights, degenerate_design) = if ls.rank() == 0 {
        log::warn!("design matrix is identically zero; returning zero weights");
        (vec![0.0; x.cols()], true)
    } else {
        (ls.solve(target, ridge), false)
    };
    let pred = x.predict(&weights)?;
    let train_mse = mse(&pred, target);
    Ok(RegressionSolution {
        weights,
        train_mse,
        effective_rank: ls.rank(),
        degenerate_design,
    })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// `cov²(y, ȳ) / (σ²(y) σ²(ȳ))`, zero when either series is constant.
pub fn capacity_c(y: &[f64], target: &[f64]) -> Result<f64> {
    if y.len() != target.len() {
        return Err(QrcError::Validation(format!(
            "series lengths differ: {} vs {}",
            y.len(),
            target.len()
        )));
    }
    if y.len() < 2 {
        return Err(QrcError::Validation("need at least two samples".into()));
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vt) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(target) {
        let (da, db) = (a - my, b - mt);
        cov += da * db;
        vy += da * da;
        vt += db * db;
    }
    let (cov, vy, vt) = (cov / n, vy / n, vt / n);
    if vy < CONSTANT_VARIANCE || vt < CONSTANT_VARIANCE {
        return Ok(0.0);
    }
    Ok((cov * cov / (vy * vt)).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub washout: usize,
    pub train: usize,
    pub test: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            washout: 1000,
            train: 2000,
            test: 2000,
        }
    }
}

impl SplitSpec {
    pub fn total(&self) -> usize {
        self.washout + self.train + self.test
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.total() != len {
            return Err(QrcError::Validation(format!(
                "split {}+{}+{} does not cover {len} samples",
                self.washout, self.train, self.test
            )));
        }
        if self.train == 0 || self.test < 2 {
            return Err(QrcError::Validation(
                "split needs a non-empty training window and at least two test samples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainEval {
    pub weights: Vec<f64>,
    pub train_mse: f64,
    pub effective_rank: usize,
    pub c_train: f64,
    pub c_test: f64,
    pub split: SplitSpec,
    pub ridge: f64,
}

/// Fits on the training window and scores `C` on the held-out test window.
/// Washout rows are discarded.
pub fn train_eval(x: &DesignMatrix, target: &[f64], split: SplitSpec, ridge: f64) -> Result<TrainEval> {
    split.validate(x.rows())?;
    if target.len() != x.rows() {
        return Err(QrcError::Shape(format!(
            "target has {} samples, design has {} rows",
            target.len(),
            x.rows()
        )));
    }
    let train_end = split.washout + split.train;
    let train_x = x.slice_rows(split.washout, train_end)?;
    let test_x = x.slice_rows(train_end, split.total())?;
    let train_y = &target[split.washout..train_end];
    let test_y = &target[train_end..];
    let sol = fit_readout(&train_x, train_y, ridge)?;
    let c_train = if split.train >= 2 {
        capacity_c(&train_x.predict(&sol.weights)?, train_y)?
    } else {
        0.0
    };
    let c_test = capacity_c(&test_x.predict(&sol.weights)?, test_y)?;
    Ok(TrainEval {
        weights: sol.weights,
        train_mse: sol.train_mse,
        effective_rank: sol.effective_rank,
        c_train,
        c_test,
        split,
        ridge,
    })
}
