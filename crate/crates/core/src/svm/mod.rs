//! Soft-margin binary SVM with an RBF kernel, trained on the dual problem.

mod cv;
mod smo;

pub use cv::{cross_validate, cross_validate_features, stratified_folds, CvReport, FrameClassifier};
pub use smo::{dual_objective, solve_dual, DualSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
    /// Stop once the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { c: 256.0, gamma: 9.54e-7, tolerance: 1e-4, max_iter: 10_000_000 }
    }
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> Self {
        SvmParams { c, gamma, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.tolerance > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tolerance and max_iter must be > 0".into()));
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `exp(-gamma * |x - x'|^2)`.
pub fn rbf_kernel(x: &[f64], x2: &[f64], gamma: f64) -> Result<f64> {
    check_dims(x, x2)?;
    Ok((-gamma * sq_dist(x, x2)).exp())
}

/// Dense symmetric kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub n: usize,
    pub values: Vec<f64>,
}

impl Gram {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

pub fn gram_matrix(x: &[Vec<f64>], gamma: f64) -> Result<Gram> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    for row in x {
        check_dims(&x[0], row)?;
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in 0..i {
            let k = (-gamma * sq_dist(&x[i], &x[j])).exp();
            values[i * n + j] = k;
            values[j * n + i] = k;
        }
    }
    Ok(Gram { n, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector.
    pub alphas_signed: Vec<f64>,
    pub bias: f64,
    pub params: SvmParams,
    /// Names of the `-1` and `+1` classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_map: Option<(String, String)>,
    pub iterations: usize,
}

impl SvmModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    pub fn with_labels(mut self, negative: impl Into<String>, positive: impl Into<String>) -> Self {
        self.label_map = Some((negative.into(), positive.into()));
        self
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if let Some(sv) = self.support_vectors.first() {
            check_dims(sv, x)?;
        }
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas_signed)
            .map(|(sv, a)| a * (-self.params.gamma * sq_dist(sv, x)).exp())
            .sum();
        Ok(s + self.bias)
    }

    /// Class name for a `+1`/`-1` label, when the model carries a label map.
    pub fn label_name(&self, label: i8) -> Option<&str> {
        self.label_map.as_ref().map(|(n, p)| if label > 0 { p.as_str() } else { n.as_str() })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<SvmModel> {
        let m: SvmModel = serde_json::from_str(text)?;
        if m.support_vectors.len() != m.alphas_signed.len() {
            return Err(Error::Schema("support vector and alpha counts differ".into()));
        }
        if let Some(d) = m.dim() {
            if let Some(bad) = m.support_vectors.iter().find(|v| v.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
            }
        }
        Ok(m)
    }
}

/// Decision value and label; a zero decision value maps to `+1`.
pub fn predict(model: &SvmModel, x: &[f64]) -> Result<(f64, i8)> {
    let d = model.decision_value(x)?;
    Ok((d, if d >= 0.0 { 1 } else { -1 }))
}

/// Trains on feature rows `x` with labels in {-1, +1}.
pub fn train(x: &[Vec<f64>], y: &[i8], params: &SvmParams) -> Result<SvmModel> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1 && v != -1) {
        return Err(Error::InvalidInput(format!("labels must be -1 or +1, got {bad}")));
    }
    if x.len() < 2 || y.iter().all(|&v| v == y[0]) {
        return Err(Error::SingleClass(x.len()));
    }
    let gram = gram_matrix(x, params.gamma)?;
    let sol = solve_dual(&gram, y, params)?;
    let mut support_vectors = Vec::new();
    let mut alphas_signed = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            alphas_signed.push(a * y[i] as f64);
        }
    }
    Ok(SvmModel {
        support_vectors,
        alphas_signed,
        bias: sol.bias,
        params: *params,
        label_map: None,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests;
