//! Bayesian logistic regression: datasets and the unnormalized posterior.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{std_normal, AisTarget, EstimatorError};
use crate::rng::{rng_from_seed, McRng};

/// Per-coordinate prior variance of the regression weights.
pub const PRIOR_VARIANCE: f64 = 0.05;

/// Standardized features and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    /// Row-major, `len() = n * dim`.
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Build from raw rows and standardize every feature column.
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, EstimatorError> {
        if rows.len() != labels.len() {
            return Err(EstimatorError::Dataset(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(EstimatorError::Dataset(format!("row {i} has the wrong width")));
        }
        if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(EstimatorError::Dataset(format!("label {y} is not 0 or 1")));
        }
        let mut features: Vec<f64> = rows.into_iter().flatten().collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::Dataset("non-finite feature".into()));
        }
        standardize(&mut features, dim);
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    /// An empty dataset with `dim` features.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Comma-separated with a header row; the last column is the label.
    pub fn from_csv(path: &Path) -> Result<Self, EstimatorError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let width = reader.headers()?.len();
        if width < 2 {
            return Err(EstimatorError::Dataset(
                "need at least one feature column and a label column".into(),
            ));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let line = i + 2;
            let values = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f64>()
                        .map_err(|_| EstimatorError::Dataset(format!("line {line}: cannot parse '{field}'")))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let (label, feats) = values.split_last().expect("width checked");
            if *label != 0.0 && *label != 1.0 {
                return Err(EstimatorError::Dataset(format!(
                    "line {line}: label {label} is not 0 or 1"
                )));
            }
            rows.push(feats.to_vec());
            labels.push(*label);
        }
        Self::new(rows, labels)
    }

    /// Features `N(0, I)`, labels from a logistic model with weights drawn
    /// from the prior.
    pub fn synthetic(n: usize, dim: usize, rng: &mut McRng) -> Self {
        let truth: Vec<f64> = (0..dim)
            .map(|_| PRIOR_VARIANCE.sqrt() * std_normal(rng))
            .collect();
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..dim).map(|_| std_normal(rng)).collect();
            let z: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
            let y = if rng.random::<f64>() < sigmoid(z) {
                1.0
            } else {
                0.0
            };
            rows.push(x);
            labels.push(y);
        }
        Self::new(rows, labels).expect("synthetic data is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }
}

fn standardize(features: &mut [f64], dim: usize) {
    if dim == 0 || features.is_empty() {
        return;
    }
    let n = (features.len() / dim) as f64;
    for j in 0..dim {
        let col = features.iter().skip(j).step_by(dim);
        let mean = col.clone().sum::<f64>() / n;
        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        for v in features.iter_mut().skip(j).step_by(dim) {
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_prior(theta: &[f64]) -> f64 {
    let d = theta.len() as f64;
    let sq: f64 = theta.iter().map(|t| t * t).sum();
    -0.5 * d * (2.0 * std::f64::consts::PI * PRIOR_VARIANCE).ln() - 0.5 * sq / PRIOR_VARIANCE
}

fn log_likelihood(theta: &[f64], data: &Dataset) -> f64 {
    (0..data.len())
        .map(|i| {
            let z: f64 = data.row(i).iter().zip(theta).map(|(x, t)| x * t).sum();
            // y ln s(z) + (1 - y) ln(1 - s(z)) = -softplus(-z) or -softplus(z).
            if data.label(i) == 1.0 {
                -softplus(-z)
            } else {
                -softplus(z)
            }
        })
        .sum()
}

/// Log prior density plus log likelihood.
pub fn logistic_posterior_logdensity(theta: &[f64], data: &Dataset) -> f64 {
    log_prior(theta) + log_likelihood(theta, data)
}

/// Gradient of [`logistic_posterior_logdensity`] in `theta`.
pub fn logistic_posterior_gradient(theta: &[f64], data: &Dataset) -> Vec<f64> {
    let mut grad: Vec<f64> = theta.iter().map(|t| -t / PRIOR_VARIANCE).collect();
    for i in 0..data.len() {
        let x = data.row(i);
        let z: f64 = x.iter().zip(theta).map(|(a, b)| a * b).sum();
        let resid = data.label(i) - sigmoid(z);
        for (g, xj) in grad.iter_mut().zip(x) {
            *g += resid * xj;
        }
    }
    grad
}

/// Where a logistic-regression target gets its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv { path: PathBuf },
    Synthetic { n: usize, dim: usize, seed: u64 },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, EstimatorError> {
        match self {
            DatasetSource::Csv { path } => Dataset::from_csv(path),
            DatasetSource::Synthetic { n, dim, seed } => {
                Ok(Dataset::synthetic(*n, *dim, &mut rng_from_seed(*seed)))
            }
        }
    }
}

/// Posterior of a logistic regression under the Gaussian prior; the
/// normalizer is the marginal likelihood.
#[derive(Debug, Clone)]
pub struct LogisticTarget {
    data: Arc<Dataset>,
}

impl LogisticTarget {
    pub fn new(data: Arc<Dataset>) -> Self {
        Self { data }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl AisTarget for LogisticTarget {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn log_prior(&self, x: &[f64]) -> f64 {
        log_prior(x)
    }

    fn log_likelihood(&self, x: &[f64]) -> f64 {
        log_likelihood(x, &self.data)
    }

    fn sample_prior(&self, rng: &mut McRng, out: &mut [f64]) {
        let sd = PRIOR_VARIANCE.sqrt();
        for v in out {
            *v = sd * std_normal(rng);
        }
    }

    fn log_normalizer(&self) -> Option<f64> {
        if self.data.is_empty() {
            Some(0.0)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn empty_dataset_is_prior_only() {
        let data = Dataset::empty(3);
        let theta = [0.1, -0.2, 0.3];
        assert_abs_diff_eq!(
            logistic_posterior_logdensity(&theta, &data),
            log_prior(&theta),
            epsilon = 1e-15
        );
    }

    #[test]
    fn single_example_at_origin() {
        // One column survives standardization as zeros; the label does not matter at theta = 0.
        let data = Dataset::new(vec![vec![2.0]], vec![1.0]).unwrap();
        let expected = log_prior(&[0.0]) + 0.5f64.ln();
        assert_abs_diff_eq!(
            logistic_posterior_logdensity(&[0.0], &data),
            expected,
            epsilon = 1e-15
        );
        let prior0 = -0.5 * (2.0 * std::f64::consts::PI * 0.05f64).ln();
        assert_abs_diff_eq!(log_prior(&[0.0]), prior0, epsilon = 1e-15);
    }

    #[test]
    fn extreme_margins_stay_finite() {
        let data = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        let v = logistic_posterior_logdensity(&[1e4], &data);
        assert!(v.is_finite());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rng_from_seed(17);
        let data = Dataset::synthetic(60, 8, &mut rng);
        let h = 1e-5;
        for _ in 0..10 {
            let theta: Vec<f64> = (0..8).map(|_| 0.5 * std_normal(&mut rng)).collect();
            let grad = logistic_posterior_gradient(&theta, &data);
            let mut max_rel: f64 = 0.0;
            for j in 0..8 {
                let mut up = theta.clone();
                let mut down = theta.clone();
                up[j] += h;
                down[j] -= h;
                let fd = (logistic_posterior_logdensity(&up, &data)
                    - logistic_posterior_logdensity(&down, &data))
                    / (2.0 * h);
                let rel = (fd - grad[j]).abs() / grad[j].abs().max(1.0);
                max_rel = max_rel.max(rel);
            }
            assert!(max_rel < 1e-5, "relative error {max_rel}");
        }
    }

    #[test]
    fn csv_is_read_and_standardized() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,b,label").unwrap();
        writeln!(file, "1,10,0").unwrap();
        writeln!(file, "2,10,1").unwrap();
        writeln!(file, "3,10,1").unwrap();
        let data = Dataset::from_csv(file.path()).unwrap();
        assert_eq!((data.len(), data.dim()), (3, 2));
        let col0: Vec<f64> = (0..3).map(|i| data.row(i)[0]).collect();
        let mean: f64 = col0.iter().sum::<f64>() / 3.0;
        let var: f64 = col0.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
        assert!((0..3).all(|i| data.row(i)[1] == 0.0));
        assert_eq!(data.label(1), 1.0);
    }

    #[test]
    fn csv_rejects_bad_labels_and_fields() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,label\n1,2").unwrap();
        assert!(matches!(
            Dataset::from_csv(file.path()),
            Err(EstimatorError::Dataset(m)) if m.contains("line 2")
        ));
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,label\nx,1").unwrap();
        assert!(Dataset::from_csv(file.path()).is_err());
        assert!(Dataset::from_csv(Path::new("/nonexistent/data.csv")).is_err());
    }
}
