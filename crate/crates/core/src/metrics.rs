//! Prediction-quality and representativeness metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{FeatureMatrix, GpError, Hyperparameters};
use crate::gp::kernel::{rq_from_sq_dist, weighted_sq_dist};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),

    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("curve covers steps {first}..={last}, cannot integrate from {start}")]
    Coverage { start: usize, first: usize, last: usize },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SmseForm {
    /// Mean of squared residuals over the label variance.
    #[default]
    MeanOfSquares,
    /// Squared mean residual over the label variance.
    SquaredSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum VarianceConvention {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SmseOptions {
    pub form: SmseForm,
    pub variance: VarianceConvention,
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<usize, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < 2 {
        return Err(MetricError::TooShort { need: 2, got: pred.len() });
    }
    Ok(pred.len())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standardized mean squared error with population label variance.
pub fn smse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    smse_with(pred, truth, SmseOptions::default())
}

pub fn smse_with(pred: &[f64], truth: &[f64], opts: SmseOptions) -> Result<f64, MetricError> {
    let n = check_pair(pred, truth)?;
    let mu = mean(truth);
    let ss = truth.iter().map(|y| (y - mu).powi(2)).sum::<f64>();
    let var = match opts.variance {
        VarianceConvention::Population => ss / n as f64,
        VarianceConvention::Sample => ss / (n - 1) as f64,
    };
    if !(var > 0.0) {
        return Err(MetricError::ZeroVariance("truths"));
    }
    let num = match opts.form {
        SmseForm::MeanOfSquares => pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n as f64,
        SmseForm::SquaredSum => (pred.iter().zip(truth).map(|(p, y)| p - y).sum::<f64>() / n as f64).powi(2),
    };
    Ok(num / var)
}

/// Pearson correlation with (n − 1) normalization.
pub fn cc(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    let n = check_pair(pred, truth)?;
    let (mp, mt) = (mean(pred), mean(truth));
    let denom = (n - 1) as f64;
    let cov = pred.iter().zip(truth).map(|(p, t)| (p - mp) * (t - mt)).sum::<f64>() / denom;
    let sp = (pred.iter().map(|p| (p - mp).powi(2)).sum::<f64>() / denom).sqrt();
    let st = (truth.iter().map(|t| (t - mt).powi(2)).sum::<f64>() / denom).sqrt();
    if !(sp > 0.0) {
        return Err(MetricError::ZeroVariance("predictions"));
    }
    if !(st > 0.0) {
        return Err(MetricError::ZeroVariance("truths"));
    }
    Ok((cov / (sp * st)).clamp(-1.0, 1.0))
}

pub const AUC_START: usize = 75;

/// Trapezoidal area under `values` against `steps` from `start` to the last
/// step, interpolating linearly when `start` falls between two steps.
pub fn auc(steps: &[usize], values: &[f64], start: usize) -> Result<f64, MetricError> {
    if steps.len() != values.len() {
        return Err(MetricError::LengthMismatch(steps.len(), values.len()));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::Invalid("steps must be strictly increasing".into()));
    }
    let (Some(&first), Some(&last)) = (steps.first(), steps.last()) else {
        return Err(MetricError::TooShort { need: 2, got: 0 });
    };
    if first > start || last <= start {
        return Err(MetricError::Coverage { start, first, last });
    }
    let mut area = 0.0;
    for i in 1..steps.len() {
        let (s0, s1) = (steps[i - 1] as f64, steps[i] as f64);
        let (v0, v1) = (values[i - 1], values[i]);
        if steps[i] <= start {
            continue;
        }
        let (a, va) = if steps[i - 1] < start {
            let t = (start as f64 - s0) / (s1 - s0);
            (start as f64, v0 + t * (v1 - v0))
        } else {
            (s0, v0)
        };
        area += 0.5 * (va + v1) * (s1 - a);
    }
    Ok(area)
}

/// A metric traced against the number of labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub realization: usize,
    pub steps: Vec<usize>,
    pub values: Vec<f64>,
}

impl LearningCurve {
    pub fn new(realization: usize, steps: Vec<usize>, values: Vec<f64>) -> Result<Self, MetricError> {
        if steps.len() != values.len() {
            return Err(MetricError::LengthMismatch(steps.len(), values.len()));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricError::Invalid("steps must be strictly increasing".into()));
        }
        Ok(Self {
            realization,
            steps,
            values,
        })
    }

    pub fn auc(&self, start: usize) -> Result<f64, MetricError> {
        auc(&self.steps, &self.values, start)
    }

    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.steps.iter().position(|&s| s == step).map(|i| self.values[i])
    }
}

/// max over training points of the kernel correlation K(x*, xᵢ)/σ_f².
pub fn cov_max(x_star: &[f64], train: &FeatureMatrix, theta: &Hyperparameters) -> Result<f64, MetricError> {
    if train.rows() == 0 {
        return Err(MetricError::Invalid("training set is empty".into()));
    }
    theta.check_dim(x_star.len())?;
    theta.check_dim(train.cols())?;
    let inv_sq = theta.inv_sq_lengthscales();
    let best = train
        .iter_rows()
        .map(|r| rq_from_sq_dist(weighted_sq_dist(x_star, r, &inv_sq), 1.0, theta.shape()))
        .fold(0.0, f64::max);
    Ok(best)
}

/// Per-point Cov_max of `targets` after each prefix of `picks`.
///
/// Row `k` of the result holds the values after the first `steps[k]` picks.
pub fn cov_max_trajectory(
    features: &FeatureMatrix,
    picks: &[usize],
    targets: &[usize],
    steps: &[usize],
    theta: &Hyperparameters,
) -> Result<Vec<Vec<f64>>, MetricError> {
    theta.check_dim(features.cols())?;
    if steps.windows(2).any(|w| w[0] >= w[1]) || steps.first() == Some(&0) {
        return Err(MetricError::Invalid("steps must be strictly increasing and ≥ 1".into()));
    }
    if steps.last().is_some_and(|&s| s > picks.len()) {
        return Err(MetricError::Invalid("step beyond the end of the trace".into()));
    }
    let inv_sq = theta.inv_sq_lengthscales();
    let mut best = vec![0.0f64; targets.len()];
    let mut out = Vec::with_capacity(steps.len());
    let mut done = 0;
    for &s in steps {
        for &p in &picks[done..s] {
            let xp = features.row(p);
            for (b, &t) in best.iter_mut().zip(targets) {
                let k = rq_from_sq_dist(weighted_sq_dist(features.row(t), xp, &inv_sq), 1.0, theta.shape());
                *b = b.max(k);
            }
        }
        done = s;
        out.push(best.clone());
    }
    Ok(out)
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Density at `a` of N(μ, σ²) truncated to [lo, hi].
pub fn truncated_normal_pdf(a: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<f64, MetricError> {
    if !(sigma > 0.0) || !(lo < hi) {
        return Err(MetricError::Invalid(format!("need σ > 0 and lo < hi, got σ={sigma}, [{lo}, {hi}]")));
    }
    if a < lo || a > hi {
        return Ok(0.0);
    }
    let z = (hi - mu) / sigma;
    let w = (lo - mu) / sigma;
    let mass = std_normal_cdf(z) - std_normal_cdf(w);
    Ok(std_normal_pdf((a - mu) / sigma) / (sigma * mass))
}

pub const SIMILARITY_SIGMA: f64 = 0.01;
pub const SIMILARITY_GRID: usize = 1001;
pub const POOR_SIMILARITY: f64 = 0.5;

/// Density of the maximum-similarity values on a uniform grid over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPdf {
    pub step: usize,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0])).sum()
}

impl SimilarityPdf {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    pub fn mean(&self) -> f64 {
        let m: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, p)| x * p).collect();
        trapezoid(&self.grid, &m) / self.integral()
    }

    pub fn sd(&self) -> f64 {
        let mu = self.mean();
        let m: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, p)| (x - mu).powi(2) * p).collect();
        (trapezoid(&self.grid, &m) / self.integral()).sqrt()
    }

    /// Probability mass on [0, `threshold`].
    pub fn mass_below(&self, threshold: f64) -> f64 {
        let k = self.grid.iter().take_while(|&&g| g <= threshold + 1e-12).count();
        trapezoid(&self.grid[..k], &self.density[..k])
    }

    pub fn poorly_represented(&self) -> f64 {
        self.mass_below(POOR_SIMILARITY)
    }
}

/// Averages truncated normals centred on each Cov_max value, first over the
/// points of a realization and then over realizations.
pub fn similarity_pdf(
    realizations: &[Vec<f64>],
    step: usize,
    sigma: f64,
    grid_points: usize,
) -> Result<SimilarityPdf, MetricError> {
    if grid_points < 2 {
        return Err(MetricError::TooShort { need: 2, got: grid_points });
    }
    let used: Vec<&Vec<f64>> = realizations.iter().filter(|r| !r.is_empty()).collect();
    if used.is_empty() {
        return Err(MetricError::Invalid("no Cov_max values".into()));
    }
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let mut density = vec![0.0; grid_points];
    for r in &used {
        let w = 1.0 / (r.len() as f64 * used.len() as f64);
        for &c in r.iter() {
            if !(0.0..=1.0).contains(&c) {
                return Err(MetricError::Invalid(format!("Cov_max value {c} outside [0, 1]")));
            }
            for (d, &g) in density.iter_mut().zip(&grid) {
                *d += w * truncated_normal_pdf(g, c, sigma, 0.0, 1.0)?;
            }
        }
    }
    Ok(SimilarityPdf { step, grid, density })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smse_reference_values() {
        assert_eq!(smse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        let t = [0.0, 1.0, 2.0];
        assert!((smse(&[1.0; 3], &t).unwrap() - 1.0).abs() < 1e-15);
        // population variance of {0,1,2} is 2/3
        let v = smse(&[0.0, 1.0, 3.0], &t).unwrap();
        assert!((v - (1.0 / 3.0) / (2.0 / 3.0)).abs() < 1e-15);
        let sample = SmseOptions {
            variance: VarianceConvention::Sample,
            ..Default::default()
        };
        assert!((smse_with(&[0.0, 1.0, 3.0], &t, sample).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let printed = SmseOptions {
            form: SmseForm::SquaredSum,
            ..Default::default()
        };
        assert!((smse_with(&[0.0, 1.0, 3.0], &t, printed).unwrap() - (1.0 / 9.0) / (2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(smse(&[1.0, 1.0], &[2.0, 2.0]), Err(MetricError::ZeroVariance("truths")));
    }

    #[test]
    fn cc_reference_values() {
        let t = [0.3, 1.2, -0.7, 2.2];
        assert!((cc(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((cc(&neg, &t).unwrap() + 1.0).abs() < 1e-15);
        assert!(cc(&[1.0, 1.0, 1.0, 1.0], &t).is_err());
    }

    #[test]
    fn auc_cases() {
        let steps: Vec<usize> = (75..=200).collect();
        assert!((auc(&steps, &vec![0.4; steps.len()], 75).unwrap() - 0.4 * 125.0).abs() < 1e-12);
        let steps: Vec<usize> = (10..=200).step_by(10).collect();
        let vals: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
        let expect = 0.5 * (200.0f64.powi(2) - 75.0f64.powi(2));
        assert!((auc(&steps, &vals, 75).unwrap() - expect).abs() < 1e-9);
        assert!(auc(&[80, 90], &[1.0, 1.0], 75).is_err());
        assert!(auc(&[10, 20], &[1.0, 1.0], 75).is_err());
    }

    #[test]
    fn truncated_normal_cases() {
        let p = truncated_normal_pdf(0.5, 0.5, 0.01, 0.0, 1.0).unwrap();
        assert!((p - 39.894_228_040_143_27).abs() < 1e-9);
        let sym = truncated_normal_pdf(0.5, 0.5, 0.1, 0.4, 0.6).unwrap();
        let expect = std_normal_pdf(0.0) / (0.1 * (2.0 * std_normal_cdf(1.0) - 1.0));
        assert!((sym - expect).abs() < 1e-12);
        assert_eq!(truncated_normal_pdf(1.5, 0.5, 0.1, 0.0, 1.0).unwrap(), 0.0);
        let n = 200_000;
        let h = 1.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| truncated_normal_pdf((i as f64 + 0.5) * h, 0.9, 0.2, 0.0, 1.0).unwrap() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn similarity_pdf_cases() {
        let edge = similarity_pdf(&[vec![1.0]], 1, SIMILARITY_SIGMA, SIMILARITY_GRID).unwrap();
        assert!((edge.integral() - 1.0).abs() < 1e-3);
        assert!(edge.poorly_represented() < 1e-10);
        let bi = similarity_pdf(&[vec![0.2, 0.8]], 1, SIMILARITY_SIGMA, SIMILARITY_GRID).unwrap();
        assert!((bi.integral() - 1.0).abs() < 1e-3);
        assert!((bi.mass_below(0.5) - 0.5).abs() < 1e-6);
        assert!((bi.mean() - 0.5).abs() < 1e-6);
        let mid = bi.density[500];
        assert!(mid < 1e-10 && bi.density[200] > 10.0 && bi.density[800] > 10.0);
    }

    #[test]
    fn cov_max_cases() {
        let train = FeatureMatrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let theta = Hyperparameters::new(vec![1.0, 1.0], 3.0, 1.0, 0.1).unwrap();
        assert_eq!(cov_max(&[1.0, 1.0], &train, &theta).unwrap(), 1.0);
        assert!(cov_max(&[1e7, 1e7], &train, &theta).unwrap() < 1e-6);
        assert!(cov_max(&[0.0, 0.0], &FeatureMatrix::empty(2), &theta).is_err());
    }
}
