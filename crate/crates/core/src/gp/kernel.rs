use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, GpError};

/// Hyperparameters of the rational quadratic ARD covariance.
///
/// `signal_variance` and `noise_variance` are variances (not standard
/// deviations). `shape` is the RQ mixture parameter; large values approach
/// the squared exponential kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    lengthscales: Vec<f64>,
    signal_variance: f64,
    shape: f64,
    noise_variance: f64,
}

fn check_positive(name: &str, v: f64) -> Result<(), GpError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(GpError::InvalidHyperparameters(format!(
            "{name} must be finite and strictly positive, got {v}"
        )))
    }
}

impl Hyperparameters {
    pub fn new(
        lengthscales: Vec<f64>,
        signal_variance: f64,
        shape: f64,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if lengthscales.is_empty() {
            return Err(GpError::InvalidHyperparameters(
                "at least one lengthscale is required".into(),
            ));
        }
        for (i, l) in lengthscales.iter().enumerate() {
            check_positive(&format!("lengthscale[{i}]"), *l)?;
        }
        check_positive("signal_variance", signal_variance)?;
        check_positive("shape", shape)?;
        check_positive("noise_variance", noise_variance)?;
        Ok(Self {
            lengthscales,
            signal_variance,
            shape,
            noise_variance,
        })
    }

    /// Every hyperparameter set to one.
    pub fn ones(dim: usize) -> Self {
        Self {
            lengthscales: vec![1.0; dim],
            signal_variance: 1.0,
            shape: 1.0,
            noise_variance: 1.0,
        }
    }

    /// Random draw: each log-parameter (log l_i, log σ_f, log σ_n, log α)
    /// uniform on [ln 0.1, ln 10].
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let lo = 0.1f64.ln();
        let hi = 10f64.ln();
        let log_params: Vec<f64> = (0..dim + 3).map(|_| rng.random_range(lo..hi)).collect();
        Self::from_log_params(&log_params).expect("finite random draw")
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Result<Self, GpError> {
        check_positive("noise_variance", noise_variance)?;
        self.noise_variance = noise_variance;
        Ok(self)
    }

    pub fn with_signal_variance(mut self, signal_variance: f64) -> Result<Self, GpError> {
        check_positive("signal_variance", signal_variance)?;
        self.signal_variance = signal_variance;
        Ok(self)
    }

    pub fn with_lengthscales(mut self, lengthscales: Vec<f64>) -> Result<Self, GpError> {
        Self::new(
            lengthscales,
            self.signal_variance,
            self.shape,
            self.noise_variance,
        )
        .map(|h| {
            self.lengthscales = h.lengthscales;
            self
        })
    }

    /// Number of free parameters in the log parameterization.
    pub fn n_params(&self) -> usize {
        self.dim() + 3
    }

    /// `[ln l_1, …, ln l_m, ln σ_f, ln σ_n, ln α]`
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(0.5 * self.signal_variance.ln());
        v.push(0.5 * self.noise_variance.ln());
        v.push(self.shape.ln());
        v
    }

    pub fn from_log_params(p: &[f64]) -> Result<Self, GpError> {
        if p.len() < 4 {
            return Err(GpError::InvalidHyperparameters(format!(
                "log parameter vector too short: {}",
                p.len()
            )));
        }
        let m = p.len() - 3;
        Self::new(
            p[..m].iter().map(|v| v.exp()).collect(),
            (2.0 * p[m]).exp(),
            p[m + 2].exp(),
            (2.0 * p[m + 1]).exp(),
        )
    }

    pub(crate) fn check_dim(&self, got: usize) -> Result<(), GpError> {
        if got == self.dim() {
            Ok(())
        } else {
            Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got,
            })
        }
    }

    /// Inverse squared lengthscales, the diagonal of M.
    pub(crate) fn inv_sq_lengthscales(&self) -> Vec<f64> {
        self.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
    }
}

/// Squared distance weighted by M = diag(l)^-2.
#[inline]
pub(crate) fn weighted_sq_dist(p: &[f64], q: &[f64], inv_sq: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .zip(inv_sq)
        .map(|((a, b), w)| {
            let d = a - b;
            d * d * w
        })
        .sum()
}

/// σ_f² (1 + r / 2α)^-α for a precomputed weighted squared distance r.
#[inline]
pub(crate) fn rq_from_sq_dist(r: f64, signal_variance: f64, shape: f64) -> f64 {
    signal_variance * (-shape * (r / (2.0 * shape)).ln_1p()).exp()
}

/// Rational quadratic ARD covariance between two input vectors.
pub fn rq_kernel(p: &[f64], q: &[f64], theta: &Hyperparameters) -> Result<f64, GpError> {
    theta.check_dim(p.len())?;
    theta.check_dim(q.len())?;
    let inv_sq = theta.inv_sq_lengthscales();
    Ok(rq_from_sq_dist(
        weighted_sq_dist(p, q, &inv_sq),
        theta.signal_variance,
        theta.shape,
    ))
}

/// Symmetric covariance matrix over a set of pool points.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    /// Pool index of each row/column.
    pub indices: Vec<usize>,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.indices.len()
    }
}

/// Kernel matrix over every row of `x`; rows map to indices `0..n`.
pub fn kernel_matrix(
    x: &FeatureMatrix,
    theta: &Hyperparameters,
    add_noise: bool,
) -> Result<KernelMatrix, GpError> {
    if x.rows() == 0 {
        return Err(GpError::Empty("kernel_matrix input"));
    }
    theta.check_dim(x.cols())?;
    let n = x.rows();
    let inv_sq = theta.inv_sq_lengthscales();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        let xi = x.row(i);
        values[(i, i)] = theta.signal_variance;
        for j in 0..i {
            let k = rq_from_sq_dist(
                weighted_sq_dist(xi, x.row(j), &inv_sq),
                theta.signal_variance,
                theta.shape,
            );
            values[(i, j)] = k;
            values[(j, i)] = k;
        }
        if add_noise {
            values[(i, i)] += theta.noise_variance;
        }
    }
    Ok(KernelMatrix {
        values,
        indices: (0..n).collect(),
    })
}

/// Noise-free cross covariance, rows from `a`, columns from `b`.
pub fn cross_kernel(
    a: &FeatureMatrix,
    b: &FeatureMatrix,
    theta: &Hyperparameters,
) -> Result<DMatrix<f64>, GpError> {
    theta.check_dim(a.cols())?;
    theta.check_dim(b.cols())?;
    let inv_sq = theta.inv_sq_lengthscales();
    Ok(DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
        rq_from_sq_dist(
            weighted_sq_dist(a.row(i), b.row(j), &inv_sq),
            theta.signal_variance,
            theta.shape,
        )
    }))
}
