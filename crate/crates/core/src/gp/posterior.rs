use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::kernel::{cross_kernel, kernel_matrix, rq_from_sq_dist, weighted_sq_dist};
use super::linalg::{cholesky_with_jitter, DenseCholesky, JitteredCholesky};
use super::{FeatureMatrix, GpError, Hyperparameters};

/// Variances in `[-NEG_CLAMP * K(x,x), 0)` are rounding noise and clamp to 0.
pub(crate) const NEG_CLAMP: f64 = 1e-10;

pub(crate) fn clamp_variance(v: f64, prior: f64, index: usize) -> Result<f64, GpError> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEG_CLAMP * prior.max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(GpError::NegativeVariance { index, value: v })
    }
}

/// Differential entropy of a Gaussian with the given variance.
pub fn entropy(variance: f64) -> Result<f64, GpError> {
    if variance > 0.0 && variance.is_finite() {
        Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
    } else {
        Err(GpError::NonPositiveVariance(variance))
    }
}

/// Shift and scale taking labels to zero mean, unit (population) variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub mean: f64,
    pub sd: f64,
}

impl LabelScaler {
    pub const IDENTITY: Self = Self { mean: 0.0, sd: 1.0 };

    /// Empty input gives the identity; a single label or constant labels keep sd = 1.
    pub fn fit(y: &[f64]) -> Self {
        if y.is_empty() {
            return Self::IDENTITY;
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            mean,
            sd: if sd > 0.0 && sd.is_finite() { sd } else { 1.0 },
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.mean) / self.sd
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }

    pub fn transform(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| self.forward(*v)).collect()
    }
}

/// Predictive mean and latent variance at a set of query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl Posterior {
    pub fn sd(&self) -> Vec<f64> {
        self.variance.iter().map(|v| v.sqrt()).collect()
    }
}

/// A GP conditioned on a training set, with labels standardized internally.
pub struct GpModel {
    theta: Hyperparameters,
    x_train: FeatureMatrix,
    factor: Option<JitteredCholesky>,
    alpha: DVector<f64>,
    scaler: LabelScaler,
}

impl GpModel {
    pub fn fit(
        x_train: &FeatureMatrix,
        y_train: &[f64],
        theta: &Hyperparameters,
    ) -> Result<Self, GpError> {
        if x_train.rows() != y_train.len() {
            return Err(GpError::LengthMismatch {
                x: x_train.rows(),
                y: y_train.len(),
            });
        }
        if y_train.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("training labels"));
        }
        if x_train.rows() > 0 {
            theta.check_dim(x_train.cols())?;
        }
        let scaler = LabelScaler::fit(y_train);
        if x_train.rows() == 0 {
            return Ok(Self {
                theta: theta.clone(),
                x_train: x_train.clone(),
                factor: None,
                alpha: DVector::zeros(0),
                scaler,
            });
        }
        let sigma = kernel_matrix(x_train, theta, true)?.values;
        let factor = cholesky_with_jitter(&sigma, theta.signal_variance())?;
        let y = DVector::from_vec(scaler.transform(y_train));
        let alpha = factor.factor.solve(&y);
        Ok(Self {
            theta: theta.clone(),
            x_train: x_train.clone(),
            factor: Some(factor),
            alpha,
            scaler,
        })
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn scaler(&self) -> LabelScaler {
        self.scaler
    }

    pub fn n_train(&self) -> usize {
        self.x_train.rows()
    }

    /// Jitter that had to be added to the training covariance diagonal.
    pub fn jitter(&self) -> f64 {
        self.factor.as_ref().map_or(0.0, |f| f.jitter)
    }

    /// Posterior mean and latent variance, both in label units.
    pub fn predict(&self, x_query: &FeatureMatrix) -> Result<Posterior, GpError> {
        self.theta.check_dim(x_query.cols())?;
        let sf2 = self.theta.signal_variance();
        let s2 = self.scaler.sd * self.scaler.sd;
        let Some(factor) = &self.factor else {
            return Ok(Posterior {
                mean: vec![self.scaler.inverse(0.0); x_query.rows()],
                variance: vec![sf2 * s2; x_query.rows()],
            });
        };
        let kstar = cross_kernel(&self.x_train, x_query, &self.theta)?;
        let mean_std = kstar.tr_mul(&self.alpha);
        let l = factor.factor.l();
        let v = l
            .solve_lower_triangular(&kstar)
            .ok_or(GpError::Degenerate {
                size: self.x_train.rows(),
                max_jitter: factor.jitter,
            })?;
        let mut variance = Vec::with_capacity(x_query.rows());
        for j in 0..x_query.rows() {
            let explained = v.column(j).norm_squared();
            variance.push(clamp_variance(sf2 - explained, sf2, j)? * s2);
        }
        Ok(Posterior {
            mean: mean_std.iter().map(|m| self.scaler.inverse(*m)).collect(),
            variance,
        })
    }
}

/// Posterior at `x_query` given training data, zero prior mean on
/// standardized labels.
pub fn posterior(
    x_train: &FeatureMatrix,
    y_train: &[f64],
    x_query: &FeatureMatrix,
    theta: &Hyperparameters,
) -> Result<Posterior, GpError> {
    GpModel::fit(x_train, y_train, theta)?.predict(x_query)
}

/// Pools up to this many points keep Σ_VV as a dense matrix; larger pools
/// evaluate kernel entries on demand.
pub const DENSE_POOL_LIMIT: usize = 4096;

#[derive(Debug, Clone)]
enum Storage {
    Dense(Vec<f64>),
    Lazy {
        features: FeatureMatrix,
        inv_sq: Vec<f64>,
        shape: f64,
    },
}

/// Noise-free prior covariance Σ_VV over a whole pool, plus the noise
/// variance added whenever a set of points is conditioned on.
#[derive(Debug, Clone)]
pub struct PoolCovariance {
    n: usize,
    storage: Storage,
    signal_variance: f64,
    noise_variance: f64,
}

impl PoolCovariance {
    pub fn new(features: &FeatureMatrix, theta: &Hyperparameters) -> Result<Self, GpError> {
        if features.rows() == 0 {
            return Err(GpError::Empty("pool"));
        }
        theta.check_dim(features.cols())?;
        let n = features.rows();
        let inv_sq = theta.inv_sq_lengthscales();
        let (sf2, shape) = (theta.signal_variance(), theta.shape());
        let storage = if n <= DENSE_POOL_LIMIT {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = sf2;
                let xi = features.row(i);
                for j in 0..i {
                    let v = rq_from_sq_dist(weighted_sq_dist(xi, features.row(j), &inv_sq), sf2, shape);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            Storage::Dense(k)
        } else {
            Storage::Lazy {
                features: features.clone(),
                inv_sq,
                shape,
            }
        };
        Ok(Self {
            n,
            storage,
            signal_variance: sf2,
            noise_variance: theta.noise_variance(),
        })
    }

    /// Wraps an explicit noise-free covariance.
    pub fn from_dense(k: DMatrix<f64>, noise_variance: f64) -> Result<Self, GpError> {
        let n = k.nrows();
        if n == 0 || k.ncols() != n {
            return Err(GpError::DimensionMismatch {
                expected: n,
                got: k.ncols(),
            });
        }
        let signal_variance = (0..n).map(|i| k[(i, i)]).fold(0.0, f64::max);
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                flat[i * n + j] = k[(i, j)];
            }
        }
        Ok(Self {
            n,
            storage: Storage::Dense(flat),
            signal_variance,
            noise_variance,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(k) => k[i * self.n + j],
            Storage::Lazy {
                features,
                inv_sq,
                shape,
            } => {
                if i == j {
                    self.signal_variance
                } else {
                    rq_from_sq_dist(
                        weighted_sq_dist(features.row(i), features.row(j), inv_sq),
                        self.signal_variance,
                        *shape,
                    )
                }
            }
        }
    }

    /// Row `i` of Σ_VV, borrowed when dense and computed into `buf` otherwise.
    pub fn row<'a>(&'a self, i: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
        match &self.storage {
            Storage::Dense(k) => &k[i * self.n..(i + 1) * self.n],
            Storage::Lazy { .. } => {
                buf.clear();
                buf.extend((0..self.n).map(|j| self.get(i, j)));
                buf
            }
        }
    }

    pub fn autocovariance(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Factor of Σ_SS = K(S,S) + σ_n² I for an index-sorted set.
    pub(crate) fn factor_set(&self, set: &[usize]) -> Result<DenseCholesky, GpError> {
        debug_assert!(set.windows(2).all(|w| w[0] < w[1]));
        let m = set.len();
        let mut a = vec![0.0; m * m];
        for (r, &i) in set.iter().enumerate() {
            for (c, &j) in set.iter().enumerate().take(r + 1) {
                a[r * m + c] = self.get(i, j);
            }
            a[r * m + r] += self.noise_variance;
        }
        DenseCholesky::factor(&a, m, self.signal_variance)
    }

    /// σ²_{x|S} reusing a factor of Σ_SS built by [`Self::factor_set`].
    pub(crate) fn conditional_variance_with(
        &self,
        x: usize,
        set: &[usize],
        factor: &DenseCholesky,
    ) -> Result<f64, GpError> {
        let prior = self.autocovariance(x);
        if set.is_empty() {
            return Ok(prior);
        }
        let kx: Vec<f64> = set.iter().map(|&j| self.get(x, j)).collect();
        clamp_variance(prior - factor.quad_form_inv(&kx), prior, x)
    }

    /// σ²_{x|S}; `set` is sorted internally, so the result does not depend
    /// on the order members are given in.
    pub fn conditional_variance(&self, x: usize, set: &[usize]) -> Result<f64, GpError> {
        if set.is_empty() {
            return Ok(self.autocovariance(x));
        }
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let factor = self.factor_set(&sorted)?;
        self.conditional_variance_with(x, &sorted, &factor)
    }
}

/// σ²_{x|𝒜} = K(x,x) − Σ_x𝒜 Σ_𝒜𝒜⁻¹ Σ_𝒜x over a precomputed pool covariance.
pub fn conditional_variance(
    x_idx: usize,
    a_indices: &[usize],
    sigma_full: &PoolCovariance,
) -> Result<f64, GpError> {
    if x_idx >= sigma_full.len() {
        return Err(GpError::DimensionMismatch {
            expected: sigma_full.len(),
            got: x_idx,
        });
    }
    sigma_full.conditional_variance(x_idx, a_indices)
}
