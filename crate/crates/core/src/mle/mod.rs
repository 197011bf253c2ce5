//! Marginal likelihood of the RQ-ARD GP and its maximization.
//!
//! [`log_marginal_likelihood`] and [`lml_gradient`] take labels as given.
//! [`fit`] standardizes labels first, so fitted variances are in
//! standardized units, matching [`crate::GpModel`].
//!
//! Optimization runs in log space over `[ln l_i, ln σ_f, ln σ_n, ln α]`
//! with a Polak-Ribière conjugate gradient method.

pub mod cg;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{cholesky_with_jitter, kernel_matrix, FeatureMatrix, GpError, Hyperparameters, LabelScaler};
use cg::{minimize, CgOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Error)]
pub enum MleError {
    #[error(transparent)]
    Gp(#[from] GpError),

    #[error("all {attempts} optimizer starts failed numerically; last start {last_theta:?}")]
    AllRestartsFailed {
        attempts: usize,
        last_theta: Box<Hyperparameters>,
    },
}

/// Gradient of the log marginal likelihood with respect to the natural
/// hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LmlGradient {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub shape: f64,
}

impl LmlGradient {
    /// Chain rule onto `[ln l_i, ln σ_f, ln σ_n, ln α]`.
    pub fn to_log_space(&self, theta: &Hyperparameters) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .lengthscales
            .iter()
            .zip(theta.lengthscales())
            .map(|(g, l)| g * l)
            .collect();
        v.push(2.0 * theta.signal_variance() * self.signal_variance);
        v.push(2.0 * theta.noise_variance() * self.noise_variance);
        v.push(theta.shape() * self.shape);
        v
    }
}

fn check_training(x: &FeatureMatrix, y: &[f64], theta: &Hyperparameters) -> Result<(), GpError> {
    if x.rows() != y.len() {
        return Err(GpError::LengthMismatch { x: x.rows(), y: y.len() });
    }
    if x.rows() == 0 {
        return Err(GpError::Empty("training set"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("training labels"));
    }
    theta.check_dim(x.cols())
}

/// log p(y | X, θ) = −½ yᵀΣ⁻¹y − ½ log|Σ| − (n/2) log 2π.
pub fn log_marginal_likelihood(
    x: &FeatureMatrix,
    y: &[f64],
    theta: &Hyperparameters,
) -> Result<f64, GpError> {
    check_training(x, y, theta)?;
    let sigma = kernel_matrix(x, theta, true)?.values;
    let chol = cholesky_with_jitter(&sigma, theta.signal_variance())?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.factor.solve(&yv);
    Ok(lml_from_parts(&chol.factor.l_dirty().diagonal(), &yv, &alpha))
}

fn lml_from_parts(l_diag: &DVector<f64>, y: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let log_det_half: f64 = l_diag.iter().map(|d| d.ln()).sum();
    -0.5 * y.dot(alpha) - log_det_half - 0.5 * n * LN_2PI
}

/// Log marginal likelihood and its gradient over the natural hyperparameters.
pub fn lml_with_gradient(
    x: &FeatureMatrix,
    y: &[f64],
    theta: &Hyperparameters,
) -> Result<(f64, LmlGradient), GpError> {
    check_training(x, y, theta)?;
    let n = x.rows();
    let m = x.cols();
    let sigma = kernel_matrix(x, theta, true)?.values;
    let chol = cholesky_with_jitter(&sigma, theta.signal_variance())?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.factor.solve(&yv);
    let lml = lml_from_parts(&chol.factor.l_dirty().diagonal(), &yv, &alpha);

    // d lml / dθ = ½ tr((ααᵀ − Σ⁻¹) ∂Σ/∂θ)
    let inv: DMatrix<f64> = chol.factor.inverse();
    let sf2 = theta.signal_variance();
    let shape = theta.shape();
    let ls = theta.lengthscales();
    let inv_sq: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l)).collect();
    let inv_cube: Vec<f64> = ls.iter().map(|l| 1.0 / (l * l * l)).collect();

    let mut g_l = vec![0.0; m];
    let mut g_sf2 = 0.0;
    let mut g_sn2 = 0.0;
    let mut g_alpha = 0.0;
    let mut diff = vec![0.0; m];
    for i in 0..n {
        let xi = x.row(i);
        for j in 0..=i {
            let w_ij = alpha[i] * alpha[j] - inv[(i, j)];
            let w = if i == j { w_ij } else { 2.0 * w_ij };
            let xj = x.row(j);
            let mut r = 0.0;
            for d in 0..m {
                let dd = xi[d] - xj[d];
                diff[d] = dd * dd;
                r += diff[d] * inv_sq[d];
            }
            let log_q = (r / (2.0 * shape)).ln_1p();
            let k = sf2 * (-shape * log_q).exp();
            let q = 1.0 + r / (2.0 * shape);
            let k_over_q = k / q;
            if i != j {
                for d in 0..m {
                    // ∂K/∂l_d = σ_f² Q^(−α−1) Δ_d² / l_d³
                    g_l[d] += w * k_over_q * diff[d] * inv_cube[d];
                }
                // ∂K/∂α = K (1 − 1/Q − ln Q)
                g_alpha += w * k * (1.0 - 1.0 / q - log_q);
            } else {
                g_sn2 += w;
            }
            g_sf2 += w * k / sf2;
        }
    }
    Ok((
        lml,
        LmlGradient {
            lengthscales: g_l.into_iter().map(|v| 0.5 * v).collect(),
            signal_variance: 0.5 * g_sf2,
            noise_variance: 0.5 * g_sn2,
            shape: 0.5 * g_alpha,
        },
    ))
}

pub fn lml_gradient(
    x: &FeatureMatrix,
    y: &[f64],
    theta: &Hyperparameters,
) -> Result<LmlGradient, GpError> {
    lml_with_gradient(x, y, theta).map(|(_, g)| g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub max_iters: usize,
    /// Random starts in addition to the supplied initial point.
    pub restarts: usize,
    pub seed: u64,
    pub grad_tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restarts: 0,
            seed: 0,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub theta: Hyperparameters,
    /// Negative log marginal likelihood of the standardized labels.
    pub nlml: f64,
    pub iterations: usize,
    pub converged: bool,
    pub restarts_used: usize,
    /// Which start produced `theta` (0 = the supplied initial point).
    pub best_start: usize,
    /// Final NLML of every start, `None` where the start failed.
    pub start_nlml: Vec<Option<f64>>,
}

/// Maximum likelihood hyperparameters for `(x, y)`.
///
/// Start 0 is `theta_init`; starts `1..=restarts` are random draws from
/// `opts.seed`. The best start by (nlml, start index) is returned.
pub fn fit(
    x: &FeatureMatrix,
    y: &[f64],
    theta_init: &Hyperparameters,
    opts: &MleOptions,
) -> Result<MleResult, MleError> {
    if x.rows() != y.len() {
        return Err(GpError::LengthMismatch { x: x.rows(), y: y.len() }.into());
    }
    let ys = LabelScaler::fit(y).transform(y);
    if x.rows() < 2 {
        let nlml = if x.rows() == 0 {
            0.0
        } else {
            -log_marginal_likelihood(x, &ys, theta_init)?
        };
        return Ok(MleResult {
            theta: theta_init.clone(),
            nlml,
            iterations: 0,
            converged: false,
            restarts_used: 0,
            best_start: 0,
            start_nlml: vec![Some(nlml)],
        });
    }
    theta_init.check_dim(x.cols())?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Hyperparameters> = std::iter::once(theta_init.clone())
        .chain((0..opts.restarts).map(|_| Hyperparameters::random(x.cols(), &mut rng)))
        .collect();
    let cg_opts = CgOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        ..CgOptions::default()
    };

    let objective = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
        let theta = Hyperparameters::from_log_params(p).ok()?;
        let (lml, grad) = lml_with_gradient(x, &ys, &theta).ok()?;
        let g = grad.to_log_space(&theta);
        Some((-lml, g.into_iter().map(|v| -v).collect()))
    };

    let mut best: Option<(f64, usize, Hyperparameters, usize, bool)> = None;
    let mut start_nlml = Vec::with_capacity(starts.len());
    for (s, start) in starts.iter().enumerate() {
        let outcome = minimize(objective, &start.to_log_params(), &cg_opts);
        let Some(out) = outcome else {
            start_nlml.push(None);
            continue;
        };
        let theta = match Hyperparameters::from_log_params(&out.x) {
            Ok(t) => t,
            Err(_) => {
                start_nlml.push(None);
                continue;
            }
        };
        start_nlml.push(Some(out.f));
        let better = match &best {
            None => true,
            Some((f, ..)) => out.f < *f,
        };
        if better {
            best = Some((out.f, s, theta, out.iterations, out.converged));
        }
    }
    match best {
        Some((nlml, best_start, theta, iterations, converged)) => Ok(MleResult {
            theta,
            nlml,
            iterations,
            converged,
            restarts_used: opts.restarts,
            best_start,
            start_nlml,
        }),
        None => Err(MleError::AllRestartsFailed {
            attempts: starts.len(),
            last_theta: Box::new(starts.last().cloned().unwrap_or_else(|| theta_init.clone())),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (FeatureMatrix, Vec<f64>, Hyperparameters) {
        let x = FeatureMatrix::new(n, m, (0..n * m).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta = Hyperparameters::new(
            (0..m).map(|_| rng.random_range(0.3..3.0)).collect(),
            rng.random_range(0.3..3.0),
            rng.random_range(0.3..5.0),
            rng.random_range(0.01..0.5),
        )
        .unwrap();
        (x, y, theta)
    }

    fn fd_log_gradient(x: &FeatureMatrix, y: &[f64], theta: &Hyperparameters) -> Vec<f64> {
        let p = theta.to_log_params();
        let h = 1e-5;
        (0..p.len())
            .map(|i| {
                let mut a = p.clone();
                let mut b = p.clone();
                a[i] += h;
                b[i] -= h;
                let fa = log_marginal_likelihood(x, y, &Hyperparameters::from_log_params(&a).unwrap()).unwrap();
                let fb = log_marginal_likelihood(x, y, &Hyperparameters::from_log_params(&b).unwrap()).unwrap();
                (fa - fb) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn single_point_zero_label() {
        let x = FeatureMatrix::from_rows(&[[0.0]]).unwrap();
        let t = Hyperparameters::new(vec![1.0], 0.5, 1.0, 0.5).unwrap();
        let lml = log_marginal_likelihood(&x, &[0.0], &t).unwrap();
        assert!((lml + 0.5 * LN_2PI).abs() < 1e-14);
        assert!((lml + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn two_point_explicit_inverse() {
        let x = FeatureMatrix::from_rows(&[[0.0, 1.0], [0.7, -0.2]]).unwrap();
        let y = [0.4, -1.1];
        let t = Hyperparameters::new(vec![0.9, 1.6], 1.3, 0.6, 0.2).unwrap();
        let k = crate::gp::rq_kernel(x.row(0), x.row(1), &t).unwrap();
        let (a, b, d) = (1.3 + 0.2, k, 1.3 + 0.2);
        let det = a * d - b * b;
        let quad = (d * y[0] * y[0] - 2.0 * b * y[0] * y[1] + a * y[1] * y[1]) / det;
        let expected = -0.5 * quad - 0.5 * det.ln() - LN_2PI;
        let got = log_marginal_likelihood(&x, &y, &t).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn invariant_to_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y, t) = random_problem(&mut rng, 8, 3);
        let perm = [3, 7, 1, 0, 5, 2, 6, 4];
        let xp = x.select(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = log_marginal_likelihood(&x, &y, &t).unwrap();
        let b = log_marginal_likelihood(&xp, &yp, &t).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (x, y, t) = random_problem(&mut rng, 10, 3);
            let g = lml_gradient(&x, &y, &t).unwrap().to_log_space(&t);
            let fd = fd_log_gradient(&x, &y, &t);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn printed_shape_derivative_fails_finite_differences() {
        // σ_f²(−ln Q + Q⁻¹) Q^−α disagrees with the true ∂K/∂α, which is
        // K (1 − Q⁻¹ − ln Q); this pins the discrepancy.
        let t = Hyperparameters::new(vec![1.0], 1.0, 0.8, 1e-3).unwrap();
        let (p, q) = ([0.0], [1.3]);
        let k = |alpha: f64| {
            crate::gp::rq_kernel(&p, &q, &Hyperparameters::new(vec![1.0], 1.0, alpha, 1e-3).unwrap()).unwrap()
        };
        let h = 1e-6;
        let fd = (k(0.8 + h) - k(0.8 - h)) / (2.0 * h);
        let r = 1.3f64 * 1.3;
        let big_q = 1.0 + r / (2.0 * 0.8);
        let kv = k(0.8);
        let ours = kv * (1.0 - 1.0 / big_q - big_q.ln());
        let printed = t.signal_variance() * (-big_q.ln() + 1.0 / big_q) * big_q.powf(-0.8);
        assert!((ours - fd).abs() < 1e-8);
        assert!((printed - fd).abs() > 1e-2);
    }

    #[test]
    fn constant_dimension_has_zero_lengthscale_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y, t) = random_problem(&mut rng, 9, 3);
        let mut rows: Vec<Vec<f64>> = x.iter_rows().map(|r| r.to_vec()).collect();
        for r in rows.iter_mut() {
            r[1] = 0.25;
        }
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let g = lml_gradient(&x, &y, &t).unwrap();
        assert_eq!(g.lengthscales[1], 0.0);
    }

    #[test]
    fn single_point_noise_gradient() {
        let x = FeatureMatrix::from_rows(&[[0.3, 0.1]]).unwrap();
        let y = [0.8];
        let t = Hyperparameters::new(vec![1.0, 1.0], 1.4, 1.0, 0.3).unwrap();
        let s = 1.4 + 0.3;
        // d/ds of (−½ y²/s − ½ ln s − ½ ln 2π)
        let expected = 0.5 * y[0] * y[0] / (s * s) - 0.5 / s;
        let g = lml_gradient(&x, &y, &t).unwrap();
        assert!((g.noise_variance - expected).abs() < 1e-12);
    }

    #[test]
    fn fit_never_increases_nlml_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (x, y, t) = random_problem(&mut rng, 15, 2);
        let ys = LabelScaler::fit(&y).transform(&y);
        let start = -log_marginal_likelihood(&x, &ys, &t).unwrap();
        let opts = MleOptions { restarts: 2, seed: 9, ..Default::default() };
        let a = fit(&x, &y, &t, &opts).unwrap();
        let b = fit(&x, &y, &t, &opts).unwrap();
        assert!(a.nlml <= start + 1e-9);
        assert_eq!(a, b);
        assert_eq!(a.start_nlml.len(), 3);
    }

    #[test]
    fn fit_with_one_point_returns_initial() {
        let x = FeatureMatrix::from_rows(&[[0.3]]).unwrap();
        let t = Hyperparameters::ones(1);
        let r = fit(&x, &[2.0], &t, &MleOptions::default()).unwrap();
        assert_eq!(r.theta, t);
        assert!(!r.converged);
    }

    #[test]
    fn stationary_start_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (x, y, t) = random_problem(&mut rng, 20, 1);
        let opts = MleOptions { max_iters: 500, grad_tol: 1e-10, ..Default::default() };
        let first = fit(&x, &y, &t, &opts).unwrap();
        let again = fit(&x, &y, &first.theta, &opts).unwrap();
        let (a, b) = (first.theta.to_log_params(), again.theta.to_log_params());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-3, "{a:?} vs {b:?}");
        }
        assert!(again.nlml <= first.nlml + 1e-9);
    }
}
