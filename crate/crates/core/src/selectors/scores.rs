use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use super::neighborhood::{neighborhood, Truncation};
use super::SelectError;
use crate::gp::{GpError, PoolCovariance};

/// A selected pool index with the score it won with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub index: usize,
    pub score: f64,
}

/// Pools whose unobserved part is at most this large score greedy MI by
/// conditioning each candidate on its complement directly; larger pools use
/// the diagonal of the precision matrix.
pub(crate) const MI_EXACT_LIMIT: usize = 64;

fn observed_mask(n: usize, a: &[usize]) -> Result<(Vec<bool>, Vec<usize>), SelectError> {
    let mut mask = vec![false; n];
    for &i in a {
        if i >= n {
            return Err(SelectError::UnknownPoint(i));
        }
        mask[i] = true;
    }
    let sorted = (0..n).filter(|&i| mask[i]).collect();
    Ok((mask, sorted))
}

/// Lowest-index argmax over `(index, score)` pairs given in ascending index order.
fn argmax<I>(scores: I) -> Result<Option<Pick>, SelectError>
where
    I: IntoIterator<Item = Result<(usize, f64), SelectError>>,
{
    let mut best: Option<Pick> = None;
    for item in scores {
        let (index, score) = item?;
        if score.is_nan() {
            return Err(SelectError::NanScore(index));
        }
        if best.is_none_or(|b| score > b.score) {
            best = Some(Pick { index, score });
        }
    }
    Ok(best)
}

fn log_ratio(x: usize, v_num: f64, v_den: f64) -> Result<f64, SelectError> {
    if !(v_den > 0.0) {
        return Err(SelectError::DegeneratePool(x));
    }
    Ok(0.5 * (v_num / v_den).ln())
}

/// Conditional variances of every point in `targets` given the sorted set `a`.
fn batch_conditional(cov: &PoolCovariance, a: &[usize], targets: &[usize]) -> Result<Vec<f64>, GpError> {
    if a.is_empty() {
        return Ok(targets.iter().map(|&x| cov.autocovariance(x)).collect());
    }
    let factor = cov.factor_set(a)?;
    targets
        .iter()
        .map(|&x| cov.conditional_variance_with(x, a, &factor))
        .collect()
}

/// H(x|𝒜) − H(x|𝒜̄), where 𝒜̄ = 𝒱∖(𝒜 ∪ x).
///
/// With `trunc`, the second term conditions only on the truncated
/// neighborhood of `x` within 𝒜̄; the first term is always exact.
pub fn mi_score(
    x: usize,
    a: &[usize],
    cov: &PoolCovariance,
    trunc: Option<Truncation>,
) -> Result<f64, SelectError> {
    let n = cov.len();
    if x >= n {
        return Err(SelectError::UnknownPoint(x));
    }
    let (mask, a_sorted) = observed_mask(n, a)?;
    if mask[x] {
        return Err(SelectError::AlreadyObserved(x));
    }
    let v_a = cov.conditional_variance(x, &a_sorted)?;
    let complement = (0..n).filter(|&j| !mask[j] && j != x);
    let cond = match trunc {
        Some(t) => neighborhood(cov, x, complement, t).sorted_members(),
        None => complement.collect(),
    };
    let v_abar = cov.conditional_variance(x, &cond)?;
    log_ratio(x, v_a, v_abar)
}

/// Active Learning MacKay: the unobserved point of largest posterior variance.
pub fn select_alm(cov: &PoolCovariance, a: &[usize]) -> Result<Pick, SelectError> {
    let n = cov.len();
    let (mask, a_sorted) = observed_mask(n, a)?;
    let targets: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    let vars = batch_conditional(cov, &a_sorted, &targets)?;
    argmax(targets.into_iter().zip(vars).map(Ok))?.ok_or(SelectError::PoolExhausted)
}

/// Standard greedy mutual information over the untruncated complement.
pub fn select_mi(cov: &PoolCovariance, a: &[usize]) -> Result<Pick, SelectError> {
    let n = cov.len();
    let (mask, a_sorted) = observed_mask(n, a)?;
    let targets: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    if targets.is_empty() {
        return Err(SelectError::PoolExhausted);
    }
    let v_a = batch_conditional(cov, &a_sorted, &targets)?;
    let v_abar = if targets.len() <= MI_EXACT_LIMIT {
        complement_variances_exact(cov, &targets)?
    } else {
        complement_variances_precision(cov, &targets)?
    };
    let picks = targets
        .iter()
        .zip(v_a.iter().zip(&v_abar))
        .map(|(&x, (&va, &vb))| log_ratio(x, va, vb).map(|s| (x, s)));
    argmax(picks)?.ok_or(SelectError::PoolExhausted)
}

/// σ²_{x|U∖x} for every x in the sorted unobserved set U, one factor each.
fn complement_variances_exact(cov: &PoolCovariance, u: &[usize]) -> Result<Vec<f64>, SelectError> {
    u.iter()
        .map(|&x| {
            let rest: Vec<usize> = u.iter().copied().filter(|&j| j != x).collect();
            Ok(cov.conditional_variance(x, &rest)?)
        })
        .collect()
}

/// σ²_{x|U∖x} = 1 / [(K_UU + σ_n² I)⁻¹]_xx − σ_n² from a single factorization.
fn complement_variances_precision(cov: &PoolCovariance, u: &[usize]) -> Result<Vec<f64>, SelectError> {
    let m = u.len();
    let noise = cov.noise_variance();
    let s = DMatrix::from_fn(m, m, |r, c| cov.get(u[r], u[c]) + if r == c { noise } else { 0.0 });
    let chol = Cholesky::new(s).ok_or(GpError::Degenerate {
        size: m,
        max_jitter: 0.0,
    })?;
    let p = chol.inverse();
    Ok((0..m)
        .map(|r| {
            let prior = cov.autocovariance(u[r]);
            (1.0 / p[(r, r)] - noise).clamp(0.0, prior)
        })
        .collect())
}

/// Truncated conditional variance of `x` given the neighbors selected by `keep`.
fn truncated_variance<F>(cov: &PoolCovariance, x: usize, keep: F, trunc: Truncation) -> Result<f64, GpError>
where
    F: Fn(usize) -> bool,
{
    let nb = neighborhood(cov, x, (0..cov.len()).filter(|&j| keep(j)), trunc);
    cov.conditional_variance(x, &nb.sorted_members())
}

/// Greedy MI with local kernels over a fixed covariance.
///
/// δ starts at H(x) − H̃(x|𝒱∖x). After each pick x*, only the unobserved
/// members of N(x*) get δ refreshed to H̃(x|𝒜) − H̃(x|𝒜̄); every other δ
/// keeps its stale value. No labels are consulted.
pub fn select_mi_lk(cov: &PoolCovariance, h: usize, epsilon: f64, d: usize) -> Result<Vec<Pick>, SelectError> {
    let n = cov.len();
    if h > n {
        return Err(SelectError::InvalidConfig(format!(
            "cannot pick {h} points from a pool of {n}"
        )));
    }
    let trunc = Truncation::new(epsilon, d);
    let mut in_a = vec![false; n];
    let mut delta = Vec::with_capacity(n);
    for x in 0..n {
        let v_abar = truncated_variance(cov, x, |j| j != x, trunc)?;
        delta.push(log_ratio(x, cov.autocovariance(x), v_abar)?);
    }

    let mut picks = Vec::with_capacity(h);
    for _ in 0..h {
        let best = argmax((0..n).filter(|&i| !in_a[i]).map(|i| Ok((i, delta[i]))))?
            .ok_or(SelectError::PoolExhausted)?;
        in_a[best.index] = true;
        picks.push(best);

        let update = neighborhood(cov, best.index, (0..n).filter(|&j| !in_a[j]), trunc);
        for &x in &update.members {
            let v_a = truncated_variance(cov, x, |j| in_a[j], trunc)?;
            let v_abar = truncated_variance(cov, x, |j| !in_a[j] && j != x, trunc)?;
            delta[x] = log_ratio(x, v_a, v_abar)?;
        }
    }
    Ok(picks)
}

/// One MI-ALK step under the current covariance.
///
/// λ = ε·K(x,x). The first entropy term conditions on all of 𝒜; the second
/// on the λ-thresholded, d-capped neighborhood of x within 𝒜̄.
pub fn select_mi_alk_step(
    cov: &PoolCovariance,
    a: &[usize],
    epsilon_frac: f64,
    d: usize,
) -> Result<Pick, SelectError> {
    if !(0.0..=1.0).contains(&epsilon_frac) {
        return Err(SelectError::InvalidConfig(format!(
            "MI-ALK epsilon is a fraction in [0, 1], got {epsilon_frac}"
        )));
    }
    if epsilon_frac >= 1.0 {
        log::warn!("MI-ALK with epsilon {epsilon_frac}: neighborhoods keep only exact duplicates");
    }
    let n = cov.len();
    let (mask, a_sorted) = observed_mask(n, a)?;
    let targets: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    let v_a = batch_conditional(cov, &a_sorted, &targets)?;
    let picks = targets.iter().zip(v_a).map(|(&x, va)| {
        let trunc = Truncation::new(epsilon_frac * cov.autocovariance(x), d);
        let v_abar = truncated_variance(cov, x, |j| !mask[j] && j != x, trunc)?;
        log_ratio(x, va, v_abar).map(|s| (x, s))
    });
    argmax(picks)?.ok_or(SelectError::PoolExhausted)
}
