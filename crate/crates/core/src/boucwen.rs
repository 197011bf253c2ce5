//! Bouc-Wen hysteretic single-degree-of-freedom benchmark.
//!
//! The oscillator is m ü + c u̇ + k u + z = F(t) with the hysteretic state
//! ż = s1 u̇ − (s2 z|z|^(s4−1) |u̇| + s3 |z|^s4 u̇), started at rest and
//! driven by F(t) = 2 cos t over t ∈ [0, 10]. The label of a parameter draw
//! is the maximum signed displacement max_t u(t).

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Pool};
use crate::gp::FeatureMatrix;
use crate::rng;

pub const FEATURE_COLUMNS: [&str; 8] = ["s1", "s2", "s3", "s4", "s1n", "s2n", "g1", "g2"];
pub const LABEL_COLUMN: &str = "label";

pub const MASS: f64 = 1.0;
pub const DAMPING: f64 = 0.2;
pub const STIFFNESS: f64 = 1.0;
pub const T_END: f64 = 10.0;
pub const DT: f64 = 0.005;
/// Variance of the Gaussian noise on the noisy feature copies and the label.
pub const NOISE_VARIANCE: f64 = 0.0025;
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum BoucWenError {
    #[error("no admissible (s2, s3) pair after {0} draws")]
    Rejection(usize),

    #[error("state became non-finite at t = {time} for parameters {params:?}")]
    NonFinite { params: BoucWenParams, time: f64 },

    #[error("inadmissible parameters {0:?}")]
    Inadmissible(BoucWenParams),

    #[error("invalid step size {0}")]
    Step(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoucWenParams {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub m: f64,
    pub c: f64,
    pub k: f64,
}

impl BoucWenParams {
    pub fn new(s1: f64, s2: f64, s3: f64, s4: f64) -> Self {
        Self {
            s1,
            s2,
            s3,
            s4,
            m: MASS,
            c: DAMPING,
            k: STIFFNESS,
        }
    }

    /// s1 > 0, |s3| ≤ s2, s4 ≥ 1.
    pub fn is_admissible(&self) -> bool {
        self.s1 > 0.0 && self.s3.abs() <= self.s2 && self.s4 >= 1.0
    }

    fn rhs(&self, t: f64, y: [f64; 3], force: &dyn Fn(f64) -> f64) -> [f64; 3] {
        let [u, v, z] = y;
        let az = z.abs();
        let zdot = self.s1 * v - (self.s2 * z * az.powf(self.s4 - 1.0) * v.abs() + self.s3 * az.powf(self.s4) * v);
        let a = (force(t) - self.c * v - self.k * u - z) / self.m;
        [v, a, zdot]
    }
}

/// s1 ~ U(0.5, 2.5), s4 ~ U(1, 2); (s2, s3) ~ N(0, 1)² redrawn jointly
/// until |s3| ≤ s2.
pub fn sample_params<R: Rng + ?Sized>(rng: &mut R) -> Result<BoucWenParams, BoucWenError> {
    sample_params_counted(rng).map(|(p, _)| p)
}

/// As [`sample_params`], also returning how many (s2, s3) pairs were drawn.
pub fn sample_params_counted<R: Rng + ?Sized>(rng: &mut R) -> Result<(BoucWenParams, usize), BoucWenError> {
    let s1 = rng.random_range(0.5..2.5);
    let s4 = rng.random_range(1.0..2.0);
    for attempt in 1..=MAX_REJECTIONS {
        let s2: f64 = StandardNormal.sample(rng);
        let s3: f64 = StandardNormal.sample(rng);
        if s3.abs() <= s2 {
            return Ok((BoucWenParams::new(s1, s2, s3, s4), attempt));
        }
    }
    Err(BoucWenError::Rejection(MAX_REJECTIONS))
}

/// Maximum of the cubic Hermite interpolant on one step.
fn hermite_max(h: f64, u0: f64, v0: f64, u1: f64, v1: f64) -> f64 {
    // u(s) = a s³ + b s² + v0 s + u0 on s ∈ [0, h]
    let a = (2.0 * (u0 - u1) + h * (v0 + v1)) / (h * h * h);
    let b = (3.0 * (u1 - u0) - h * (2.0 * v0 + v1)) / (h * h);
    let eval = |s: f64| ((a * s + b) * s + v0) * s + u0;
    let mut best = u0.max(u1);
    let (qa, qb, qc) = (3.0 * a, 2.0 * b, v0);
    let mut roots = [f64::NAN; 2];
    if qa.abs() < 1e-300 {
        if qb.abs() > 0.0 {
            roots[0] = -qc / qb;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            roots[0] = q / qa;
            if q != 0.0 {
                roots[1] = qc / q;
            }
        }
    }
    for s in roots {
        if s > 0.0 && s < h {
            best = best.max(eval(s));
        }
    }
    best
}

/// Integrates the oscillator with classical RK4 and returns max_t u(t).
pub fn simulate_with(
    params: &BoucWenParams,
    force: &dyn Fn(f64) -> f64,
    t_end: f64,
    dt: f64,
) -> Result<f64, BoucWenError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(BoucWenError::Step(dt));
    }
    let steps = (t_end / dt).round() as usize;
    let mut y = [0.0f64; 3];
    let mut best = 0.0f64;
    for i in 0..steps {
        let t = i as f64 * dt;
        // The right-hand side is non-smooth where v or z changes sign, so
        // the step is split at those crossings.
        let (mut tc, mut yc, mut left) = (t, y, dt);
        for _ in 0..4 {
            let trial = rk4_step(params, force, tc, yc, left);
            let split = crossing(params, force, tc, yc, trial, left);
            let h = split.unwrap_or(left);
            let end = if split.is_some() { rk4_step(params, force, tc, yc, h) } else { trial };
            if end.iter().any(|v| !v.is_finite()) {
                return Err(BoucWenError::NonFinite {
                    params: *params,
                    time: tc + h,
                });
            }
            best = best.max(hermite_max(h, yc[0], yc[1], end[0], end[1]));
            tc += h;
            yc = end;
            left -= h;
            if split.is_none() {
                break;
            }
        }
        if left > 0.0 {
            let end = rk4_step(params, force, tc, yc, left);
            best = best.max(hermite_max(left, yc[0], yc[1], end[0], end[1]));
            yc = end;
        }
        y = yc;
    }
    Ok(best)
}

/// Earliest sign change of v or z strictly inside (0, h), if any.
fn crossing(params: &BoucWenParams, force: &dyn Fn(f64) -> f64, t: f64, y0: [f64; 3], y1: [f64; 3], h: f64) -> Option<f64> {
    let min_h = 1e-9 * h;
    let mut out: Option<f64> = None;
    let d0 = params.rhs(t, y0, force);
    let d1 = params.rhs(t + h, y1, force);
    for j in [1, 2] {
        if y0[j] * y1[j] < 0.0 {
            if let Some(s) = hermite_root(h, y0[j], d0[j], y1[j], d1[j]) {
                if s > min_h && s < h - min_h {
                    out = Some(out.map_or(s, |o| o.min(s)));
                }
            }
        }
    }
    out
}

/// Root in (0, h) of the cubic Hermite interpolant, by bisection.
fn hermite_root(h: f64, f0: f64, g0: f64, f1: f64, g1: f64) -> Option<f64> {
    let a = (2.0 * (f0 - f1) + h * (g0 + g1)) / (h * h * h);
    let b = (3.0 * (f1 - f0) - h * (2.0 * g0 + g1)) / (h * h);
    let eval = |s: f64| ((a * s + b) * s + g0) * s + f0;
    let (mut lo, mut hi) = (0.0, h);
    if f0.signum() == f1.signum() {
        return None;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if eval(mid).signum() == f0.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn rk4_step(params: &BoucWenParams, force: &dyn Fn(f64) -> f64, t: f64, y: [f64; 3], h: f64) -> [f64; 3] {
    let add = |y: [f64; 3], k: [f64; 3], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2]];
    let k1 = params.rhs(t, y, force);
    let k2 = params.rhs(t + 0.5 * h, add(y, k1, 0.5 * h), force);
    let k3 = params.rhs(t + 0.5 * h, add(y, k2, 0.5 * h), force);
    let k4 = params.rhs(t + h, add(y, k3, h), force);
    let mut out = [0.0; 3];
    for j in 0..3 {
        out[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    out
}

/// max_t u(t) under F(t) = 2 cos t on [0, 10] with the default step.
pub fn simulate(params: &BoucWenParams) -> Result<f64, BoucWenError> {
    if !params.is_admissible() {
        return Err(BoucWenError::Inadmissible(*params));
    }
    simulate_with(params, &|t: f64| 2.0 * t.cos(), T_END, DT)
}

/// The SDOF table: eight feature columns and a noisy max-displacement label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdofDataset {
    pub features: FeatureMatrix,
    pub labels: Vec<f64>,
    pub clean_labels: Vec<f64>,
    pub params: Vec<BoucWenParams>,
    pub seed: u64,
}

fn build_row(seed: u64, row: usize) -> Result<([f64; 8], f64, f64, BoucWenParams), BoucWenError> {
    let mut rng = rng::stream(rng::derive(seed, row as u64));
    let p = sample_params(&mut rng)?;
    let clean = simulate(&p)?;
    let sd = NOISE_VARIANCE.sqrt();
    let mut noise = || -> f64 { StandardNormal.sample(&mut rng) };
    let s1n = p.s1 + sd * noise();
    let s2n = p.s2 + sd * noise();
    let g1 = noise();
    let g2 = noise();
    let label = clean + sd * noise();
    Ok(([p.s1, p.s2, p.s3, p.s4, s1n, s2n, g1, g2], label, clean, p))
}

/// Generates `n` rows; row `i` draws from its own stream derived from
/// `(seed, i)`.
pub fn build_dataset(n: usize, seed: u64) -> Result<SdofDataset, BoucWenError> {
    let mut data = Vec::with_capacity(n * 8);
    let mut labels = Vec::with_capacity(n);
    let mut clean_labels = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for row in 0..n {
        let (x, y, c, p) = build_row(seed, row)?;
        data.extend_from_slice(&x);
        labels.push(y);
        clean_labels.push(c);
        params.push(p);
    }
    Ok(SdofDataset {
        features: FeatureMatrix::new(n, 8, data).expect("row width is fixed"),
        labels,
        clean_labels,
        params,
        seed,
    })
}

impl SdofDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// CSV with 17 significant digits per float.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{}", FEATURE_COLUMNS.join(","), LABEL_COLUMN)?;
        for (i, y) in self.labels.iter().enumerate() {
            for v in self.features.row(i) {
                write!(w, "{v:.16e},")?;
            }
            writeln!(w, "{y:.16e}")?;
        }
        Ok(())
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            feature_names: FEATURE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            features: self.features.clone(),
            label_names: vec![LABEL_COLUMN.to_string()],
            labels: vec![self.labels.clone()],
            ids: (0..self.len()).map(|i| i.to_string()).collect(),
        }
    }

    pub fn to_pool(&self) -> Pool {
        self.to_dataset().pool(0).expect("generated data is a valid pool")
    }
}

/// Closed-form response of m ü + c u̇ + k_eff u = A cos t from rest.
#[cfg(test)]
pub(crate) fn linear_response(m: f64, c: f64, k_eff: f64, amp: f64, t: f64) -> f64 {
    let det = (k_eff - m).powi(2) + c * c;
    let a = amp * (k_eff - m) / det;
    let b = amp * c / det;
    let wn = (k_eff / m).sqrt();
    let zeta = c / (2.0 * m * wn);
    let wd = wn * (1.0 - zeta * zeta).sqrt();
    // homogeneous part cancels u(0) = a and u̇(0) = b
    let h0 = -a;
    let h1 = (zeta * wn * h0 - b) / wd;
    a * t.cos() + b * t.sin() + (-zeta * wn * t).exp() * (h0 * (wd * t).cos() + h1 * (wd * t).sin())
}
