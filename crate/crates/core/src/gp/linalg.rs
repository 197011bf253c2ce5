//! Cholesky factorizations with diagonal jitter escalation.
//!
//! When a factorization fails, the diagonal is inflated by
//! `1e-10 * scale`, doubling each retry until `1e-4 * scale` is exceeded.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::GpError;

pub(crate) const JITTER_START: f64 = 1e-10;
pub(crate) const JITTER_MAX: f64 = 1e-4;

fn jitter_schedule(scale: f64) -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain(
        std::iter::successors(Some(JITTER_START * scale), |j| Some(j * 2.0))
            .take_while(move |j| *j <= JITTER_MAX * scale),
    )
}

pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

/// Factorizes `a`, escalating diagonal jitter relative to `scale` on failure.
pub fn cholesky_with_jitter(a: &DMatrix<f64>, scale: f64) -> Result<JitteredCholesky, GpError> {
    let n = a.nrows();
    for jitter in jitter_schedule(scale) {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(factor) = Cholesky::new(m) {
            if jitter > 0.0 {
                log::debug!("cholesky of size {n} needed jitter {jitter:e}");
            }
            return Ok(JitteredCholesky { factor, jitter });
        }
    }
    Err(GpError::Degenerate {
        size: n,
        max_jitter: JITTER_MAX * scale,
    })
}

/// Lower-triangular factor of a small dense SPD matrix, stored row-major.
///
/// Used on the selector hot path, where the same factor must be produced
/// bit-for-bit regardless of whether it is reused across many right-hand
/// sides or rebuilt per query.
#[derive(Debug, Clone)]
pub(crate) struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// `a` is a full row-major n×n matrix; only the lower triangle is read.
    pub fn factor(a: &[f64], n: usize, scale: f64) -> Result<Self, GpError> {
        debug_assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        for jitter in jitter_schedule(scale) {
            if try_factor(a, n, jitter, &mut l) {
                return Ok(Self { n, l });
            }
        }
        Err(GpError::Degenerate {
            size: n,
            max_jitter: JITTER_MAX * scale,
        })
    }

    /// Squared norm of L⁻¹ b, i.e. bᵀ A⁻¹ b.
    pub fn quad_form_inv(&self, b: &[f64]) -> f64 {
        let n = self.n;
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let mut s = b[i];
            for (lij, yj) in row.iter().zip(&y[..i]) {
                s -= lij * yj;
            }
            let v = s / self.l[i * n + i];
            y[i] = v;
            acc += v * v;
        }
        acc
    }
}

fn try_factor(a: &[f64], n: usize, jitter: f64, l: &mut [f64]) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            if i == j {
                s += jitter;
            }
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for (x, y) in ri.iter().zip(rj) {
                s -= x * y;
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_factor_matches_nalgebra() {
        let a = [4.0, 2.0, 0.4, 2.0, 3.0, 0.5, 0.4, 0.5, 2.0];
        let f = DenseCholesky::factor(&a, 3, 1.0).unwrap();
        let m = DMatrix::from_row_slice(3, 3, &a);
        let c = Cholesky::new(m.clone()).unwrap();
        let b = nalgebra::DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let expected = b.dot(&c.solve(&b));
        assert!((f.quad_form_inv(b.as_slice()) - expected).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_gets_jitter() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = cholesky_with_jitter(&a, 1.0).unwrap();
        assert!(c.jitter > 0.0 && c.jitter <= JITTER_MAX);
        let f = DenseCholesky::factor(a.as_slice(), 2, 1.0).unwrap();
        assert_eq!(f.n, 2);
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(&a, 1.0),
            Err(GpError::Degenerate { size: 2, .. })
        ));
        assert!(DenseCholesky::factor(a.as_slice(), 2, 1.0).is_err());
    }
}
