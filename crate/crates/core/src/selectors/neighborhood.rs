use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::gp::PoolCovariance;

/// Local-kernel truncation: keep points with |K| ≥ `threshold`, at most `cap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub threshold: f64,
    pub cap: usize,
}

impl Truncation {
    pub fn new(threshold: f64, cap: usize) -> Self {
        Self { threshold, cap }
    }

    pub fn is_noop(&self, pool_size: usize) -> bool {
        self.threshold <= 0.0 && self.cap >= pool_size
    }
}

/// The local neighbors of `center` within some candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: usize,
    /// Sorted by descending |K(center, ·)|, ties by ascending index.
    pub members: Vec<usize>,
    pub threshold: f64,
}

impl Neighborhood {
    /// Members in ascending index order, the canonical conditioning order.
    pub fn sorted_members(&self) -> Vec<usize> {
        let mut m = self.members.clone();
        m.sort_unstable();
        m
    }
}

/// Neighbors of `center` among `candidates` (the center itself is skipped).
pub fn neighborhood<I>(cov: &PoolCovariance, center: usize, candidates: I, trunc: Truncation) -> Neighborhood
where
    I: IntoIterator<Item = usize>,
{
    let mut buf = Vec::new();
    let row = cov.row(center, &mut buf);
    let mut scored: Vec<(f64, usize)> = candidates
        .into_iter()
        .filter(|&j| j != center)
        .filter_map(|j| {
            let k = row[j].abs();
            (k >= trunc.threshold).then_some((k, j))
        })
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    if scored.len() > trunc.cap {
        scored.select_nth_unstable_by(trunc.cap, by_rank);
        scored.truncate(trunc.cap);
    }
    scored.sort_unstable_by(by_rank);
    Neighborhood {
        center,
        members: scored.into_iter().map(|(_, j)| j).collect(),
        threshold: trunc.threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{FeatureMatrix, Hyperparameters};
    use proptest::prelude::*;

    fn line_pool(n: usize) -> PoolCovariance {
        let rows: Vec<[f64; 1]> = (0..n).map(|i| [i as f64 * 0.5]).collect();
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        PoolCovariance::new(&x, &Hyperparameters::new(vec![1.0], 1.0, 1.0, 1e-4).unwrap()).unwrap()
    }

    #[test]
    fn ordering_and_ties() {
        let cov = line_pool(7);
        // 2 and 4 are equidistant from 3
        let nb = neighborhood(&cov, 3, 0..7, Truncation::new(0.0, 4));
        assert_eq!(nb.members, vec![2, 4, 1, 5]);
        assert_eq!(nb.sorted_members(), vec![1, 2, 4, 5]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let cov = line_pool(3);
        let k01 = cov.get(0, 1);
        let nb = neighborhood(&cov, 0, 0..3, Truncation::new(k01, 10));
        assert_eq!(nb.members, vec![1]);
        let nb = neighborhood(&cov, 0, 0..3, Truncation::new(k01 + 1e-12, 10));
        assert!(nb.members.is_empty());
    }

    proptest! {
        #[test]
        fn cap_and_monotonicity(n in 3usize..30, center in 0usize..30, thr in 0.0..1.0f64, d in 1usize..30) {
            let center = center % n;
            let cov = line_pool(n);
            let small = neighborhood(&cov, center, 0..n, Truncation::new(thr, d));
            let big = neighborhood(&cov, center, 0..n, Truncation::new(thr, d + 5));
            prop_assert!(small.members.len() <= d);
            prop_assert!(small.members.len() <= big.members.len());
            prop_assert!(small.members.iter().all(|m| big.members.contains(m)));
            for &m in &small.members {
                prop_assert!(cov.get(center, m).abs() >= thr);
            }
        }
    }
}
