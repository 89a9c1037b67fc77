//! "Range" output normalization: per-column min-max, shared affine rescale,
//! then log1p.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNormalizer {
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    /// Effective shared interval after the non-negativity shift.
    pub lo: f64,
    pub hi: f64,
}

impl OutputNormalizer {
    /// Fits on rows of finite objective values. An empty column set yields an
    /// identity-like normalizer with no columns.
    pub fn fit(rows: &[Vec<f64>], q: usize) -> Self {
        let mut y_min = vec![f64::INFINITY; q];
        let mut y_max = vec![f64::NEG_INFINITY; q];
        for r in rows {
            for j in 0..q {
                y_min[j] = y_min[j].min(r[j]);
                y_max[j] = y_max[j].max(r[j]);
            }
        }
        for j in 0..q {
            if !y_min[j].is_finite() {
                y_min[j] = 0.0;
                y_max[j] = 0.0;
            }
        }
        let mut lo = y_min.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut hi = y_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if q == 0 {
            lo = 0.0;
            hi = 1.0;
        }
        // log1p needs a non-negative argument
        if lo < 0.0 {
            hi -= lo;
            lo = 0.0;
        }
        if hi <= lo {
            hi = lo + 1.0;
        }
        Self { y_min, y_max, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.y_min.len()
    }

    fn degenerate(&self, j: usize) -> bool {
        self.y_max[j] <= self.y_min[j]
    }

    pub fn transform(&self, y: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                if self.degenerate(j) {
                    return 0.0;
                }
                let unit = ((y[j] - self.y_min[j]) / (self.y_max[j] - self.y_min[j])).clamp(0.0, 1.0);
                (self.lo + unit * (self.hi - self.lo)).ln_1p()
            })
            .collect()
    }

    pub fn inverse_one(&self, j: usize, t: f64) -> f64 {
        if self.degenerate(j) {
            return self.y_min[j];
        }
        let unit = (t.exp_m1() - self.lo) / (self.hi - self.lo);
        self.y_min[j] + unit * (self.y_max[j] - self.y_min[j])
    }

    pub fn inverse(&self, t: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.inverse_one(j, t[j])).collect()
    }

    /// `d inverse_j / dt` at `t`.
    pub fn inverse_derivative(&self, j: usize, t: f64) -> f64 {
        if self.degenerate(j) {
            return 0.0;
        }
        t.exp() * (self.y_max[j] - self.y_min[j]) / (self.hi - self.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_column_maps_to_log1p() {
        let n = OutputNormalizer::fit(&[vec![0.0], vec![1.0]], 1);
        assert_eq!((n.lo, n.hi), (0.0, 1.0));
        assert_eq!(n.transform(&[0.0]), vec![0.0]);
        assert!((n.transform(&[1.0])[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn column_minimum_maps_to_interval_start() {
        let rows = vec![vec![2.0, 10.0], vec![5.0, 30.0], vec![3.0, 20.0]];
        let n = OutputNormalizer::fit(&rows, 2);
        assert_eq!((n.lo, n.hi), (10.0, 30.0));
        assert_eq!(n.transform(&rows[0])[0], 10f64.ln_1p());
        assert_eq!(n.transform(&rows[0])[1], 10f64.ln_1p());
    }

    #[test]
    fn degenerate_column() {
        let n = OutputNormalizer::fit(&[vec![3.0, 1.0], vec![3.0, 2.0]], 2);
        assert_eq!(n.transform(&[3.0, 1.5])[0], 0.0);
        assert_eq!(n.inverse(&[0.7, 0.0])[0], 3.0);
        assert_eq!(n.inverse_derivative(0, 0.2), 0.0);
    }

    #[test]
    fn negative_values_are_shifted() {
        let n = OutputNormalizer::fit(&[vec![-5.0], vec![-1.0]], 1);
        assert_eq!((n.lo, n.hi), (0.0, 4.0));
        let t = n.transform(&[-3.0]);
        assert!((n.inverse(&t)[0] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_derivative_matches_difference() {
        let n = OutputNormalizer::fit(&[vec![1.0, -2.0], vec![4.0, 9.0]], 2);
        for j in 0..2 {
            let t = 1.3;
            let fd = (n.inverse_one(j, t + 1e-6) - n.inverse_one(j, t - 1e-6)) / 2e-6;
            assert!((fd - n.inverse_derivative(j, t)).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn round_trip_on_random_matrices(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..30),
            probe in prop::collection::vec(-2e3f64..2e3, 3),
        ) {
            let n = OutputNormalizer::fit(&rows, 3);
            for r in rows.iter().chain(std::iter::once(&probe)) {
                let back = n.inverse(&n.transform(r));
                for j in 0..3 {
                    let expect = r[j].clamp(n.y_min[j], n.y_max[j]);
                    let scale = 1.0 + (n.y_max[j] - n.y_min[j]).abs() + expect.abs();
                    prop_assert!((back[j] - expect).abs() <= 1e-9 * scale, "{} vs {}", back[j], expect);
                }
            }
        }
    }
}
