//! Quality indicators for objective-space fronts (all minimization) and
//! surrogate accuracy.

use crate::domain::dominates_unchecked;
use crate::error::{Error, Result};

pub const MAX_HV_OBJECTIVES: usize = 6;
pub const REFERENCE_FACTOR: f64 = 1.1;

/// Exact hypervolume dominated by `front` and bounded by `reference`.
/// Points beyond the reference are clipped onto it.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    let q = reference.len();
    if q > MAX_HV_OBJECTIVES {
        return Err(Error::InvalidConfig(format!(
            "exact hypervolume supports at most {MAX_HV_OBJECTIVES} objectives, got {q}"
        )));
    }
    if front.is_empty() || q == 0 {
        return Ok(0.0);
    }
    let mut pts = Vec::with_capacity(front.len());
    for p in front {
        if p.len() != q {
            return Err(Error::DimensionMismatch { expected: q, got: p.len() });
        }
        if p.iter().any(|v| v.is_nan()) {
            return Err(Error::NanObjective);
        }
        pts.push(p.iter().zip(reference).map(|(v, r)| v.min(*r)).collect::<Vec<f64>>());
    }
    Ok(hv_rec(nondominated(pts), reference))
}

fn nondominated(mut pts: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pts.dedup();
    let mut keep: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
    for p in pts {
        // lexicographic order: nothing later can dominate an earlier point
        if !keep.iter().any(|k| dominates_unchecked(k, &p)) {
            keep.push(p);
        }
    }
    keep
}

/// Slices along the last objective and recurses on the remaining ones.
fn hv_rec(pts: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    let q = reference.len();
    if pts.is_empty() {
        return 0.0;
    }
    if q == 1 {
        let best = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return reference[0] - best;
    }
    if q == 2 {
        let mut s: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut vol = 0.0;
        let mut y_bound = reference[1];
        for (x, y) in s {
            if y < y_bound {
                vol += (reference[0] - x) * (y_bound - y);
                y_bound = y;
            }
        }
        return vol;
    }
    let last = q - 1;
    let mut order = pts;
    order.sort_by(|a, b| a[last].partial_cmp(&b[last]).expect("finite"));
    let sub_ref = &reference[..last];
    let mut vol = 0.0;
    let mut active: Vec<Vec<f64>> = Vec::with_capacity(order.len());
    let mut i = 0;
    while i < order.len() {
        let z = order[i][last];
        while i < order.len() && order[i][last] == z {
            active.push(order[i][..last].to_vec());
            i += 1;
        }
        let next = if i < order.len() { order[i][last] } else { reference[last] };
        if next > z {
            active = nondominated(std::mem::take(&mut active));
            vol += hv_rec(active.clone(), sub_ref) * (next - z);
        }
    }
    vol
}

/// Shared normalization for comparing several fronts.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationContext {
    pub nadir: Vec<f64>,
    pub shift: Vec<f64>,
}

impl NormalizationContext {
    /// Component-wise maximum over every supplied point. Columns with a
    /// negative minimum or non-positive maximum are shifted by their minimum.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec<f64>>, q: usize) -> Option<Self> {
        let mut lo = vec![f64::INFINITY; q];
        let mut hi = vec![f64::NEG_INFINITY; q];
        let mut any = false;
        for p in points {
            if p.len() != q || p.iter().any(|v| !v.is_finite()) {
                continue;
            }
            any = true;
            for j in 0..q {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        if !any {
            return None;
        }
        let mut nadir = vec![0.0; q];
        let mut shift = vec![0.0; q];
        for j in 0..q {
            if lo[j] < 0.0 || hi[j] <= 0.0 {
                shift[j] = lo[j];
            }
            nadir[j] = hi[j] - shift[j];
            if nadir[j] <= 0.0 {
                nadir[j] = 1.0;
            }
        }
        Some(Self { nadir, shift })
    }

    pub fn normalize(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.shift.iter().zip(&self.nadir))
            .map(|(v, (s, n))| (v - s) / n)
            .collect()
    }

    pub fn reference(&self) -> Vec<f64> {
        vec![REFERENCE_FACTOR; self.nadir.len()]
    }

    /// Hypervolume of the normalized front against `1.1 · 1`; an empty front
    /// scores 0.
    pub fn hypervolume(&self, front: &[Vec<f64>]) -> Result<f64> {
        let pts: Vec<Vec<f64>> = front.iter().map(|p| self.normalize(p)).collect();
        hypervolume(&pts, &self.reference())
    }
}

/// Normalized hypervolume for several fronts under one shared nadir.
pub fn normalized_hypervolume(fronts: &[Vec<Vec<f64>>], q: usize) -> Result<Vec<f64>> {
    let Some(ctx) = NormalizationContext::from_points(fronts.iter().flatten(), q) else {
        return Ok(vec![0.0; fronts.len()]);
    };
    fronts.iter().map(|f| ctx.hypervolume(f)).collect()
}

/// Trapezoidal integral over the epoch index.
pub fn hv_auc(series: &[f64]) -> f64 {
    series.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean distance from each reference point to its nearest point of `a`.
pub fn igd(a: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    if a.is_empty() || reference.is_empty() {
        return f64::NAN;
    }
    let total: f64 = reference
        .iter()
        .map(|r| a.iter().map(|p| euclid(p, r)).fold(f64::INFINITY, f64::min))
        .sum();
    total / reference.len() as f64
}

/// Smallest shift that makes `a` weakly dominate every point of `b`.
pub fn epsilon_additive(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    b.iter()
        .map(|bp| {
            a.iter()
                .map(|ap| ap.iter().zip(bp).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `a ⪯ b`: no worse in every objective (equality included).
pub fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// Fraction of `b` weakly dominated by some point of `a`.
pub fn set_coverage(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if b.is_empty() {
        return f64::NAN;
    }
    let covered = b.iter().filter(|bp| a.iter().any(|ap| weakly_dominates(ap, bp))).count();
    covered as f64 / b.len() as f64
}

/// Mean over objectives of RMSE divided by the observed range. Zero-range
/// columns are skipped; `None` when nothing is left to average.
pub fn nrmse(y: &[Vec<f64>], y_hat: &[Vec<f64>]) -> Option<f64> {
    if y.len() < 2 || y.len() != y_hat.len() {
        return None;
    }
    let q = y[0].len();
    let mut sum = 0.0;
    let mut used = 0;
    for j in 0..q {
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r[j]), h.max(r[j])));
        let range = hi - lo;
        if !(range > 0.0) || !range.is_finite() {
            log::warn!("objective {j} has zero range; excluded from NRMSE");
            continue;
        }
        let mse = y.iter().zip(y_hat).map(|(a, b)| (a[j] - b[j]).powi(2)).sum::<f64>() / y.len() as f64;
        sum += mse.sqrt() / range;
        used += 1;
    }
    (used > 0).then(|| sum / used as f64)
}
