//! Effective rank of Gaussian primitives.
//!
//! A Gaussian's covariance `R diag(s²) Rᵀ` has singular values `s₁² ≥ s₂² ≥ s₃²`.
//! Normalizing them gives a distribution `q`, and the effective rank is
//! `exp(H(q))` with `H` the Shannon entropy in nats. It is 3 for a sphere,
//! approaches 2 for a flat disk and 1 for a needle.

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::scalar::Real;

/// Needle threshold used for counting (`erank < 1.04`).
pub const NEEDLE_THRESHOLD: f64 = 1.04;
/// Stricter threshold used for visualization (`erank < 1.02`).
pub const NEEDLE_THRESHOLD_STRICT: f64 = 1.02;
pub const DEFAULT_HISTOGRAM_BINS: usize = 64;

/// Sorted squared scales of one Gaussian and the quantities derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSpectrum<T> {
    /// Squared activated scales, descending.
    pub s_sq_sorted: [T; 3],
    pub q: [T; 3],
    pub erank: T,
}

impl<T: Real> ScaleSpectrum<T> {
    pub fn new(scales: [T; 3]) -> Result<Self> {
        let q = singular_value_distribution(scales)?;
        let mut s_sq = scales.map(|s| s * s);
        sort_desc(&mut s_sq);
        Ok(Self { s_sq_sorted: s_sq, q, erank: erank_from_q(q) })
    }
}

fn check_scales<T: Real>(scales: [T; 3]) -> Result<()> {
    if scales.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
        return Err(Error::Domain(format!(
            "scales must be positive and finite, got ({}, {}, {})",
            scales[0], scales[1], scales[2]
        )));
    }
    Ok(())
}

fn sort_desc<T: Real>(v: &mut [T; 3]) {
    v.sort_by(|a, b| b.partial_cmp(a).expect("finite values"));
}

/// Unsorted `q_i = s_i² / Σ s_j²`.
fn q_unsorted<T: Real>(scales: [T; 3]) -> [T; 3] {
    // Divide by the largest scale first so tiny scales do not underflow S.
    let m = scales[0].max(scales[1]).max(scales[2]);
    let r = scales.map(|s| (s / m) * (s / m));
    let total = r[0] + r[1] + r[2];
    r.map(|v| v / total)
}

/// Normalized distribution of the squared scales, sorted descending.
pub fn singular_value_distribution<T: Real>(scales: [T; 3]) -> Result<[T; 3]> {
    check_scales(scales)?;
    let mut sorted = scales;
    sort_desc(&mut sorted);
    Ok(q_unsorted(sorted))
}

fn entropy<T: Real>(q: [T; 3]) -> T {
    let mut h = T::zero();
    for &qi in &q {
        if qi > T::zero() {
            h -= qi * qi.ln();
        }
    }
    h
}

fn erank_from_q<T: Real>(q: [T; 3]) -> T {
    entropy(q).exp()
}

/// `exp(-Σ q_i ln q_i)` over the squared scales; lies in `[1, 3]`.
pub fn effective_rank<T: Real>(scales: [T; 3]) -> Result<T> {
    Ok(erank_from_q(singular_value_distribution(scales)?))
}

/// Effective rank and its gradient with respect to each activated scale.
///
/// With `x_j = s_j²` and `S = Σ x_j`: `∂H/∂x_j = -(ln q_j + H) / S`, so
/// `∂erank/∂s_j = -erank · (ln q_j + H) · 2 q_j / s_j`.
pub fn effective_rank_with_grad<T: Real>(scales: [T; 3]) -> Result<(T, [T; 3])> {
    check_scales(scales)?;
    let q = q_unsorted(scales);
    let h = entropy(q);
    let e = h.exp();
    let two = T::lit(2.0);
    let mut g = [T::zero(); 3];
    for j in 0..3 {
        if q[j] > T::zero() {
            g[j] = -e * (q[j].ln() + h) * two * q[j] / scales[j];
        }
    }
    Ok((e, g))
}

/// Per-Gaussian effective ranks of a cloud.
pub fn cloud_eranks<T: Real>(cloud: &GaussianCloud<T>) -> Vec<T> {
    (0..cloud.len())
        .map(|k| effective_rank(cloud.scales(k)).unwrap_or(T::one()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleReport {
    pub mask: Vec<bool>,
    pub count: usize,
}

impl NeedleReport {
    pub fn fraction(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.count as f64 / self.mask.len() as f64
        }
    }
}

/// Marks Gaussians whose effective rank is below `threshold`.
pub fn classify_needles<T: Real>(cloud: &GaussianCloud<T>, threshold: T) -> Result<NeedleReport> {
    if !(threshold > T::one() && threshold < T::lit(3.0)) {
        return Err(Error::Config(format!("needle threshold must lie in (1, 3), got {threshold}")));
    }
    let mask: Vec<bool> = cloud_eranks(cloud).into_iter().map(|e| e < threshold).collect();
    let count = mask.iter().filter(|&&m| m).count();
    Ok(NeedleReport { mask, count })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErankHistogram {
    /// `n_bins + 1` ascending edges from 1 to 3.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub iteration: usize,
    pub total: u64,
}

impl ErankHistogram {
    /// Bin index for a value; the last bin is closed on the right.
    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let lo = self.bin_edges[0];
        let hi = self.bin_edges[n];
        let t = ((v - lo) / (hi - lo) * n as f64).floor();
        if t < 0.0 {
            0
        } else {
            (t as usize).min(n - 1)
        }
    }
}

/// Uniform histogram of effective ranks over `[1, 3]`.
pub fn erank_histogram<T: Real>(cloud: &GaussianCloud<T>, n_bins: usize, iteration: usize) -> Result<ErankHistogram> {
    if n_bins < 2 {
        return Err(Error::Config(format!("histogram needs at least 2 bins, got {n_bins}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| 1.0 + 2.0 * i as f64 / n_bins as f64).collect();
    let mut hist = ErankHistogram { bin_edges, counts: vec![0; n_bins], iteration, total: cloud.len() as u64 };
    for e in cloud_eranks(cloud) {
        let b = hist.bin_of(e.as_f64());
        hist.counts[b] += 1;
    }
    Ok(hist)
}

/// Summary statistics used in reports and metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErankSummary {
    pub count: usize,
    pub needles: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summarize<T: Real>(cloud: &GaussianCloud<T>, threshold: f64) -> ErankSummary {
    let e: Vec<f64> = cloud_eranks(cloud).into_iter().map(|v| v.as_f64()).collect();
    let n = e.len();
    ErankSummary {
        count: n,
        needles: e.iter().filter(|&&v| v < threshold).count(),
        mean: if n == 0 { 0.0 } else { e.iter().sum::<f64>() / n as f64 },
        min: e.iter().copied().fold(f64::INFINITY, f64::min),
        max: e.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}
