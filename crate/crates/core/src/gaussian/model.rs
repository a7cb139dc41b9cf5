use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::gaussian::sh::{num_coeffs, MAX_SH_DEGREE};
use crate::math::{quat_to_mat, Mat3, Vec3};
use crate::scalar::{sigmoid, Real};

/// Log-space bounds applied to raw scales after every optimizer step.
pub const RAW_SCALE_MIN: f64 = -12.0;
pub const RAW_SCALE_MAX: f64 = 6.0;

/// One primitive in raw (optimizer) parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams<T> {
    pub mean: [T; 3],
    /// Log-space scales; the activated scale is `exp(raw)`.
    pub raw_scales: [T; 3],
    /// Quaternion `(w, x, y, z)`, normalized before use.
    pub rotation: [T; 4],
    /// Opacity logit; the activated opacity is `sigmoid(raw)`.
    pub raw_opacity: T,
    /// SH coefficients laid out `[coeff][channel]`.
    pub sh: Vec<T>,
}

impl<T: Real> GaussianParams<T> {
    /// Isotropic Gaussian with a constant color.
    pub fn isotropic(mean: [T; 3], scale: T, opacity: T, rgb: [T; 3], sh_degree: usize) -> Self {
        let mut sh = vec![T::zero(); num_coeffs(sh_degree) * 3];
        for c in 0..3 {
            sh[c] = crate::gaussian::sh::rgb_to_dc(rgb[c]);
        }
        Self {
            mean,
            raw_scales: [scale.ln(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            raw_opacity: crate::scalar::logit(opacity),
            sh,
        }
    }

    pub fn scales(&self) -> [T; 3] {
        self.raw_scales.map(|s| s.exp())
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.raw_opacity)
    }

    pub fn rotation_matrix(&self) -> Result<Mat3<T>> {
        Ok(quat_to_mat(normalize_quat(self.rotation)?))
    }

    pub fn covariance(&self) -> Result<Mat3<T>> {
        build_covariance(self.raw_scales, self.rotation)
    }
}

/// Unit quaternion, or an error for the zero quaternion.
pub fn normalize_quat<T: Real>(q: [T; 4]) -> Result<[T; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::DegenerateRotation);
    }
    Ok(q.map(|v| v / n))
}

/// `Σ = R diag(s²) Rᵀ` with `s = exp(raw_scales)`.
pub fn build_covariance<T: Real>(raw_scales: [T; 3], rotation: [T; 4]) -> Result<Mat3<T>> {
    let r = quat_to_mat(normalize_quat(rotation)?);
    let s2 = Vec3::from_array(raw_scales.map(|v| (v + v).exp()));
    let mut sigma = r.mul_mat(&Mat3::diag(s2)).mul_mat(&r.transpose());
    // Exact symmetry regardless of rounding order.
    for i in 0..3 {
        for j in (i + 1)..3 {
            let avg = T::lit(0.5) * (sigma.m[i][j] + sigma.m[j][i]);
            sigma.m[i][j] = avg;
            sigma.m[j][i] = avg;
        }
    }
    Ok(sigma)
}

/// Unnormalized Gaussian density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn evaluate_density<T: Real>(g: &GaussianParams<T>, x: [T; 3]) -> Result<T> {
    let r = g.rotation_matrix()?;
    let d = Vec3::from_array(x) - Vec3::from_array(g.mean);
    let mut maha = T::zero();
    for j in 0..3 {
        let proj = r.col(j).dot(d);
        let s2 = (g.raw_scales[j] + g.raw_scales[j]).exp();
        maha += proj * proj / s2;
    }
    Ok((-T::lit(0.5) * maha).exp())
}

/// Structure-of-arrays store of `K` primitives.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T> {
    pub sh_degree: usize,
    pub means: Vec<[T; 3]>,
    pub raw_scales: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub raw_opacities: Vec<T>,
    /// `K × num_coeffs(sh_degree) × 3`.
    pub sh: Vec<T>,
}

impl<T: Real> GaussianCloud<T> {
    pub fn empty(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!("SH degree {sh_degree} exceeds {MAX_SH_DEGREE}")));
        }
        Ok(Self {
            sh_degree,
            means: Vec::new(),
            raw_scales: Vec::new(),
            rotations: Vec::new(),
            raw_opacities: Vec::new(),
            sh: Vec::new(),
        })
    }

    pub fn from_params(sh_degree: usize, params: impl IntoIterator<Item = GaussianParams<T>>) -> Result<Self> {
        let mut cloud = Self::empty(sh_degree)?;
        for p in params {
            cloud.push(p)?;
        }
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn coeffs_per_gaussian(&self) -> usize {
        num_coeffs(self.sh_degree) * 3
    }

    pub fn push(&mut self, p: GaussianParams<T>) -> Result<()> {
        if p.sh.len() != self.coeffs_per_gaussian() {
            return Err(Error::Shape(format!(
                "expected {} SH values, got {}",
                self.coeffs_per_gaussian(),
                p.sh.len()
            )));
        }
        self.means.push(p.mean);
        self.raw_scales.push(p.raw_scales);
        self.rotations.push(p.rotation);
        self.raw_opacities.push(p.raw_opacity);
        self.sh.extend_from_slice(&p.sh);
        Ok(())
    }

    pub fn get(&self, k: usize) -> GaussianParams<T> {
        GaussianParams {
            mean: self.means[k],
            raw_scales: self.raw_scales[k],
            rotation: self.rotations[k],
            raw_opacity: self.raw_opacities[k],
            sh: self.sh_of(k).to_vec(),
        }
    }

    #[inline]
    pub fn sh_of(&self, k: usize) -> &[T] {
        let n = self.coeffs_per_gaussian();
        &self.sh[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn scales(&self, k: usize) -> [T; 3] {
        self.raw_scales[k].map(|s| s.exp())
    }

    #[inline]
    pub fn opacity(&self, k: usize) -> T {
        sigmoid(self.raw_opacities[k])
    }

    /// Keeps the Gaussians whose mask entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let n = self.coeffs_per_gaussian();
        let mut sh = Vec::with_capacity(self.sh.len());
        for (k, _) in keep.iter().enumerate().filter(|(_, &m)| m) {
            sh.extend_from_slice(&self.sh[k * n..(k + 1) * n]);
        }
        self.sh = sh;
        retain_by(&mut self.means, keep);
        retain_by(&mut self.raw_scales, keep);
        retain_by(&mut self.rotations, keep);
        retain_by(&mut self.raw_opacities, keep);
    }

    pub fn clamp_raw_scales(&mut self) {
        let (lo, hi) = (T::lit(RAW_SCALE_MIN), T::lit(RAW_SCALE_MAX));
        for s in self.raw_scales.iter_mut() {
            for v in s.iter_mut() {
                *v = v.max(lo).min(hi);
            }
        }
    }

    /// Checks the structural invariants: aligned arrays and no zero quaternions.
    pub fn validate(&self) -> Result<()> {
        let k = self.len();
        if self.raw_scales.len() != k
            || self.rotations.len() != k
            || self.raw_opacities.len() != k
            || self.sh.len() != k * self.coeffs_per_gaussian()
        {
            return Err(Error::Shape("per-field arrays differ in length".into()));
        }
        for q in &self.rotations {
            normalize_quat(*q)?;
        }
        Ok(())
    }

    /// Hash over every parameter bit; used to detect stale render records.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        h.write_usize(self.len());
        h.write_usize(self.sh_degree);
        for v in self.means.iter().flatten() {
            h.write_u64(v.bits());
        }
        for v in self.raw_scales.iter().flatten() {
            h.write_u64(v.bits());
        }
        for v in self.rotations.iter().flatten() {
            h.write_u64(v.bits());
        }
        for v in &self.raw_opacities {
            h.write_u64(v.bits());
        }
        for v in &self.sh {
            h.write_u64(v.bits());
        }
        h.finish()
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c = |v: &T| U::lit(v.as_f64());
        GaussianCloud {
            sh_degree: self.sh_degree,
            means: self.means.iter().map(|a| a.each_ref().map(c)).collect(),
            raw_scales: self.raw_scales.iter().map(|a| a.each_ref().map(c)).collect(),
            rotations: self.rotations.iter().map(|a| a.each_ref().map(c)).collect(),
            raw_opacities: self.raw_opacities.iter().map(c).collect(),
            sh: self.sh.iter().map(c).collect(),
        }
    }
}

pub(crate) fn retain_by<V>(v: &mut Vec<V>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().unwrap());
}
