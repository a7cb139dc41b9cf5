//! Effective-rank loss plus the optional depth-distortion and normal-consistency losses.

use crate::erank::effective_rank_with_grad;
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::math::{normalize_backward, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_erank: T,
    /// Keeps the log argument away from zero for needles.
    pub epsilon: T,
    pub lambda_d: T,
    pub lambda_n: T,
    pub erank_start_iter: usize,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_erank: T::lit(0.01),
            epsilon: T::lit(1e-5),
            lambda_d: T::zero(),
            lambda_n: T::zero(),
            erank_start_iter: 1000,
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: T| v >= T::zero() && v.is_finite();
        if !(nonneg(self.lambda_erank) && nonneg(self.lambda_d) && nonneg(self.lambda_n)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Loss components; each already includes its weight, so `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub erank: f64,
    pub depth_distortion: f64,
    pub normal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(photometric: f64, erank: f64, depth_distortion: f64, normal: f64) -> Self {
        Self { photometric, erank, depth_distortion, normal, total: photometric + erank + depth_distortion + normal }
    }

    pub fn is_finite(&self) -> bool {
        [self.photometric, self.erank, self.depth_distortion, self.normal, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn erank_schedule_active<T: Real>(iteration: usize, w: &LossWeights<T>) -> bool {
    iteration >= w.erank_start_iter
}

/// Index of the smallest entry; ties resolve to the last one.
fn argmin3<T: Real>(s: [T; 3]) -> usize {
    let mut m = 0;
    for j in 1..3 {
        if s[j] <= s[m] {
            m = j;
        }
    }
    m
}

/// One Gaussian's term `λ·max(−ln(erank − 1 + ε), 0) + s_min` and its
/// gradient with respect to the raw (log) scales.
pub fn erank_loss_term<T: Real>(raw_scales: [T; 3], lambda: T, epsilon: T) -> Result<(T, [T; 3])> {
    let s = raw_scales.map(|r| r.exp());
    let (e, de_ds) = effective_rank_with_grad(s)?;
    let arg = e - T::one() + epsilon;
    let log_term = -arg.ln();
    let m = argmin3(s);
    let mut grad = [T::zero(); 3];
    let mut loss = s[m];
    grad[m] = s[m];
    if log_term > T::zero() {
        loss += lambda * log_term;
        let dl_de = -lambda / arg;
        for j in 0..3 {
            grad[j] += dl_de * de_ds[j] * s[j];
        }
    }
    Ok((loss, grad))
}

/// Summed erank loss over the cloud and per-Gaussian raw-scale gradients.
pub fn erank_loss<T: Real>(cloud: &GaussianCloud<T>, w: &LossWeights<T>) -> Result<(T, Vec<[T; 3]>)> {
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(cloud.len());
    for raw in &cloud.raw_scales {
        let (l, g) = erank_loss_term(*raw, w.lambda_erank, w.epsilon)?;
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Distortion of one ray, accumulating `∂/∂ω` and `∂/∂z` into the outputs.
pub fn ray_distortion<T: Real>(weights: &[T], depths: &[T], lambda: T, d_w: &mut [T], d_z: &mut [T]) -> T {
    let n = weights.len();
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for i in 0..n {
        let mut acc_w = T::zero();
        let mut acc_z = T::zero();
        for j in 0..n {
            let diff = depths[i] - depths[j];
            acc_w += weights[j] * diff.abs();
            if diff > T::zero() {
                acc_z += weights[j];
            } else if diff < T::zero() {
                acc_z -= weights[j];
            }
        }
        loss += weights[i] * acc_w;
        d_w[i] += two * lambda * acc_w;
        d_z[i] += two * lambda * weights[i] * acc_z;
    }
    lambda * loss
}

/// `λ_d Σ_rays Σ_{i,j} ω_i ω_j |z_i − z_j|` over ordered pairs, with gradients
/// shaped like the inputs.
#[allow(clippy::type_complexity)]
pub fn depth_distortion_loss<T: Real>(
    ray_weights: &[Vec<T>],
    ray_depths: &[Vec<T>],
    lambda_d: T,
) -> Result<(T, Vec<Vec<T>>, Vec<Vec<T>>)> {
    if ray_weights.len() != ray_depths.len() {
        return Err(Error::Shape(format!("{} weight rays vs {} depth rays", ray_weights.len(), ray_depths.len())));
    }
    let mut total = T::zero();
    let mut dws = Vec::with_capacity(ray_weights.len());
    let mut dzs = Vec::with_capacity(ray_weights.len());
    for (r, (w, z)) in ray_weights.iter().zip(ray_depths).enumerate() {
        if w.len() != z.len() {
            return Err(Error::Shape(format!("ray {r}: {} weights vs {} depths", w.len(), z.len())));
        }
        let mut dw = vec![T::zero(); w.len()];
        let mut dz = vec![T::zero(); z.len()];
        total += ray_distortion(w, z, lambda_d, &mut dw, &mut dz);
        dws.push(dw);
        dzs.push(dz);
    }
    Ok((total, dws, dzs))
}

/// Image of 3-vectors with a validity mask, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap<T> {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<Vec3<T>>,
    pub valid: Vec<bool>,
}

impl<T: Real> NormalMap<T> {
    pub fn filled(width: usize, height: usize, n: Vec3<T>) -> Self {
        Self { width, height, normals: vec![n; width * height], valid: vec![true; width * height] }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Mean over pixels valid in both maps of `λ_n ‖n̄ − n̂‖`, with gradients for
/// both maps. Returns zero (and logs a warning) when no pixel is valid.
#[allow(clippy::type_complexity)]
pub fn normal_consistency_loss<T: Real>(
    rendered: &NormalMap<T>,
    from_depth: &NormalMap<T>,
    lambda_n: T,
) -> Result<(T, Vec<Vec3<T>>, Vec<Vec3<T>>)> {
    if rendered.width != from_depth.width || rendered.height != from_depth.height {
        return Err(Error::Shape(format!(
            "normal maps {}x{} vs {}x{}",
            rendered.width, rendered.height, from_depth.width, from_depth.height
        )));
    }
    let n = rendered.normals.len();
    let mut d_r = vec![Vec3::zero(); n];
    let mut d_d = vec![Vec3::zero(); n];
    let valid: Vec<usize> = (0..n).filter(|&p| rendered.valid[p] && from_depth.valid[p]).collect();
    if valid.is_empty() {
        log::warn!("normal consistency loss: no valid pixels");
        return Ok((T::zero(), d_r, d_d));
    }
    let scale = lambda_n / T::of_usize(valid.len());
    let mut total = T::zero();
    for p in valid {
        let diff = rendered.normals[p] - from_depth.normals[p];
        let len = diff.norm();
        total += len;
        if len > T::zero() {
            let g = diff * (scale / len);
            d_r[p] = g;
            d_d[p] = -g;
        }
    }
    Ok((total * scale, d_r, d_d))
}

/// Normals from a depth map by central differences of back-projected points.
/// Normals are in the camera frame; a plane facing the camera gives `(0, 0, −1)`.
pub fn depth_to_normal<T: Real>(depth: &[T], depth_valid: &[bool], cam: &Camera<T>) -> NormalMap<T> {
    let (w, h) = (cam.width, cam.height);
    let mut out = NormalMap { width: w, height: h, normals: vec![Vec3::zero(); w * h], valid: vec![false; w * h] };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if let Some((n, _)) = pixel_normal(depth, depth_valid, cam, x, y) {
                out.normals[y * w + x] = n;
                out.valid[y * w + x] = true;
            }
        }
    }
    out
}

type Neighbors<T> = [(usize, Vec3<T>); 4];

/// Normal at an interior pixel plus the data the backward pass needs.
#[allow(clippy::type_complexity)]
fn pixel_normal<T: Real>(
    depth: &[T],
    valid: &[bool],
    cam: &Camera<T>,
    x: usize,
    y: usize,
) -> Option<(Vec3<T>, (Vec3<T>, Vec3<T>, Vec3<T>, T, Neighbors<T>))> {
    let w = cam.width;
    // Order: below, above, right, left.
    let idx = [(x, y + 1), (x, y - 1), (x + 1, y), (x - 1, y)];
    let mut nb = [(0, Vec3::zero()); 4];
    for (k, &(i, j)) in idx.iter().enumerate() {
        let p = j * w + i;
        if !valid[p] || !(depth[p] > T::zero()) || !valid[y * w + x] {
            return None;
        }
        nb[k] = (p, cam.pixel_ray(i, j));
    }
    let v = nb[0].1 * depth[nb[0].0] - nb[1].1 * depth[nb[1].0];
    let u = nb[2].1 * depth[nb[2].0] - nb[3].1 * depth[nb[3].0];
    let hv = v.cross(u);
    let len = hv.norm();
    if !(len > T::lit(1e-20)) {
        return None;
    }
    let n = hv * (T::one() / len);
    Some((n, (v, u, n, len, nb)))
}

/// Pulls a gradient on the normal map back to the depth map.
pub fn depth_to_normal_backward<T: Real>(
    depth: &[T],
    depth_valid: &[bool],
    cam: &Camera<T>,
    d_normals: &[Vec3<T>],
) -> Vec<T> {
    let (w, h) = (cam.width, cam.height);
    let mut d_depth = vec![T::zero(); w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let dn = d_normals[y * w + x];
            if dn.norm_sq() == T::zero() {
                continue;
            }
            let Some((_, (v, u, n, len, nb))) = pixel_normal(depth, depth_valid, cam, x, y) else {
                continue;
            };
            let dh = normalize_backward(n, len, dn);
            // h = v × u
            let dv = u.cross(dh);
            let du = dh.cross(v);
            d_depth[nb[0].0] += dv.dot(nb[0].1);
            d_depth[nb[1].0] -= dv.dot(nb[1].1);
            d_depth[nb[2].0] += du.dot(nb[2].1);
            d_depth[nb[3].0] -= du.dot(nb[3].1);
        }
    }
    d_depth
}
