use rayon::prelude::*;

use super::forward::RenderOutput;
use super::project::Projected2DGaussian;
use super::TILE_SIZE;
use crate::error::{Error, Result};
use crate::gaussian::sh::sh_backward;
use crate::gaussian::{Camera, GaussianCloud};
use crate::math::{normalize_backward, quat_to_mat_backward, Mat3, Vec3};
use crate::scalar::Real;

/// Upstream gradients with respect to the per-pixel render channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrads<T> {
    pub d_color: Vec<[T; 3]>,
    pub d_alpha: Vec<T>,
    /// With respect to the accumulated depth `Σ ω z`.
    pub d_depth: Vec<T>,
    /// With respect to the accumulated world normal `Σ ω n`.
    pub d_normal: Vec<Vec3<T>>,
}

impl<T: Real> PixelGrads<T> {
    pub fn zeros(n_pixels: usize) -> Self {
        Self {
            d_color: vec![[T::zero(); 3]; n_pixels],
            d_alpha: vec![T::zero(); n_pixels],
            d_depth: vec![T::zero(); n_pixels],
            d_normal: vec![Vec3::zero(); n_pixels],
        }
    }
}

/// Gradients with respect to individual contributor records, aligned with
/// [`RenderOutput::records`]. Used by losses that read `ω` and `z` per ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordGrads<T> {
    pub d_weight: Vec<T>,
    pub d_depth: Vec<T>,
}

impl<T: Real> RecordGrads<T> {
    pub fn zeros(n_records: usize) -> Self {
        Self { d_weight: vec![T::zero(); n_records], d_depth: vec![T::zero(); n_records] }
    }
}

/// Per-Gaussian parameter gradients plus the screen-space statistics used by
/// densification. Screen gradients are in normalized device units.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T> {
    pub means: Vec<[T; 3]>,
    pub raw_scales: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub raw_opacities: Vec<T>,
    pub sh: Vec<T>,
    /// `Σ_pixels ∂L/∂mean2d`.
    pub grad_sum: Vec<[T; 2]>,
    /// `Σ_pixels ‖∂L/∂mean2d‖`.
    pub sum_of_norms: Vec<T>,
    pub contribution_count: Vec<u32>,
    pub visible: Vec<bool>,
}

impl<T: Real> GradBuffer<T> {
    pub fn zeros(cloud: &GaussianCloud<T>) -> Self {
        let k = cloud.len();
        Self {
            means: vec![[T::zero(); 3]; k],
            raw_scales: vec![[T::zero(); 3]; k],
            rotations: vec![[T::zero(); 4]; k],
            raw_opacities: vec![T::zero(); k],
            sh: vec![T::zero(); cloud.sh.len()],
            grad_sum: vec![[T::zero(); 2]; k],
            sum_of_norms: vec![T::zero(); k],
            contribution_count: vec![0; k],
            visible: vec![false; k],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Adds per-Gaussian raw-scale gradients from another loss term.
    pub fn add_raw_scales(&mut self, g: &[[T; 3]]) {
        for (a, b) in self.raw_scales.iter_mut().zip(g) {
            for j in 0..3 {
                a[j] += b[j];
            }
        }
    }

    /// Every parameter gradient as one flat vector, in a fixed order.
    pub fn flatten_params(&self) -> Vec<T> {
        let mut v = Vec::new();
        v.extend(self.means.iter().flatten());
        v.extend(self.raw_scales.iter().flatten());
        v.extend(self.rotations.iter().flatten());
        v.extend(self.raw_opacities.iter());
        v.extend(self.sh.iter());
        v
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc<T> {
    d_uv: [T; 2],
    d_conic: [T; 3],
    d_opacity: T,
    d_color: [T; 3],
    d_depth: T,
    d_normal: [T; 3],
    ndc_sum: [T; 2],
    ndc_norm: T,
    count: u32,
}

impl<T: Real> Acc<T> {
    fn add(&mut self, o: &Self) {
        for i in 0..2 {
            self.d_uv[i] += o.d_uv[i];
            self.ndc_sum[i] += o.ndc_sum[i];
        }
        for i in 0..3 {
            self.d_conic[i] += o.d_conic[i];
            self.d_color[i] += o.d_color[i];
            self.d_normal[i] += o.d_normal[i];
        }
        self.d_opacity += o.d_opacity;
        self.d_depth += o.d_depth;
        self.ndc_norm += o.ndc_norm;
        self.count += o.count;
    }
}

/// Replays blending to produce exact gradients for every Gaussian parameter.
/// The result is identical for any number of worker threads.
pub fn render_backward<T: Real>(
    out: &RenderOutput<T>,
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    grads: &PixelGrads<T>,
    record_grads: Option<&RecordGrads<T>>,
) -> Result<GradBuffer<T>> {
    if out.fingerprint != cloud.fingerprint() || out.projections.len() != cloud.len() {
        return Err(Error::StaleRecords);
    }
    let n = out.width * out.height;
    if grads.d_color.len() != n || grads.d_alpha.len() != n || grads.d_depth.len() != n || grads.d_normal.len() != n {
        return Err(Error::Shape(format!("pixel gradients must have {n} entries")));
    }
    if let Some(rg) = record_grads {
        if rg.d_weight.len() != out.records.len() || rg.d_depth.len() != out.records.len() {
            return Err(Error::Shape(format!("record gradients must have {} entries", out.records.len())));
        }
    }

    let locals: Vec<Vec<Acc<T>>> = (0..out.tile_lists.len())
        .into_par_iter()
        .map(|t| backward_tile(t, out, grads, record_grads))
        .collect();

    let mut acc = vec![Acc::<T>::default(); cloud.len()];
    for (list, local) in out.tile_lists.iter().zip(&locals) {
        for (slot, &k) in list.iter().enumerate() {
            if local[slot].count > 0 {
                acc[k as usize].add(&local[slot]);
            }
        }
    }

    let ncoef = cloud.coeffs_per_gaussian();
    let per: Vec<Option<GaussianGrad<T>>> = (0..cloud.len())
        .into_par_iter()
        .map(|k| out.projections[k].as_ref().map(|p| gaussian_backward(p, &acc[k], cloud.sh_of(k), cloud.sh_degree, cam)))
        .collect();

    let mut buf = GradBuffer::zeros(cloud);
    for (k, g) in per.into_iter().enumerate() {
        let Some(g) = g else { continue };
        buf.means[k] = g.mean;
        buf.raw_scales[k] = g.raw_scales;
        buf.rotations[k] = g.rotation;
        buf.raw_opacities[k] = g.raw_opacity;
        buf.sh[k * ncoef..(k + 1) * ncoef].copy_from_slice(&g.sh);
        buf.grad_sum[k] = acc[k].ndc_sum;
        buf.sum_of_norms[k] = acc[k].ndc_norm;
        buf.contribution_count[k] = acc[k].count;
        buf.visible[k] = true;
    }
    Ok(buf)
}

fn backward_tile<T: Real>(
    t: usize,
    out: &RenderOutput<T>,
    grads: &PixelGrads<T>,
    record_grads: Option<&RecordGrads<T>>,
) -> Vec<Acc<T>> {
    let list = &out.tile_lists[t];
    let mut local = vec![Acc::<T>::default(); list.len()];
    if list.is_empty() {
        return local;
    }
    let (tx, ty) = (t % out.tiles_x, t / out.tiles_x);
    let half = T::lit(0.5);
    let ndc_x = half * T::of_usize(out.width);
    let ndc_y = half * T::of_usize(out.height);
    for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(out.height) {
        for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(out.width) {
            let p = y * out.width + x;
            let d_c = grads.d_color[p];
            let d_a = grads.d_alpha[p];
            let d_d = grads.d_depth[p];
            let d_n = grads.d_normal[p];
            let g_t = d_c[0] * out.background[0] + d_c[1] * out.background[1] + d_c[2] * out.background[2];
            // Σ_{k behind} g_k ω_k + g_T T_final
            let mut behind = g_t * out.final_t[p];
            let (px, py) = (T::of_usize(x) + half, T::of_usize(y) + half);
            for r in out.record_range(p).rev() {
                let rec = &out.records[r];
                let g = out.projections[rec.gaussian as usize].as_ref().unwrap();
                let (extra_w, extra_z) = match record_grads {
                    Some(rg) => (rg.d_weight[r], rg.d_depth[r]),
                    None => (T::zero(), T::zero()),
                };
                let gi = d_c[0] * g.color[0]
                    + d_c[1] * g.color[1]
                    + d_c[2] * g.color[2]
                    + d_a
                    + d_d * g.depth
                    + d_n.dot(g.normal)
                    + extra_w;
                let a = &mut local[rec.slot as usize];
                let w = rec.weight;
                for c in 0..3 {
                    a.d_color[c] += d_c[c] * w;
                    a.d_normal[c] += d_n[c] * w;
                }
                a.d_depth += d_d * w + extra_z;
                a.count += 1;
                let d_alpha = gi * rec.t_before - behind / (T::one() - rec.alpha);
                behind += gi * w;
                if rec.clamped {
                    continue;
                }
                let dx = px - g.mean2d[0];
                let dy = py - g.mean2d[1];
                let q = &g.conic;
                let gauss = (-half * q.quad_form(dx, dy)).exp();
                a.d_opacity += d_alpha * gauss;
                let d_pow = d_alpha * g.opacity * gauss;
                let d_u = d_pow * (q.a * dx + q.b * dy);
                let d_v = d_pow * (q.b * dx + q.c * dy);
                a.d_uv[0] += d_u;
                a.d_uv[1] += d_v;
                a.d_conic[0] -= half * d_pow * dx * dx;
                a.d_conic[1] -= d_pow * dx * dy;
                a.d_conic[2] -= half * d_pow * dy * dy;
                let (nx, ny) = (d_u * ndc_x, d_v * ndc_y);
                a.ndc_sum[0] += nx;
                a.ndc_sum[1] += ny;
                a.ndc_norm += (nx * nx + ny * ny).sqrt();
            }
        }
    }
    local
}

struct GaussianGrad<T> {
    mean: [T; 3],
    raw_scales: [T; 3],
    rotation: [T; 4],
    raw_opacity: T,
    sh: Vec<T>,
}

fn gaussian_backward<T: Real>(
    p: &Projected2DGaussian<T>,
    acc: &Acc<T>,
    sh: &[T],
    sh_degree: usize,
    cam: &Camera<T>,
) -> GaussianGrad<T> {
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let mut d_mu = Vec3::zero();

    let mut d_sh = vec![T::zero(); sh.len()];
    let d_dir = sh_backward(sh_degree, sh, p.view_dir, p.raw_color, acc.d_color, &mut d_sh);
    if p.view_len > T::zero() {
        d_mu += normalize_backward(p.view_dir, p.view_len, d_dir);
    }

    let o = p.opacity;
    let d_raw_opacity = acc.d_opacity * o * (T::one() - o);

    // Conic Q = cov2d⁻¹. The off-diagonal parameter b stands for both entries.
    let q = &p.conic;
    let gq = [[acc.d_conic[0], half * acc.d_conic[1]], [half * acc.d_conic[1], acc.d_conic[2]]];
    let qm = [[q.a, q.b], [q.b, q.c]];
    let mul2 = |a: &[[T; 2]; 2], b: &[[T; 2]; 2]| -> [[T; 2]; 2] {
        let mut r = [[T::zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        r
    };
    let gc = mul2(&mul2(&qm, &gq), &qm).map(|row| row.map(|v| -v));

    // cov2d = M Σ Mᵀ + dilation, M = J W.
    let m = p.jw;
    let mut m_sigma = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            m_sigma[r][c] = (0..3).fold(T::zero(), |s, k| s + m[r][k] * p.cov3d.m[k][c]);
        }
    }
    let mut d_m = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_m[r][c] = two * (gc[r][0] * m_sigma[0][c] + gc[r][1] * m_sigma[1][c]);
        }
    }
    let mut d_sigma = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            let mut s = T::zero();
            for a in 0..2 {
                for b in 0..2 {
                    s += m[a][i] * gc[a][b] * m[b][j];
                }
            }
            d_sigma.m[i][j] = s;
        }
    }

    // dJ = dM Wᵀ, then J and the projected mean back to the camera-space point.
    let w = &cam.rotation;
    let mut d_j = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = (0..3).fold(T::zero(), |s, k| s + d_m[r][k] * w.m[c][k]);
        }
    }
    let (x, y, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
    let zi = T::one() / z;
    let zi2 = zi * zi;
    let zi3 = zi2 * zi;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_p = Vec3::new(
        -fx * zi2 * d_j[0][2],
        -fy * zi2 * d_j[1][2],
        -fx * zi2 * d_j[0][0] + two * fx * x * zi3 * d_j[0][2] - fy * zi2 * d_j[1][1] + two * fy * y * zi3 * d_j[1][2],
    );
    d_p.x += acc.d_uv[0] * fx * zi;
    d_p.y += acc.d_uv[1] * fy * zi;
    d_p.z += -acc.d_uv[0] * fx * x * zi2 - acc.d_uv[1] * fy * y * zi2 + acc.d_depth;
    d_mu += w.transpose().mul_vec(d_p);

    // Σ = L Lᵀ with L = R diag(s).
    let mut d_r = Mat3::zero();
    let ax = p.normal_axis;
    for i in 0..3 {
        d_r.m[i][ax] += p.normal_sign * acc.d_normal[i];
    }
    let d_sym = d_sigma.add(&d_sigma.transpose());
    let mut raw_scales = [T::zero(); 3];
    for j in 0..3 {
        let mut ds = T::zero();
        for i in 0..3 {
            // (dΣ + dΣᵀ) L, column j
            let d_l = (0..3).fold(T::zero(), |s, k| s + d_sym.m[i][k] * p.rot.m[k][j] * p.scales[j]);
            ds += d_l * p.rot.m[i][j];
            d_r.m[i][j] += d_l * p.scales[j];
        }
        raw_scales[j] = ds * p.scales[j];
    }
    let dq_unit = quat_to_mat_backward(p.quat_unit, &d_r);
    let qu = p.quat_unit;
    let dot = (0..4).fold(T::zero(), |s, i| s + qu[i] * dq_unit[i]);
    let rotation = std::array::from_fn(|i| (dq_unit[i] - qu[i] * dot) / p.quat_len);

    GaussianGrad { mean: d_mu.to_array(), raw_scales, rotation, raw_opacity: d_raw_opacity, sh: d_sh }
}
