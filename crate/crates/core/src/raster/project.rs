use crate::error::Result;
use crate::gaussian::model::normalize_quat;
use crate::gaussian::sh::{sh_to_color_raw, num_coeffs};
use crate::gaussian::{Camera, GaussianCloud, GaussianParams};
use crate::math::{quat_to_mat, Mat3, Sym2, Vec3};
use crate::scalar::{sigmoid, Real};

/// Screen-space dilation added to both diagonal entries of the 2D covariance.
pub const DILATION: f64 = 0.3;
/// Means farther than this multiple of the half image extent are culled.
pub const GUARD_BAND: f64 = 1.3;

/// A Gaussian after projection, with everything the blending and backward
/// passes need cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2DGaussian<T> {
    pub gaussian_index: usize,
    /// Pixel coordinates of the projected mean.
    pub mean2d: [T; 2],
    pub cov2d: Sym2<T>,
    pub conic: Sym2<T>,
    /// Camera-space z of the mean.
    pub depth: T,
    /// Three-sigma screen radius in pixels.
    pub radius: T,
    pub sigma_max: T,
    pub color: [T; 3],
    pub opacity: T,
    /// Unit world-space normal, facing the camera.
    pub normal: Vec3<T>,
    pub(crate) p_cam: Vec3<T>,
    /// `J·W`, the 2×3 linearized projection.
    pub(crate) jw: [[T; 3]; 2],
    pub(crate) cov3d: Mat3<T>,
    pub(crate) rot: Mat3<T>,
    pub(crate) quat_unit: [T; 4],
    pub(crate) quat_len: T,
    pub(crate) scales: [T; 3],
    pub(crate) raw_color: [T; 3],
    pub(crate) view_dir: Vec3<T>,
    pub(crate) view_len: T,
    pub(crate) normal_axis: usize,
    pub(crate) normal_sign: T,
}

/// Projects one Gaussian; `None` means culled.
pub fn project_gaussian<T: Real>(g: &GaussianParams<T>, cam: &Camera<T>) -> Result<Option<Projected2DGaussian<T>>> {
    let degree = (0..=crate::gaussian::sh::MAX_SH_DEGREE)
        .find(|&d| num_coeffs(d) * 3 == g.sh.len())
        .ok_or_else(|| crate::Error::Shape(format!("{} SH values is not a valid layout", g.sh.len())))?;
    project_parts(0, g.mean, g.raw_scales, g.rotation, g.raw_opacity, &g.sh, degree, cam)
}

pub(crate) fn project_cloud<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
) -> Result<Vec<Option<Projected2DGaussian<T>>>> {
    (0..cloud.len())
        .map(|k| {
            project_parts(
                k,
                cloud.means[k],
                cloud.raw_scales[k],
                cloud.rotations[k],
                cloud.raw_opacities[k],
                cloud.sh_of(k),
                cloud.sh_degree,
                cam,
            )
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn project_parts<T: Real>(
    index: usize,
    mean: [T; 3],
    raw_scales: [T; 3],
    rotation: [T; 4],
    raw_opacity: T,
    sh: &[T],
    sh_degree: usize,
    cam: &Camera<T>,
) -> Result<Option<Projected2DGaussian<T>>> {
    let quat_len = {
        let q = rotation;
        (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
    };
    let quat_unit = normalize_quat(rotation)?;
    let mu = Vec3::from_array(mean);
    let p = cam.world_to_camera(mu);
    if p.z <= cam.near || p.z >= cam.far {
        return Ok(None);
    }
    let (u, v) = cam.project(p);
    let half_w = T::lit(0.5) * T::of_usize(cam.width);
    let half_h = T::lit(0.5) * T::of_usize(cam.height);
    let band = T::lit(GUARD_BAND);
    if (u - half_w).abs() > band * half_w || (v - half_h).abs() > band * half_h {
        return Ok(None);
    }

    let rot = quat_to_mat(quat_unit);
    let scales = raw_scales.map(|s| s.exp());
    let s2 = Vec3::from_array(scales.map(|s| s * s));
    let cov3d = rot.mul_mat(&Mat3::diag(s2)).mul_mat(&rot.transpose());

    let zi = T::one() / p.z;
    let j = [
        [cam.fx * zi, T::zero(), -cam.fx * p.x * zi * zi],
        [T::zero(), cam.fy * zi, -cam.fy * p.y * zi * zi],
    ];
    let w = &cam.rotation;
    let mut jw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = j[r][0] * w.m[0][c] + j[r][1] * w.m[1][c] + j[r][2] * w.m[2][c];
        }
    }
    let t0 = cov3d.mul_vec(Vec3::from_array(jw[0]));
    let t1 = cov3d.mul_vec(Vec3::from_array(jw[1]));
    let dil = T::lit(DILATION);
    let cov2d = Sym2::new(
        Vec3::from_array(jw[0]).dot(t0) + dil,
        Vec3::from_array(jw[0]).dot(t1),
        Vec3::from_array(jw[1]).dot(t1) + dil,
    );
    let Some(conic) = cov2d.inverse() else {
        return Ok(None);
    };
    let sigma_max = cov2d.max_eigenvalue().sqrt();

    let cam_center = cam.center();
    let view = mu - cam_center;
    let view_len = view.norm();
    let view_dir = if view_len > T::zero() { view * (T::one() / view_len) } else { Vec3::new(T::zero(), T::zero(), T::one()) };
    let raw_color = sh_to_color_raw(sh_degree, sh, view_dir);
    let color = raw_color.map(|c| c.max(T::zero()).min(T::one()));

    let mut normal_axis = 0;
    for a in 1..3 {
        if scales[a] <= scales[normal_axis] {
            normal_axis = a;
        }
    }
    let axis = rot.col(normal_axis);
    let normal_sign = if axis.dot(view) > T::zero() { -T::one() } else { T::one() };

    Ok(Some(Projected2DGaussian {
        gaussian_index: index,
        mean2d: [u, v],
        cov2d,
        conic,
        depth: p.z,
        radius: T::lit(3.0) * sigma_max,
        sigma_max,
        color,
        opacity: sigmoid(raw_opacity),
        normal: axis * normal_sign,
        p_cam: p,
        jw,
        cov3d,
        rot,
        quat_unit,
        quat_len,
        scales,
        raw_color,
        view_dir,
        view_len,
        normal_axis,
        normal_sign,
    }))
}
