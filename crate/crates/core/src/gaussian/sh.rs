//! Real spherical harmonics up to degree 2, in the basis and sign convention
//! used by 3DGS checkpoints.

use crate::math::Vec3;
use crate::scalar::Real;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

pub const MAX_SH_DEGREE: usize = 2;

/// Coefficients per color channel for a given degree.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Inverse of [`num_coeffs`].
pub fn degree_from_coeffs(n: usize) -> Option<usize> {
    (0..=MAX_SH_DEGREE).find(|&d| num_coeffs(d) == n)
}

/// Basis values for a unit direction; entries past `num_coeffs(degree)` are zero.
pub fn basis<T: Real>(degree: usize, d: Vec3<T>) -> [T; 9] {
    let mut b = [T::zero(); 9];
    b[0] = T::lit(SH_C0);
    if degree >= 1 {
        let c1 = T::lit(SH_C1);
        b[1] = -c1 * d.y;
        b[2] = c1 * d.z;
        b[3] = -c1 * d.x;
    }
    if degree >= 2 {
        let (x, y, z) = (d.x, d.y, d.z);
        b[4] = T::lit(SH_C2[0]) * x * y;
        b[5] = T::lit(SH_C2[1]) * y * z;
        b[6] = T::lit(SH_C2[2]) * (T::lit(2.0) * z * z - x * x - y * y);
        b[7] = T::lit(SH_C2[3]) * x * z;
        b[8] = T::lit(SH_C2[4]) * (x * x - y * y);
    }
    b
}

/// Jacobian rows `∂basis_i/∂d`.
fn basis_grad<T: Real>(degree: usize, d: Vec3<T>) -> [Vec3<T>; 9] {
    let z = T::zero();
    let mut g = [Vec3::new(z, z, z); 9];
    if degree >= 1 {
        let c1 = T::lit(SH_C1);
        g[1] = Vec3::new(z, -c1, z);
        g[2] = Vec3::new(z, z, c1);
        g[3] = Vec3::new(-c1, z, z);
    }
    if degree >= 2 {
        let two = T::lit(2.0);
        let (x, y, w) = (d.x, d.y, d.z);
        let c = |i: usize| T::lit(SH_C2[i]);
        g[4] = Vec3::new(c(0) * y, c(0) * x, z);
        g[5] = Vec3::new(z, c(1) * w, c(1) * y);
        g[6] = Vec3::new(-two * c(2) * x, -two * c(2) * y, T::lit(4.0) * c(2) * w);
        g[7] = Vec3::new(c(3) * w, z, c(3) * x);
        g[8] = Vec3::new(two * c(4) * x, -two * c(4) * y, z);
    }
    g
}

/// Evaluates view-dependent RGB. `coeffs` is laid out `[coeff][channel]`.
/// The direction is normalized internally; zero directions fall back to `+z`.
pub fn sh_to_color<T: Real>(degree: usize, coeffs: &[T], view_dir: Vec3<T>) -> [T; 3] {
    sh_to_color_raw(degree, coeffs, unit_or_z(view_dir)).map(|v| v.max(T::zero()).min(T::one()))
}

/// Color before clamping to `[0, 1]`.
pub(crate) fn sh_to_color_raw<T: Real>(degree: usize, coeffs: &[T], dir: Vec3<T>) -> [T; 3] {
    let b = basis(degree, dir);
    let n = num_coeffs(degree);
    let mut out = [T::lit(0.5); 3];
    for (i, bi) in b.iter().enumerate().take(n) {
        for (c, o) in out.iter_mut().enumerate() {
            *o += *bi * coeffs[i * 3 + c];
        }
    }
    out
}

fn unit_or_z<T: Real>(d: Vec3<T>) -> Vec3<T> {
    d.normalized().unwrap_or(Vec3::new(T::zero(), T::zero(), T::one()))
}

/// Backward of the clamped color for a unit direction. Accumulates into
/// `d_coeffs` and returns the gradient with respect to the unit direction.
pub(crate) fn sh_backward<T: Real>(
    degree: usize,
    coeffs: &[T],
    dir: Vec3<T>,
    raw_color: [T; 3],
    d_color: [T; 3],
    d_coeffs: &mut [T],
) -> Vec3<T> {
    let n = num_coeffs(degree);
    let mut dc = d_color;
    for c in 0..3 {
        if raw_color[c] < T::zero() || raw_color[c] > T::one() {
            dc[c] = T::zero();
        }
    }
    let b = basis(degree, dir);
    for i in 0..n {
        for c in 0..3 {
            d_coeffs[i * 3 + c] += b[i] * dc[c];
        }
    }
    let g = basis_grad(degree, dir);
    let mut d_dir = Vec3::zero();
    for i in 1..n {
        let mut s = T::zero();
        for c in 0..3 {
            s += coeffs[i * 3 + c] * dc[c];
        }
        d_dir += g[i] * s;
    }
    d_dir
}

/// DC coefficient reproducing a constant color.
pub fn rgb_to_dc<T: Real>(rgb: T) -> T {
    (rgb - T::lit(0.5)) / T::lit(SH_C0)
}
