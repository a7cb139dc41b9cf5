//! Fixed-size vectors and matrices used by the splatting pipeline.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Unit vector, or `None` for a zero-length input.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()), U::lit(self.z.as_f64()))
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> IndexMut<usize> for Vec3<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn zero() -> Self {
        Self { m: [[T::zero(); 3]; 3] }
    }

    pub fn identity() -> Self {
        Self::diag(Vec3::new(T::one(), T::one(), T::one()))
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let mut m = Self::zero();
        m.m[0][0] = d.x;
        m.m[1][1] = d.y;
        m.m[2][2] = d.z;
        m
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc += self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = acc;
            }
        }
        r
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += o.m[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Lower-triangular Cholesky factor, `None` if not positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        let a = &self.m;
        let mut l = Self::zero();
        for i in 0..3 {
            for j in 0..=i {
                let mut sum = a[i][j];
                for k in 0..j {
                    sum -= l.m[i][k] * l.m[j][k];
                }
                if i == j {
                    if sum <= T::zero() || !sum.is_finite() {
                        return None;
                    }
                    l.m[i][i] = sum.sqrt();
                } else {
                    l.m[i][j] = sum / l.m[j][j];
                }
            }
        }
        Some(l)
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }

    pub fn is_orthonormal(&self, tol: T) -> bool {
        self.mul_mat(&self.transpose()).max_abs_diff(&Self::identity()) <= tol
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Real> Sym2<T> {
    pub fn new(a: T, b: T, c: T) -> Self {
        Self { a, b, c }
    }

    pub fn det(&self) -> T {
        self.a * self.c - self.b * self.b
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det <= T::zero() || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some(Self::new(self.c * inv, -self.b * inv, self.a * inv))
    }

    /// Largest eigenvalue.
    pub fn max_eigenvalue(&self) -> T {
        let half = T::lit(0.5);
        let mid = half * (self.a + self.c);
        let disc = (mid * mid - self.det()).max(T::zero()).sqrt();
        mid + disc
    }

    /// `dᵀ M d` for `d = (dx, dy)`.
    #[inline]
    pub fn quad_form(&self, dx: T, dy: T) -> T {
        self.a * dx * dx + T::lit(2.0) * self.b * dx * dy + self.c * dy * dy
    }
}

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quat_to_mat<T: Real>(q: [T; 4]) -> Mat3<T> {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let one = T::one();
    Mat3::from_rows([
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ])
}

/// Pulls a gradient on the rotation matrix back to the unit quaternion.
pub fn quat_to_mat_backward<T: Real>(q: [T; 4], d: &Mat3<T>) -> [T; 4] {
    let [w, x, y, z] = q;
    let g = &d.m;
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let dw = two
        * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    [dw, dx, dy, dz]
}

/// Gradient of `v / |v|` pulled back to `v`, given the unit vector `u` and `|v|`.
#[inline]
pub fn normalize_backward<T: Real>(u: Vec3<T>, len: T, du: Vec3<T>) -> Vec3<T> {
    (du - u * u.dot(du)) * (T::one() / len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_matrix_is_rotation() {
        let n = (1.0_f64 + 4.0 + 9.0 + 16.0).sqrt();
        let q = [1.0 / n, 2.0 / n, 3.0 / n, 4.0 / n];
        let r = quat_to_mat(q);
        assert!(r.is_orthonormal(1e-12));
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = [0.3_f64, -0.5, 0.6, 0.2];
        let weights = Mat3::from_rows([[0.3, -1.0, 0.2], [0.7, 0.1, -0.4], [0.5, 0.9, -0.8]]);
        let f = |q: [f64; 4]| {
            let r = quat_to_mat(q);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += r.m[i][j] * weights.m[i][j];
                }
            }
            s
        };
        let g = quat_to_mat_backward(q, &weights);
        for i in 0..4 {
            let h = 1e-6;
            let mut p = q;
            p[i] += h;
            let mut m = q;
            m[i] -= h;
            let fd = (f(p) - f(m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sym2_inverse_and_eigen() {
        let m = Sym2::new(4.0_f64, 1.0, 3.0);
        let inv = m.inverse().unwrap();
        assert!((m.a * inv.a + m.b * inv.b - 1.0).abs() < 1e-12);
        assert!((m.a * inv.b + m.b * inv.c).abs() < 1e-12);
        let lmax = m.max_eigenvalue();
        assert!((lmax - (3.5 + (0.25_f64 + 1.0).sqrt())).abs() < 1e-12);
        assert!(Sym2::new(1.0_f64, 2.0, 1.0).inverse().is_none());
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(Mat3::<f64>::identity().cholesky().is_some());
        assert!(Mat3::diag(Vec3::new(1.0_f64, -1.0, 1.0)).cholesky().is_none());
    }
}
