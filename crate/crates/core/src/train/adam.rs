use crate::gaussian::GaussianCloud;
use crate::raster::GradBuffer;
use crate::scalar::Real;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

/// Per-group learning rates for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates<T> {
    pub means: T,
    pub raw_scales: T,
    pub rotations: T,
    pub raw_opacities: T,
    pub sh_dc: T,
    pub sh_rest: T,
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    stride: usize,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Moments<T> {
    fn new(stride: usize, k: usize) -> Self {
        Self { stride, m: vec![T::zero(); stride * k], v: vec![T::zero(); stride * k] }
    }

    fn remap(&mut self, origin: &[Option<usize>]) {
        let s = self.stride;
        let mut m = vec![T::zero(); s * origin.len()];
        let mut v = vec![T::zero(); s * origin.len()];
        for (new, old) in origin.iter().enumerate() {
            if let Some(old) = *old {
                m[new * s..(new + 1) * s].copy_from_slice(&self.m[old * s..(old + 1) * s]);
                v[new * s..(new + 1) * s].copy_from_slice(&self.v[old * s..(old + 1) * s]);
            }
        }
        self.m = m;
        self.v = v;
    }

    /// Updates `param` in place; `lr_of(j)` gives the rate for element `j` of a row.
    fn step(&mut self, param: &mut [T], grad: &[T], lr_of: impl Fn(usize) -> T, bc1: T, bc2: T) {
        let (b1, b2, eps) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2), T::lit(ADAM_EPS));
        let one = T::one();
        for (i, (p, &g)) in param.iter_mut().zip(grad).enumerate() {
            let m = b1 * self.m[i] + (one - b1) * g;
            let v = b2 * self.v[i] + (one - b2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= lr_of(i % self.stride) * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Adam with first and second moments per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    step: u64,
    means: Moments<T>,
    raw_scales: Moments<T>,
    rotations: Moments<T>,
    raw_opacities: Moments<T>,
    sh: Moments<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(cloud: &GaussianCloud<T>) -> Self {
        let k = cloud.len();
        Self {
            step: 0,
            means: Moments::new(3, k),
            raw_scales: Moments::new(3, k),
            rotations: Moments::new(4, k),
            raw_opacities: Moments::new(1, k),
            sh: Moments::new(cloud.coeffs_per_gaussian(), k),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Carries moments over a densify step; new Gaussians start at zero.
    pub fn remap(&mut self, origin: &[Option<usize>]) {
        self.means.remap(origin);
        self.raw_scales.remap(origin);
        self.rotations.remap(origin);
        self.raw_opacities.remap(origin);
        self.sh.remap(origin);
    }

    pub fn step(&mut self, cloud: &mut GaussianCloud<T>, g: &GradBuffer<T>, lr: &GroupRates<T>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - T::lit(ADAM_BETA1).powi(t);
        let bc2 = T::one() - T::lit(ADAM_BETA2).powi(t);
        self.means.step(cloud.means.as_flattened_mut(), g.means.as_flattened(), |_| lr.means, bc1, bc2);
        self.raw_scales.step(cloud.raw_scales.as_flattened_mut(), g.raw_scales.as_flattened(), |_| lr.raw_scales, bc1, bc2);
        self.rotations.step(cloud.rotations.as_flattened_mut(), g.rotations.as_flattened(), |_| lr.rotations, bc1, bc2);
        self.raw_opacities.step(&mut cloud.raw_opacities, &g.raw_opacities, |_| lr.raw_opacities, bc1, bc2);
        let (dc, rest) = (lr.sh_dc, lr.sh_rest);
        self.sh.step(&mut cloud.sh, &g.sh, |j| if j < 3 { dc } else { rest }, bc1, bc2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianParams;

    fn cloud(k: usize) -> GaussianCloud<f64> {
        GaussianCloud::from_params(
            1,
            (0..k).map(|i| GaussianParams::isotropic([i as f64, 0.0, 0.0], 0.1, 0.5, [0.5; 3], 1)),
        )
        .unwrap()
    }

    fn rates(v: f64) -> GroupRates<f64> {
        GroupRates { means: v, raw_scales: v, rotations: v, raw_opacities: v, sh_dc: v, sh_rest: v }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut c = cloud(2);
        let mut g = GradBuffer::zeros(&c);
        g.means[0] = [3.0, -0.5, 0.0];
        let mut opt = Adam::new(&c);
        opt.step(&mut c, &g, &rates(0.01));
        // Bias-corrected first step is lr·sign(g).
        assert!((c.means[0][0] - (0.0 - 0.01)).abs() < 1e-12);
        assert!((c.means[0][1] - 0.01).abs() < 1e-12);
        assert_eq!(c.means[0][2], 0.0);
        assert_eq!(c.means[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn remap_keeps_survivors_and_zeroes_new() {
        let mut c = cloud(3);
        let mut g = GradBuffer::zeros(&c);
        for k in 0..3 {
            g.raw_opacities[k] = (k + 1) as f64;
        }
        let mut opt = Adam::new(&c);
        opt.step(&mut c, &g, &rates(0.01));
        opt.remap(&[Some(2), None, Some(0)]);
        assert_eq!(opt.raw_opacities.m, vec![(1.0 - 0.9) * 3.0, 0.0, 1.0 - 0.9]);
        assert_eq!(opt.sh.m.len(), 3 * 12);
    }
}
