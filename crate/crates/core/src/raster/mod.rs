//! Tile-based differentiable splatting on the CPU.
//!
//! Gaussians are projected with the EWA linearization, sorted globally by
//! depth, binned into 16×16 tiles, and alpha-blended front to back. Every
//! pixel keeps its list of contributors so the backward pass can replay the
//! blend exactly.

mod backward;
mod forward;
mod project;

pub use backward::{render_backward, GradBuffer, PixelGrads, RecordGrads};
pub use forward::{
    render_depth_normal, render_forward, Contributor, DepthNormal, RenderOutput, ALPHA_MAX, ALPHA_VALID,
};
pub use project::{project_gaussian, Projected2DGaussian, DILATION, GUARD_BAND};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig<T> {
    /// Gaussians are ignored beyond this many standard deviations, both in
    /// the per-pixel test and when binning into tiles.
    pub cutoff_sigma: T,
    /// A pixel stops accumulating once transmittance would drop below this.
    pub transmittance_min: T,
    pub background: [T; 3],
}

impl<T: Real> Default for RasterConfig<T> {
    fn default() -> Self {
        Self { cutoff_sigma: T::lit(3.0), transmittance_min: T::lit(1e-4), background: [T::zero(); 3] }
    }
}

impl<T: Real> RasterConfig<T> {
    /// Effectively untruncated blending: the render is then a smooth function
    /// of the parameters, which finite-difference checks rely on.
    pub fn exact() -> Self {
        Self { cutoff_sigma: T::lit(9.0), transmittance_min: T::zero(), ..Self::default() }
    }

    pub fn with_background(mut self, bg: [T; 3]) -> Self {
        self.background = bg;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_sigma > T::zero()) || self.transmittance_min < T::zero() {
            return Err(Error::Config("raster cutoff must be positive and transmittance_min non-negative".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Camera, GaussianCloud, GaussianParams};
    use crate::math::{Mat3, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: usize, h: usize, f: f64) -> Camera<f64> {
        Camera::new(w, h, f, f, w as f64 / 2.0, h as f64 / 2.0, Mat3::identity(), Vec3::zero(), 0.01, 100.0).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, degree: usize) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::empty(degree).unwrap();
        for _ in 0..n {
            let mut p = GaussianParams::isotropic(
                [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(2.5..4.0)],
                1.0,
                rng.random_range(0.2..0.8),
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                degree,
            );
            p.raw_scales = std::array::from_fn(|_| rng.random_range(-2.5..-1.2));
            p.rotation = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            for v in p.sh.iter_mut().skip(3) {
                *v = rng.random_range(-0.1..0.1);
            }
            c.push(p).unwrap();
        }
        c
    }

    #[test]
    fn clamped_single_gaussian_over_background() {
        let mut c = GaussianCloud::empty(0).unwrap();
        c.push(GaussianParams::isotropic([0.0, 0.0, 2.0], 0.2, 0.999_999, [0.8, 0.4, 0.2], 0)).unwrap();
        let camera = cam(16, 16, 20.0);
        let bg = [0.1, 0.2, 0.3];
        let out = render_forward(&c, &camera, &RasterConfig::default().with_background(bg)).unwrap();
        // Mean projects to (8, 8), the corner of pixel (7, 7); use a centered camera instead.
        let camera = Camera { cx: 8.5, cy: 8.5, ..camera };
        let out2 = render_forward(&c, &camera, &RasterConfig::default().with_background(bg)).unwrap();
        let p = 8 * 16 + 8;
        for ch in 0..3 {
            let expected = [0.8, 0.4, 0.2][ch] * 0.99 + 0.01 * bg[ch];
            assert!((out2.color[p][ch] - expected).abs() < 1e-6);
        }
        assert!(out.alpha.iter().all(|&a| a <= 0.99 + 1e-12));
    }

    #[test]
    fn two_colocated_half_alphas() {
        // Tiny footprint: G = 1 at the pixel center; opacity 0.5 gives α' = 0.5.
        let camera = Camera { cx: 8.5, cy: 8.5, ..cam(16, 16, 20.0) };
        let mut c = GaussianCloud::empty(0).unwrap();
        c.push(GaussianParams::isotropic([0.0, 0.0, 2.0], 1e-3, 0.5, [1.0, 0.0, 0.0], 0)).unwrap();
        c.push(GaussianParams::isotropic([0.0, 0.0, 2.0 + 1e-9], 1e-3, 0.5, [0.0, 1.0, 0.0], 0)).unwrap();
        let bg = [0.0, 0.0, 1.0];
        let out = render_forward(&c, &camera, &RasterConfig::default().with_background(bg)).unwrap();
        let col = out.color[8 * 16 + 8];
        assert!((col[0] - 0.5).abs() < 1e-9 && (col[1] - 0.25).abs() < 1e-9 && (col[2] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn zero_opacity_renders_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = random_cloud(&mut rng, 5, 0);
        c.raw_opacities.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
        let bg = [0.3, 0.6, 0.9];
        let out = render_forward(&c, &cam(20, 20, 20.0), &RasterConfig::default().with_background(bg)).unwrap();
        assert!(out.color.iter().all(|c| *c == bg));
        assert!(out.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn all_culled_and_empty() {
        let mut c = GaussianCloud::empty(0).unwrap();
        c.push(GaussianParams::isotropic([0.0, 0.0, -3.0], 0.2, 0.5, [1.0; 3], 0)).unwrap();
        let out = render_forward(&c, &cam(8, 8, 10.0), &RasterConfig::default()).unwrap();
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        let empty = GaussianCloud::<f64>::empty(0).unwrap();
        assert!(matches!(render_forward(&empty, &cam(8, 8, 10.0), &RasterConfig::default()), Err(Error::EmptyCloud)));
    }

    #[test]
    fn weights_conserve_and_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_cloud(&mut rng, 40, 1);
        let camera = cam(40, 36, 40.0);
        let cfg = RasterConfig::default();
        let out = render_forward(&c, &camera, &cfg).unwrap();
        for p in 0..out.alpha.len() {
            assert!((out.alpha[p] + out.final_t[p] - 1.0).abs() < 1e-6);
            assert!(out.alpha[p] >= 0.0 && out.alpha[p] <= 1.0);
        }
        let mut perm: Vec<usize> = (0..c.len()).collect();
        perm.reverse();
        perm.swap(3, 17);
        let shuffled = GaussianCloud::from_params(1, perm.iter().map(|&k| c.get(k))).unwrap();
        let out2 = render_forward(&shuffled, &camera, &cfg).unwrap();
        for p in 0..out.color.len() {
            for ch in 0..3 {
                assert!((out.color[p][ch] - out2.color[p][ch]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn depth_and_normal_of_disk() {
        let camera = Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), 32, 32, 0.9)
            .unwrap();
        let mut c = GaussianCloud::empty(0).unwrap();
        let mut g = GaussianParams::isotropic([0.0; 3], 0.3, 0.9, [0.5; 3], 0);
        g.raw_scales[2] = (1e-4_f64).ln();
        c.push(g).unwrap();
        let dn = render_depth_normal(&c, &camera, &RasterConfig::default()).unwrap();
        let mut n_valid = 0;
        for p in 0..dn.depth.len() {
            if dn.valid[p] {
                n_valid += 1;
                assert!((dn.depth[p] - 2.0).abs() < 1e-3);
                assert!((dn.normals[p] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-9);
            }
        }
        assert!(n_valid > 50);
        assert!(!dn.valid[0]);
    }

    fn l1_grads(out: &RenderOutput<f64>, target: &[[f64; 3]]) -> (f64, PixelGrads<f64>) {
        let n = out.color.len();
        let mut g = PixelGrads::zeros(n);
        let mut loss = 0.0;
        let norm = 1.0 / (3 * n) as f64;
        for p in 0..n {
            for ch in 0..3 {
                let d = out.color[p][ch] - target[p][ch];
                loss += d.abs() * norm;
                g.d_color[p][ch] = d.signum() * norm;
            }
        }
        (loss, g)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 6, 2);
        let camera = cam(24, 24, 30.0);
        let cfg = RasterConfig::exact();
        // Targets above every rendered value keep the L1 sign fixed.
        let target: Vec<[f64; 3]> = (0..24 * 24).map(|_| [rng.random_range(0.95..1.0); 3]).collect();
        let out = render_forward(&cloud, &camera, &cfg).unwrap();
        let (_, pg) = l1_grads(&out, &target);
        let g = render_backward(&out, &cloud, &camera, &pg, None).unwrap();
        let loss = |c: &GaussianCloud<f64>| l1_grads(&render_forward(c, &camera, &cfg).unwrap(), &target).0;
        let h = 1e-5;
        let check = |analytic: f64, mut set: Box<dyn FnMut(&mut GaussianCloud<f64>, f64)>| {
            let mut p = cloud.clone();
            set(&mut p, h);
            let mut m = cloud.clone();
            set(&mut m, -h);
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let err = (fd - analytic).abs();
            assert!(err <= 1e-3 * fd.abs().max(analytic.abs()) || err < 1e-8, "fd {fd} analytic {analytic}");
        };
        for k in 0..cloud.len() {
            for j in 0..3 {
                check(g.means[k][j], Box::new(move |c, d| c.means[k][j] += d));
                check(g.raw_scales[k][j], Box::new(move |c, d| c.raw_scales[k][j] += d));
            }
            for j in 0..4 {
                check(g.rotations[k][j], Box::new(move |c, d| c.rotations[k][j] += d));
            }
            check(g.raw_opacities[k], Box::new(move |c, d| c.raw_opacities[k] += d));
            let n = cloud.coeffs_per_gaussian();
            for j in 0..n {
                check(g.sh[k * n + j], Box::new(move |c, d| c.sh[k * n + j] += d));
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = random_cloud(&mut rng, 20, 1);
        let camera = cam(32, 32, 30.0);
        let out = render_forward(&cloud, &camera, &RasterConfig::default()).unwrap();
        let g = render_backward(&out, &cloud, &camera, &PixelGrads::zeros(32 * 32), None).unwrap();
        assert!(g.flatten_params().iter().all(|&v| v == 0.0));

        let mut pg = PixelGrads::zeros(32 * 32);
        for p in 0..32 * 32 {
            pg.d_color[p] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        }
        let g = render_backward(&out, &cloud, &camera, &pg, None).unwrap();
        for k in 0..cloud.len() {
            let s = g.grad_sum[k];
            assert!(g.sum_of_norms[k] >= (s[0] * s[0] + s[1] * s[1]).sqrt() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn opposing_pixel_gradients_cancel_in_sum() {
        // One Gaussian centered between two pixels; pushing their colors in the
        // same direction pulls the mean both ways.
        let camera = Camera { cx: 8.0, cy: 8.5, ..cam(16, 16, 20.0) };
        let mut cloud = GaussianCloud::empty(0).unwrap();
        cloud.push(GaussianParams::isotropic([0.0, 0.0, 2.0], 0.05, 0.5, [0.6; 3], 0)).unwrap();
        let out = render_forward(&cloud, &camera, &RasterConfig::default()).unwrap();
        let mut pg = PixelGrads::zeros(256);
        pg.d_color[8 * 16 + 7] = [1.0; 3];
        pg.d_color[8 * 16 + 8] = [1.0; 3];
        let g = render_backward(&out, &cloud, &camera, &pg, None).unwrap();
        let s = g.grad_sum[0];
        assert!((s[0] * s[0] + s[1] * s[1]).sqrt() < 1e-9 * g.sum_of_norms[0]);
        assert!(g.sum_of_norms[0] > 1e-3);
    }

    #[test]
    fn stale_records_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cloud = random_cloud(&mut rng, 3, 0);
        let camera = cam(16, 16, 20.0);
        let out = render_forward(&cloud, &camera, &RasterConfig::default()).unwrap();
        cloud.means[0][0] += 0.01;
        let r = render_backward(&out, &cloud, &camera, &PixelGrads::zeros(256), None);
        assert!(matches!(r, Err(Error::StaleRecords)));
    }

    #[test]
    fn supersampled_render_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cloud = random_cloud(&mut rng, 30, 0);
        let cfg = RasterConfig::default();
        let lo = render_forward(&cloud, &cam(32, 32, 32.0), &cfg).unwrap();
        let hi = render_forward(&cloud, &cam(64, 64, 64.0), &cfg).unwrap();
        let mut mae = 0.0;
        for y in 0..32 {
            for x in 0..32 {
                for ch in 0..3 {
                    let mut s = 0.0;
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        s += hi.color[(2 * y + dy) * 64 + 2 * x + dx][ch];
                    }
                    mae += (s / 4.0 - lo.color[y * 32 + x][ch]).abs();
                }
            }
        }
        assert!(mae / (32.0 * 32.0 * 3.0) < 0.05);
    }

    #[test]
    fn backward_is_deterministic_across_thread_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = random_cloud(&mut rng, 50, 1);
        let camera = cam(48, 40, 40.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let out = render_forward(&cloud, &camera, &RasterConfig::default()).unwrap();
                let mut pg = PixelGrads::zeros(48 * 40);
                for (p, d) in pg.d_color.iter_mut().enumerate() {
                    *d = [(p % 7) as f64 - 3.0, 0.5, -((p % 3) as f64)];
                }
                render_backward(&out, &cloud, &camera, &pg, None).unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }
}
