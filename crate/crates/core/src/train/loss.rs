use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scene::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel<T: Real>() -> [T; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - half;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = raw.iter().sum();
    raw.map(|v| T::lit(v / s))
}

/// Separable Gaussian filter with zero padding. The kernel is symmetric, so
/// the filter is its own adjoint.
fn filter<T: Real>(src: &[T], w: usize, h: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut s = T::zero();
            for (t, &kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for (t, &kv) in k.iter().enumerate() {
            let yy = y as isize + t as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src_row[x];
            }
        }
    }
    out
}

fn channel<T: Real>(img: &Image<T>, c: usize) -> Vec<T> {
    img.data.iter().map(|p| p[c]).collect()
}

fn check_shape<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::Shape(format!(
            "rendered {}x{} vs target {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean SSIM over pixels and channels and, if `grad_scale` is given, the
/// gradient of `grad_scale · SSIM` with respect to `x`.
fn ssim_impl<T: Real>(x: &Image<T>, y: &Image<T>, grad_scale: Option<T>) -> (T, Vec<[T; 3]>) {
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let k = gaussian_kernel::<T>();
    let (c1, c2, two) = (T::lit(C1), T::lit(C2), T::lit(2.0));
    let norm = T::one() / T::of_usize(3 * n);
    let mut total = T::zero();
    let mut grad = vec![[T::zero(); 3]; if grad_scale.is_some() { n } else { 0 }];
    for c in 0..3 {
        let xc = channel(x, c);
        let yc = channel(y, c);
        let xx: Vec<T> = xc.iter().map(|&v| v * v).collect();
        let yy: Vec<T> = yc.iter().map(|&v| v * v).collect();
        let xy: Vec<T> = xc.iter().zip(&yc).map(|(&a, &b)| a * b).collect();
        let mu_x = filter(&xc, w, h, &k);
        let mu_y = filter(&yc, w, h, &k);
        let e_xx = filter(&xx, w, h, &k);
        let e_yy = filter(&yy, w, h, &k);
        let e_xy = filter(&xy, w, h, &k);
        let mut m1 = vec![T::zero(); n];
        let mut m2 = vec![T::zero(); n];
        let mut m3 = vec![T::zero(); n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * sxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if let Some(g) = grad_scale {
                let g = g * norm;
                m1[p] = g * s * (two * my / a1 - two * my / a2 - two * mx / b1 + two * mx / b2);
                m2[p] = -g * s / b2;
                m3[p] = g * two * s / a2;
            }
        }
        if grad_scale.is_some() {
            let f1 = filter(&m1, w, h, &k);
            let f2 = filter(&m2, w, h, &k);
            let f3 = filter(&m3, w, h, &k);
            for p in 0..n {
                grad[p][c] = f1[p] + two * xc[p] * f2[p] + yc[p] * f3[p];
            }
        }
    }
    (total * norm, grad)
}

/// Mean SSIM over pixels and channels (11×11 Gaussian window, σ = 1.5, zero padding).
pub fn ssim<T: Real>(x: &Image<T>, y: &Image<T>) -> Result<T> {
    check_shape(x, y)?;
    Ok(ssim_impl(x, y, None).0)
}

/// `(1 − w)·L1 + w·(1 − SSIM)` and its gradient with respect to `rendered`.
pub fn photometric_loss<T: Real>(rendered: &Image<T>, target: &Image<T>, ssim_weight: T) -> Result<(T, Vec<[T; 3]>)> {
    check_shape(rendered, target)?;
    if !(ssim_weight >= T::zero() && ssim_weight <= T::one()) {
        return Err(Error::Config(format!("ssim weight must lie in [0, 1], got {ssim_weight}")));
    }
    let n = rendered.data.len();
    let l1_scale = (T::one() - ssim_weight) / T::of_usize(3 * n);
    let mut l1 = T::zero();
    let mut grad = vec![[T::zero(); 3]; n];
    for (p, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        for c in 0..3 {
            let d = r[c] - t[c];
            l1 += d.abs();
            grad[p][c] = if d > T::zero() {
                l1_scale
            } else if d < T::zero() {
                -l1_scale
            } else {
                T::zero()
            };
        }
    }
    let l1 = l1 / T::of_usize(3 * n);
    let mut loss = (T::one() - ssim_weight) * l1;
    if ssim_weight > T::zero() {
        let (s, g) = ssim_impl(rendered, target, Some(-ssim_weight));
        loss += ssim_weight * (T::one() - s);
        for (a, b) in grad.iter_mut().zip(&g) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }
    Ok((loss, grad))
}
