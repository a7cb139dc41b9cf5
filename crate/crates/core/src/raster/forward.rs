use rayon::prelude::*;

use super::project::{project_cloud, Projected2DGaussian};
use super::{RasterConfig, TILE_SIZE};
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::math::Vec3;
use crate::scalar::Real;

/// Alpha values above this are clamped.
pub const ALPHA_MAX: f64 = 0.99;
/// Accumulated alpha below which depth and normal are treated as invalid.
pub const ALPHA_VALID: f64 = 1e-3;

/// One Gaussian's contribution to one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor<T> {
    pub gaussian: u32,
    /// Position in the tile's depth-sorted list.
    pub slot: u32,
    /// Effective alpha `min(0.99, α·G)`.
    pub alpha: T,
    /// Blending weight `ω = alpha · T_before`.
    pub weight: T,
    pub t_before: T,
    pub clamped: bool,
}

/// Images produced by one forward pass plus what the backward pass replays.
#[derive(Debug, Clone)]
pub struct RenderOutput<T> {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[T; 3]>,
    /// `Σ ω`.
    pub alpha: Vec<T>,
    /// `Σ ω z`; divide by alpha for the expected depth.
    pub depth_acc: Vec<T>,
    /// `Σ ω n` in world coordinates.
    pub normal_acc: Vec<Vec3<T>>,
    pub final_t: Vec<T>,
    pub projections: Vec<Option<Projected2DGaussian<T>>>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) records: Vec<Contributor<T>>,
    pub(crate) tile_lists: Vec<Vec<u32>>,
    pub(crate) tiles_x: usize,
    pub(crate) fingerprint: u64,
    pub(crate) background: [T; 3],
}

impl<T: Real> RenderOutput<T> {
    pub fn contributors(&self, x: usize, y: usize) -> &[Contributor<T>] {
        let p = y * self.width + x;
        &self.records[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Range of flat record indices for pixel `p`.
    pub fn record_range(&self, p: usize) -> std::ops::Range<usize> {
        self.offsets[p]..self.offsets[p + 1]
    }

    pub fn records(&self) -> &[Contributor<T>] {
        &self.records
    }

    /// Camera-space depth of the Gaussian behind a record.
    pub fn record_depth(&self, r: &Contributor<T>) -> T {
        self.projections[r.gaussian as usize].as_ref().map(|p| p.depth).unwrap_or(T::zero())
    }

    /// Expected depth `Σωz / Σω` and its validity (`Σω > 1e-3`).
    pub fn expected_depth(&self) -> (Vec<T>, Vec<bool>) {
        let thr = T::lit(ALPHA_VALID);
        let valid: Vec<bool> = self.alpha.iter().map(|&a| a > thr).collect();
        let depth = self
            .depth_acc
            .iter()
            .zip(&self.alpha)
            .zip(&valid)
            .map(|((&d, &a), &v)| if v { d / a } else { T::zero() })
            .collect();
        (depth, valid)
    }

    /// Unit world-space normals; invalid where alpha is too small.
    pub fn unit_normals(&self) -> (Vec<Vec3<T>>, Vec<bool>) {
        let thr = T::lit(ALPHA_VALID);
        let mut valid = vec![false; self.alpha.len()];
        let normals = self
            .normal_acc
            .iter()
            .enumerate()
            .map(|(p, n)| match n.normalized() {
                Some(u) if self.alpha[p] > thr => {
                    valid[p] = true;
                    u
                }
                _ => Vec3::zero(),
            })
            .collect();
        (normals, valid)
    }

    pub fn visible_count(&self) -> usize {
        self.projections.iter().filter(|p| p.is_some()).count()
    }
}

struct TileResult<T> {
    color: Vec<[T; 3]>,
    alpha: Vec<T>,
    depth: Vec<T>,
    normal: Vec<Vec3<T>>,
    final_t: Vec<T>,
    counts: Vec<usize>,
    records: Vec<Contributor<T>>,
}

/// Forward splatting of the cloud into `cam`.
pub fn render_forward<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> Result<RenderOutput<T>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cfg.validate()?;
    let projections = project_cloud(cloud, cam)?;
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);

    // Global front-to-back order; index breaks ties so the order is total.
    let mut order: Vec<u32> = (0..cloud.len() as u32).filter(|&k| projections[k as usize].is_some()).collect();
    order.sort_by(|&a, &b| {
        let da = projections[a as usize].as_ref().unwrap().depth;
        let db = projections[b as usize].as_ref().unwrap().depth;
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    let tile = T::of_usize(TILE_SIZE);
    for &k in &order {
        let p = projections[k as usize].as_ref().unwrap();
        let r = cfg.cutoff_sigma * p.sigma_max;
        let range = |c: T, n: usize| -> Option<(usize, usize)> {
            let lo = ((c - r) / tile).floor();
            let hi = ((c + r) / tile).floor();
            let n = T::of_usize(n);
            if hi < T::zero() || lo >= n {
                return None;
            }
            let lo = lo.max(T::zero()).as_f64() as usize;
            let hi = hi.min(n - T::one()).as_f64() as usize;
            Some((lo, hi))
        };
        let (Some((x0, x1)), Some((y0, y1))) = (range(p.mean2d[0], tiles_x), range(p.mean2d[1], tiles_y)) else {
            continue;
        };
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tile_lists[ty * tiles_x + tx].push(k);
            }
        }
    }

    let results: Vec<TileResult<T>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| render_tile(t % tiles_x, t / tiles_x, &tile_lists[t], &projections, w, h, cfg))
        .collect();

    let n = w * h;
    let mut out = RenderOutput {
        width: w,
        height: h,
        color: vec![[T::zero(); 3]; n],
        alpha: vec![T::zero(); n],
        depth_acc: vec![T::zero(); n],
        normal_acc: vec![Vec3::zero(); n],
        final_t: vec![T::one(); n],
        projections,
        offsets: Vec::with_capacity(n + 1),
        records: Vec::with_capacity(results.iter().map(|r| r.records.len()).sum()),
        tile_lists,
        tiles_x,
        fingerprint: cloud.fingerprint(),
        background: cfg.background,
    };
    // Per-tile record starts, so pixels can be gathered in image order.
    let starts: Vec<Vec<usize>> = results
        .iter()
        .map(|r| {
            let mut s = Vec::with_capacity(r.counts.len() + 1);
            s.push(0);
            for c in &r.counts {
                s.push(s.last().unwrap() + c);
            }
            s
        })
        .collect();
    out.offsets.push(0);
    for y in 0..h {
        for x in 0..w {
            let t = (y / TILE_SIZE) * tiles_x + x / TILE_SIZE;
            let l = (y % TILE_SIZE) * TILE_SIZE + x % TILE_SIZE;
            let r = &results[t];
            let p = y * w + x;
            out.color[p] = r.color[l];
            out.alpha[p] = r.alpha[l];
            out.depth_acc[p] = r.depth[l];
            out.normal_acc[p] = r.normal[l];
            out.final_t[p] = r.final_t[l];
            out.records.extend_from_slice(&r.records[starts[t][l]..starts[t][l + 1]]);
            out.offsets.push(out.records.len());
        }
    }
    Ok(out)
}

fn render_tile<T: Real>(
    tx: usize,
    ty: usize,
    list: &[u32],
    proj: &[Option<Projected2DGaussian<T>>],
    w: usize,
    h: usize,
    cfg: &RasterConfig<T>,
) -> TileResult<T> {
    let n = TILE_SIZE * TILE_SIZE;
    let mut res = TileResult {
        color: vec![cfg.background; n],
        alpha: vec![T::zero(); n],
        depth: vec![T::zero(); n],
        normal: vec![Vec3::zero(); n],
        final_t: vec![T::one(); n],
        counts: vec![0; n],
        records: Vec::new(),
    };
    let gauss: Vec<&Projected2DGaussian<T>> = list.iter().map(|&k| proj[k as usize].as_ref().unwrap()).collect();
    let cut = -T::lit(0.5) * cfg.cutoff_sigma * cfg.cutoff_sigma;
    let alpha_max = T::lit(ALPHA_MAX);
    let half = T::lit(0.5);
    for ly in 0..TILE_SIZE {
        let y = ty * TILE_SIZE + ly;
        if y >= h {
            break;
        }
        for lx in 0..TILE_SIZE {
            let x = tx * TILE_SIZE + lx;
            if x >= w {
                break;
            }
            let l = ly * TILE_SIZE + lx;
            let (px, py) = (T::of_usize(x) + half, T::of_usize(y) + half);
            let mut t = T::one();
            let mut col = [T::zero(); 3];
            let mut acc_a = T::zero();
            let mut acc_d = T::zero();
            let mut acc_n = Vec3::zero();
            let mut count = 0;
            for (slot, g) in gauss.iter().enumerate() {
                let dx = px - g.mean2d[0];
                let dy = py - g.mean2d[1];
                let power = -half * g.conic.quad_form(dx, dy);
                if power < cut {
                    continue;
                }
                let raw_alpha = g.opacity * power.exp();
                let clamped = raw_alpha > alpha_max;
                let a = if clamped { alpha_max } else { raw_alpha };
                let next_t = t * (T::one() - a);
                if next_t < cfg.transmittance_min {
                    break;
                }
                let wgt = a * t;
                for c in 0..3 {
                    col[c] += g.color[c] * wgt;
                }
                acc_a += wgt;
                acc_d += g.depth * wgt;
                acc_n += g.normal * wgt;
                res.records.push(Contributor {
                    gaussian: g.gaussian_index as u32,
                    slot: slot as u32,
                    alpha: a,
                    weight: wgt,
                    t_before: t,
                    clamped,
                });
                count += 1;
                t = next_t;
            }
            for c in 0..3 {
                col[c] += t * cfg.background[c];
            }
            res.color[l] = col;
            res.alpha[l] = acc_a;
            res.depth[l] = acc_d;
            res.normal[l] = acc_n;
            res.final_t[l] = t;
            res.counts[l] = count;
        }
    }
    res
}

/// Geometry channels of a render.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNormal<T> {
    pub width: usize,
    pub height: usize,
    /// Expected depth; zero where invalid.
    pub depth: Vec<T>,
    pub valid: Vec<bool>,
    /// Unit world-space normals; zero where invalid.
    pub normals: Vec<Vec3<T>>,
}

pub fn render_depth_normal<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    cfg: &RasterConfig<T>,
) -> Result<DepthNormal<T>> {
    let out = render_forward(cloud, cam, cfg)?;
    let (depth, valid) = out.expected_depth();
    let (normals, _) = out.unit_normals();
    Ok(DepthNormal { width: out.width, height: out.height, depth, valid, normals })
}
