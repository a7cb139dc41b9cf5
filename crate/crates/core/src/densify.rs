//! Adaptive density control: gradient statistics, clone/split, and pruning.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianCloud, GaussianParams};
use crate::math::{quat_to_mat, Vec3};
use crate::raster::{GradBuffer, RenderOutput};
use crate::scalar::Real;
use crate::gaussian::model::normalize_quat;

/// Which screen-gradient statistic is compared against `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensifyMode {
    /// Norm of the summed per-pixel gradient, averaged over views.
    Original,
    /// Sum of per-pixel gradient norms, averaged over views.
    Revised,
}

impl std::str::FromStr for DensifyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "revised" => Ok(Self::Revised),
            other => Err(Error::Config(format!("unknown densify mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for DensifyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Revised => "revised",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyConfig<T> {
    pub tau: T,
    pub mode: DensifyMode,
    pub densify_interval: usize,
    pub start_iter: usize,
    pub end_iter: usize,
    pub prune_opacity: T,
    /// Gaussians larger than this fraction of the scene extent are split.
    pub percent_dense: T,
    pub split_scale_divisor: T,
    /// Screen radius limit as a fraction of the image diagonal.
    pub max_screen_fraction: T,
    /// Clone displacement as a fraction of the scene extent.
    pub clone_nudge: T,
    pub max_gaussians: usize,
}

impl<T: Real> Default for DensifyConfig<T> {
    fn default() -> Self {
        Self {
            tau: T::lit(2e-4),
            mode: DensifyMode::Original,
            densify_interval: 100,
            start_iter: 450,
            end_iter: 1500,
            prune_opacity: T::lit(0.005),
            percent_dense: T::lit(0.01),
            split_scale_divisor: T::lit(1.6),
            max_screen_fraction: T::lit(0.2),
            clone_nudge: T::lit(0.01),
            max_gaussians: 100_000,
        }
    }
}

impl<T: Real> DensifyConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) {
            return Err(Error::Config(format!("densify tau must be positive, got {}", self.tau)));
        }
        if !(self.split_scale_divisor > T::one()) {
            return Err(Error::Config(format!("split divisor must exceed 1, got {}", self.split_scale_divisor)));
        }
        if self.densify_interval == 0 {
            return Err(Error::Config("densify interval must be positive".into()));
        }
        Ok(())
    }

    pub fn is_densify_step(&self, iteration: usize) -> bool {
        iteration >= self.start_iter && iteration <= self.end_iter && iteration % self.densify_interval == 0
    }
}

/// Per-Gaussian statistics accumulated over views between densification steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyStats<T> {
    /// `Σ_views ‖Σ_pixels g‖`.
    pub grad_norm_accum: Vec<T>,
    /// `Σ_views Σ_pixels ‖g‖`.
    pub sum_of_norms: Vec<T>,
    pub observation_count: Vec<u32>,
    pub max_screen_radius: Vec<T>,
    /// Summed world-space gradient of the mean; sets the clone direction.
    pub world_grad: Vec<[T; 3]>,
}

impl<T: Real> DensifyStats<T> {
    pub fn new(k: usize) -> Self {
        Self {
            grad_norm_accum: vec![T::zero(); k],
            sum_of_norms: vec![T::zero(); k],
            observation_count: vec![0; k],
            max_screen_radius: vec![T::zero(); k],
            world_grad: vec![[T::zero(); 3]; k],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_norm_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_norm_accum.is_empty()
    }

    /// Adds one view's statistics.
    pub fn accumulate(&mut self, grads: &GradBuffer<T>, out: &RenderOutput<T>) {
        for k in 0..self.len() {
            if !grads.visible[k] {
                continue;
            }
            let s = grads.grad_sum[k];
            self.grad_norm_accum[k] += (s[0] * s[0] + s[1] * s[1]).sqrt();
            self.sum_of_norms[k] += grads.sum_of_norms[k];
            self.observation_count[k] += 1;
            for j in 0..3 {
                self.world_grad[k][j] += grads.means[k][j];
            }
            if let Some(p) = &out.projections[k] {
                self.max_screen_radius[k] = self.max_screen_radius[k].max(p.radius);
            }
        }
    }

    /// Average criterion value for Gaussian `k`, or `None` without observations.
    pub fn criterion(&self, mode: DensifyMode, k: usize) -> Option<T> {
        let n = self.observation_count[k];
        if n == 0 {
            return None;
        }
        let n = T::of_usize(n as usize);
        Some(match mode {
            DensifyMode::Original => self.grad_norm_accum[k] / n,
            DensifyMode::Revised => self.sum_of_norms[k] / n,
        })
    }
}

pub fn densify_decision<T: Real>(stats: &DensifyStats<T>, cfg: &DensifyConfig<T>, k: usize) -> bool {
    stats.criterion(cfg.mode, k).is_some_and(|v| v > cfg.tau)
}

/// Two children sampled from the parent density, with scales divided by
/// `divisor`. Rotation, opacity and color are inherited unchanged.
pub fn split_gaussian<T: Real, R: Rng>(g: &GaussianParams<T>, divisor: T, rng: &mut R) -> Result<[GaussianParams<T>; 2]> {
    let rot = quat_to_mat(normalize_quat(g.rotation)?);
    let s = g.scales();
    let child = |rng: &mut R| {
        let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let local = Vec3::new(s[0] * T::lit(z[0]), s[1] * T::lit(z[1]), s[2] * T::lit(z[2]));
        let mean = Vec3::from_array(g.mean) + rot.mul_vec(local);
        let mut c = g.clone();
        c.mean = mean.to_array();
        c.raw_scales = s.map(|v| (v / divisor).ln());
        c
    };
    Ok([child(rng), child(rng)])
}

/// The original plus a copy moved by `distance` along `direction` (if any).
pub fn clone_gaussian<T: Real>(g: &GaussianParams<T>, direction: Option<Vec3<T>>, distance: T) -> [GaussianParams<T>; 2] {
    let mut copy = g.clone();
    if let Some(d) = direction.and_then(|d| d.normalized()) {
        copy.mean = (Vec3::from_array(g.mean) + d * distance).to_array();
    }
    [g.clone(), copy]
}

/// Removal mask (true = remove) for low opacity or oversized screen footprint.
pub fn prune_mask<T: Real>(cloud: &GaussianCloud<T>, stats: &DensifyStats<T>, cfg: &DensifyConfig<T>, image_diagonal: T) -> Vec<bool> {
    let radius_limit = cfg.max_screen_fraction * image_diagonal;
    (0..cloud.len())
        .map(|k| cloud.opacity(k) < cfg.prune_opacity || stats.max_screen_radius.get(k).is_some_and(|&r| r > radius_limit))
        .collect()
}

/// Removes pruned Gaussians, keeping survivor order. Fails rather than empty the cloud.
pub fn prune<T: Real>(
    cloud: &mut GaussianCloud<T>,
    stats: &mut DensifyStats<T>,
    cfg: &DensifyConfig<T>,
    image_diagonal: T,
) -> Result<Vec<bool>> {
    let remove = prune_mask(cloud, stats, cfg, image_diagonal);
    let keep: Vec<bool> = remove.iter().map(|r| !r).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::PruneAll);
    }
    cloud.retain_mask(&keep);
    stats.retain(&keep);
    Ok(keep)
}

impl<T: Real> DensifyStats<T> {
    fn retain(&mut self, keep: &[bool]) {
        use crate::gaussian::model::retain_by;
        retain_by(&mut self.grad_norm_accum, keep);
        retain_by(&mut self.sum_of_norms, keep);
        retain_by(&mut self.observation_count, keep);
        retain_by(&mut self.max_screen_radius, keep);
        retain_by(&mut self.world_grad, keep);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// For each Gaussian after the step, the index it had before, or `None` if new.
    pub origin: Vec<Option<usize>>,
}

/// Clones, splits and prunes, then resets the statistics.
pub fn densify_and_prune<T: Real, R: Rng>(
    cloud: &mut GaussianCloud<T>,
    stats: &mut DensifyStats<T>,
    cfg: &DensifyConfig<T>,
    scene_extent: T,
    image_diagonal: T,
    rng: &mut R,
) -> Result<DensifyReport> {
    let k0 = cloud.len();
    let mut selected: Vec<usize> = (0..k0).filter(|&k| densify_decision(stats, cfg, k)).collect();
    let room = cfg.max_gaussians.saturating_sub(k0);
    if selected.len() > room {
        // Keep the strongest candidates; ties resolve by index for determinism.
        selected.sort_by(|&a, &b| {
            let (va, vb) = (stats.criterion(cfg.mode, a).unwrap(), stats.criterion(cfg.mode, b).unwrap());
            vb.partial_cmp(&va).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        selected.truncate(room);
        selected.sort_unstable();
    }
    let size_gate = cfg.percent_dense * scene_extent;
    let mut origin: Vec<Option<usize>> = (0..k0).map(Some).collect();
    let mut remove = vec![false; k0];
    let mut report = DensifyReport::default();
    for &k in &selected {
        let g = cloud.get(k);
        let s = g.scales();
        if s[0].max(s[1]).max(s[2]) > size_gate {
            for child in split_gaussian(&g, cfg.split_scale_divisor, rng)? {
                cloud.push(child)?;
                origin.push(None);
            }
            remove[k] = true;
            report.split += 1;
        } else {
            let dir = Vec3::from_array(stats.world_grad[k]) * -T::one();
            let [_, copy] = clone_gaussian(&g, Some(dir), cfg.clone_nudge * scene_extent);
            cloud.push(copy)?;
            origin.push(None);
            report.cloned += 1;
        }
    }
    let k1 = cloud.len();
    let mut fresh = DensifyStats::new(k1);
    fresh.max_screen_radius[..k0].copy_from_slice(&stats.max_screen_radius);
    let mut prune_remove = prune_mask(cloud, &fresh, cfg, image_diagonal);
    for k in 0..k0 {
        prune_remove[k] |= remove[k];
    }
    let keep: Vec<bool> = prune_remove.iter().map(|r| !r).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::PruneAll);
    }
    report.pruned = keep.iter().filter(|&&k| !k).count() - report.split;
    cloud.retain_mask(&keep);
    crate::gaussian::model::retain_by(&mut origin, &keep);
    *stats = DensifyStats::new(cloud.len());
    report.origin = origin;
    Ok(report)
}
