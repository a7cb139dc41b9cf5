//! Optimization loop: losses, Adam, density control, metrics and evaluation.

mod adam;
mod loss;

pub use adam::{Adam, GroupRates, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{photometric_loss, ssim, SSIM_SIGMA, SSIM_WINDOW};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::densify::{densify_and_prune, DensifyConfig, DensifyMode, DensifyStats};
use crate::erank::{cloud_eranks, erank_histogram, ErankHistogram, NEEDLE_THRESHOLD};
use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud, GaussianParams};
use crate::math::Vec3;
use crate::raster::{render_backward, render_forward, GradBuffer, PixelGrads, RasterConfig, RecordGrads, RenderOutput};
use crate::regularizers::{
    depth_to_normal, depth_to_normal_backward, erank_loss, erank_schedule_active, normal_consistency_loss,
    ray_distortion, LossBreakdown, LossWeights, NormalMap,
};
use crate::scalar::Real;
use crate::scene::{psnr_from_mse, Image, SceneDataset};

/// Base learning rates. The mean rate is multiplied by the scene extent and
/// decays exponentially from `means` to `means_final` over the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub means: f64,
    pub means_final: f64,
    pub raw_scales: f64,
    pub rotations: f64,
    pub raw_opacities: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            means: 1.6e-4,
            means_final: 1.6e-6,
            raw_scales: 5e-3,
            rotations: 1e-3,
            raw_opacities: 0.05,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        let all = [self.means, self.means_final, self.raw_scales, self.rotations, self.raw_opacities, self.sh_dc, self.sh_rest];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// Rates for iteration `it` of `total`.
    pub fn at<T: Real>(&self, it: usize, total: usize, extent: f64) -> GroupRates<T> {
        let t = (it as f64 / total.max(1) as f64).clamp(0.0, 1.0);
        let means = (self.means.ln() * (1.0 - t) + self.means_final.ln() * t).exp() * extent;
        GroupRates {
            means: T::lit(means),
            raw_scales: T::lit(self.raw_scales),
            rotations: T::lit(self.rotations),
            raw_opacities: T::lit(self.raw_opacities),
            sh_dc: T::lit(self.sh_dc),
            sh_rest: T::lit(self.sh_rest),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub ssim_weight: f64,
    pub lr: LearningRates,
    pub loss: LossWeights<f64>,
    pub erank_enabled: bool,
    pub densify: DensifyConfig<f64>,
    /// `None` picks the revised criterion when erank is enabled, else the original.
    pub densify_mode: Option<DensifyMode>,
    /// Threshold used instead of `densify.tau` under the revised criterion,
    /// whose sum of norms runs larger than the norm of the sum.
    pub tau_revised: f64,
    pub seed: u64,
    pub log_interval: usize,
    /// Write a PLY every this many iterations (0 disables); needs `output_dir`.
    pub snapshot_interval: usize,
    pub histogram_bins: usize,
    pub init_points: usize,
    pub sh_degree: usize,
    pub raster: RasterConfig<f64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            ssim_weight: 0.2,
            lr: LearningRates::default(),
            loss: LossWeights::default(),
            erank_enabled: true,
            densify: DensifyConfig::default(),
            densify_mode: None,
            tau_revised: 8e-4,
            seed: 0,
            log_interval: 500,
            snapshot_interval: 0,
            histogram_bins: crate::erank::DEFAULT_HISTOGRAM_BINS,
            init_points: 1500,
            sh_degree: 0,
            raster: RasterConfig::default(),
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate()?;
        self.loss.validate()?;
        self.densify.validate()?;
        self.raster.validate()?;
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Error::Config(format!("ssim weight must lie in [0, 1], got {}", self.ssim_weight)));
        }
        if !(self.tau_revised > 0.0) {
            return Err(Error::Config(format!("revised densify tau must be positive, got {}", self.tau_revised)));
        }
        if self.log_interval == 0 {
            return Err(Error::Config("log interval must be positive".into()));
        }
        if self.init_points == 0 {
            return Err(Error::Config("need at least one initial point".into()));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config("histogram needs at least 2 bins".into()));
        }
        Ok(())
    }

    pub fn effective_densify_mode(&self) -> DensifyMode {
        self.densify_mode.unwrap_or(if self.erank_enabled { DensifyMode::Revised } else { DensifyMode::Original })
    }
}

/// One logged row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub photometric: f64,
    pub erank: f64,
    pub depth_distortion: f64,
    pub normal: f64,
    pub total: f64,
    pub train_psnr: f64,
    pub test_psnr: Option<f64>,
    pub gaussians: usize,
    pub needles: usize,
    pub mean_erank: f64,
    /// File name of the histogram exported for this row.
    pub histogram: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(Error::Config(format!(
                    "metrics rows must increase in iteration ({} after {})",
                    row.iteration, last.iteration
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

pub fn histogram_file_name(iteration: usize) -> String {
    format!("hist_{iteration:06}.csv")
}

/// Which losses to evaluate for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T> {
    pub ssim_weight: T,
    pub weights: LossWeights<T>,
    pub erank_active: bool,
}

#[derive(Debug, Clone)]
pub struct StepEval<T> {
    pub breakdown: LossBreakdown,
    pub grads: GradBuffer<T>,
    pub render: RenderOutput<T>,
}

pub fn render_image<T: Real>(out: &RenderOutput<T>) -> Image<T> {
    Image { width: out.width, height: out.height, data: out.color.clone() }
}

/// Total loss for one view and its gradient with respect to every raw parameter.
pub fn loss_and_grad<T: Real>(
    cloud: &GaussianCloud<T>,
    cam: &Camera<T>,
    target: &Image<T>,
    spec: &LossSpec<T>,
    raster: &RasterConfig<T>,
) -> Result<StepEval<T>> {
    let out = render_forward(cloud, cam, raster)?;
    let n = out.width * out.height;
    let (photo, d_img) = photometric_loss(&render_image(&out), target, spec.ssim_weight)?;
    let mut pg = PixelGrads::zeros(n);
    pg.d_color = d_img;

    let mut dd_loss = T::zero();
    let mut record_grads = None;
    if spec.weights.lambda_d > T::zero() {
        let mut rg = RecordGrads::zeros(out.records().len());
        let mut w = Vec::new();
        let mut z = Vec::new();
        for p in 0..n {
            let range = out.record_range(p);
            let recs = &out.records()[range.clone()];
            w.clear();
            z.clear();
            w.extend(recs.iter().map(|r| r.weight));
            z.extend(recs.iter().map(|r| out.record_depth(r)));
            dd_loss += ray_distortion(&w, &z, spec.weights.lambda_d, &mut rg.d_weight[range.clone()], &mut rg.d_depth[range]);
        }
        record_grads = Some(rg);
    }

    let mut normal_loss = T::zero();
    if spec.weights.lambda_n > T::zero() {
        normal_loss = normal_glue(&out, cam, spec.weights.lambda_n, &mut pg)?;
    }

    let mut grads = render_backward(&out, cloud, cam, &pg, record_grads.as_ref())?;
    let mut erank = T::zero();
    if spec.erank_active {
        let (l, g) = erank_loss(cloud, &spec.weights)?;
        erank = l;
        grads.add_raw_scales(&g);
    }
    let breakdown = LossBreakdown::new(photo.as_f64(), erank.as_f64(), dd_loss.as_f64(), normal_loss.as_f64());
    Ok(StepEval { breakdown, grads, render: out })
}

/// Normal consistency between rendered normals and normals from rendered
/// depth, both in the camera frame. Writes upstream gradients into `pg`.
fn normal_glue<T: Real>(out: &RenderOutput<T>, cam: &Camera<T>, lambda_n: T, pg: &mut PixelGrads<T>) -> Result<T> {
    let (w, h) = (out.width, out.height);
    let n = w * h;
    let thr = T::lit(crate::raster::ALPHA_VALID);
    let mut rendered = NormalMap { width: w, height: h, normals: vec![Vec3::zero(); n], valid: vec![false; n] };
    let mut norms = vec![T::zero(); n];
    let mut units = vec![Vec3::zero(); n];
    for p in 0..n {
        let acc = out.normal_acc[p];
        let len = acc.norm();
        if out.alpha[p] > thr && len > T::lit(1e-12) {
            norms[p] = len;
            units[p] = acc * (T::one() / len);
            rendered.normals[p] = cam.rotation.mul_vec(units[p]);
            rendered.valid[p] = true;
        }
    }
    let (depth, valid) = out.expected_depth();
    let from_depth = depth_to_normal(&depth, &valid, cam);
    let (loss, d_rendered, d_from_depth) = normal_consistency_loss(&rendered, &from_depth, lambda_n)?;
    let rt = cam.rotation.transpose();
    for p in 0..n {
        if rendered.valid[p] && d_rendered[p].norm_sq() > T::zero() {
            let d_unit = rt.mul_vec(d_rendered[p]);
            pg.d_normal[p] += crate::math::normalize_backward(units[p], norms[p], d_unit);
        }
    }
    let d_depth = depth_to_normal_backward(&depth, &valid, cam, &d_from_depth);
    for p in 0..n {
        if valid[p] && d_depth[p] != T::zero() {
            // depth = depth_acc / alpha
            let a = out.alpha[p];
            pg.d_depth[p] += d_depth[p] / a;
            pg.d_alpha[p] -= d_depth[p] * out.depth_acc[p] / (a * a);
        }
    }
    Ok(loss)
}

/// Random means in the dataset bounds, isotropic scale equal to the mean
/// nearest-neighbor distance, opacity 0.1 and gray color.
pub fn initialize_cloud<T: Real>(dataset: &SceneDataset<T>, n_points: usize, sh_degree: usize, seed: u64) -> Result<GaussianCloud<T>> {
    if n_points == 0 {
        return Err(Error::Config("need at least one initial point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1A17_5EED);
    let lo = dataset.bounds.min.map(|v| v.as_f64());
    let hi = dataset.bounds.max.map(|v| v.as_f64());
    if (0..3).any(|a| !(hi[a] > lo[a])) {
        return Err(Error::Config("dataset bounds are empty".into()));
    }
    let pts: Vec<[f64; 3]> =
        (0..n_points).map(|_| std::array::from_fn(|a| rng.random_range(lo[a]..hi[a]))).collect();
    let scale = if n_points > 1 {
        let mut sum = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let mut best = f64::INFINITY;
            for (j, q) in pts.iter().enumerate() {
                if i != j {
                    let d = (0..3).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>();
                    best = best.min(d);
                }
            }
            sum += best.sqrt();
        }
        (sum / n_points as f64).max(1e-7)
    } else {
        (0..3).map(|a| hi[a] - lo[a]).fold(f64::INFINITY, f64::min) * 0.1
    };
    GaussianCloud::from_params(
        sh_degree,
        pts.iter().map(|p| GaussianParams::isotropic(p.map(T::lit), T::lit(scale), T::lit(0.1), [T::lit(0.5); 3], sh_degree)),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    /// Mean PSNR over the views, in dB.
    pub psnr: f64,
    pub per_view_psnr: Vec<f64>,
    pub images: Vec<Image<T>>,
}

/// Renders `views` and scores them against the dataset images.
pub fn evaluate<T: Real>(
    cloud: &GaussianCloud<T>,
    dataset: &SceneDataset<T>,
    views: &[usize],
    raster: &RasterConfig<T>,
) -> Result<Evaluation<T>> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let mut per_view_psnr = Vec::with_capacity(views.len());
    let mut images = Vec::with_capacity(views.len());
    for &v in views {
        let cam = dataset.cameras.get(v).ok_or_else(|| Error::Shape(format!("view {v} out of range")))?;
        let img = render_image(&render_forward(cloud, cam, raster)?);
        per_view_psnr.push(psnr_from_mse(img.mse(&dataset.images[v])?.as_f64()));
        images.push(img);
    }
    let psnr = per_view_psnr.iter().sum::<f64>() / views.len() as f64;
    Ok(Evaluation { psnr, per_view_psnr, images })
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub cloud: GaussianCloud<T>,
    pub metrics: MetricsLog,
    /// One histogram per metrics row, in the same order.
    pub histograms: Vec<ErankHistogram>,
}

fn cast_densify<T: Real>(c: &DensifyConfig<f64>, mode: DensifyMode, tau: f64) -> DensifyConfig<T> {
    DensifyConfig {
        tau: T::lit(tau),
        mode,
        densify_interval: c.densify_interval,
        start_iter: c.start_iter,
        end_iter: c.end_iter,
        prune_opacity: T::lit(c.prune_opacity),
        percent_dense: T::lit(c.percent_dense),
        split_scale_divisor: T::lit(c.split_scale_divisor),
        max_screen_fraction: T::lit(c.max_screen_fraction),
        clone_nudge: T::lit(c.clone_nudge),
        max_gaussians: c.max_gaussians,
    }
}

fn cast_weights<T: Real>(w: &LossWeights<f64>) -> LossWeights<T> {
    LossWeights {
        lambda_erank: T::lit(w.lambda_erank),
        epsilon: T::lit(w.epsilon),
        lambda_d: T::lit(w.lambda_d),
        lambda_n: T::lit(w.lambda_n),
        erank_start_iter: w.erank_start_iter,
    }
}

fn cast_raster<T: Real>(r: &RasterConfig<f64>) -> RasterConfig<T> {
    RasterConfig {
        cutoff_sigma: T::lit(r.cutoff_sigma),
        transmittance_min: T::lit(r.transmittance_min),
        background: r.background.map(T::lit),
    }
}

/// Optimizes a cloud against the training views of `dataset`.
/// Deterministic for a fixed config and seed.
pub fn train<T: Real>(dataset: &SceneDataset<T>, cfg: &TrainConfig, init: Option<GaussianCloud<T>>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    dataset.validate()?;
    if dataset.train.len() < 2 {
        return Err(Error::Config(format!("need at least 2 training views, got {}", dataset.train.len())));
    }
    let mut cloud = match init {
        Some(c) => c,
        None => initialize_cloud(dataset, cfg.init_points, cfg.sh_degree, cfg.seed)?,
    };
    cloud.validate()?;
    let raster = cast_raster::<T>(&cfg.raster);
    let weights = cast_weights::<T>(&cfg.loss);
    let mode = cfg.effective_densify_mode();
    let tau = if mode == DensifyMode::Revised { cfg.tau_revised } else { cfg.densify.tau };
    let dcfg = cast_densify::<T>(&cfg.densify, mode, tau);
    let extent = dataset.scene_extent().as_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&cloud);
    let mut stats = DensifyStats::new(cloud.len());
    let mut metrics = MetricsLog::default();
    let mut histograms = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut last_densify = 0;

    for it in 1..=cfg.iterations {
        if order.is_empty() {
            order = dataset.train.clone();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = order.pop().expect("non-empty training split");
        let cam = &dataset.cameras[view];
        let spec = LossSpec {
            ssim_weight: T::lit(cfg.ssim_weight),
            weights,
            erank_active: cfg.erank_enabled && erank_schedule_active(it, &weights),
        };
        let step = loss_and_grad(&cloud, cam, &dataset.images[view], &spec, &raster)?;
        if !step.breakdown.is_finite() {
            let snapshot = match &cfg.output_dir {
                Some(dir) => {
                    let path = dir.join(format!("nonfinite_{it:06}.ply"));
                    crate::io::write_ply_file(&cloud, &path)?;
                    Some(path)
                }
                None => None,
            };
            log::error!("non-finite loss at iteration {it}: {:?}", step.breakdown);
            return Err(Error::NonFiniteLoss { iteration: it, snapshot });
        }
        if it <= dcfg.end_iter {
            stats.accumulate(&step.grads, &step.render);
        }
        adam.step(&mut cloud, &step.grads, &cfg.lr.at(it, cfg.iterations, extent));
        cloud.clamp_raw_scales();

        if dcfg.is_densify_step(it) {
            let report = densify_and_prune(
                &mut cloud,
                &mut stats,
                &dcfg,
                T::lit(extent),
                cam.diagonal(),
                &mut rng,
            )?;
            adam.remap(&report.origin);
            last_densify = it;
            log::debug!(
                "iteration {it}: cloned {} split {} pruned {} -> {} Gaussians",
                report.cloned,
                report.split,
                report.pruned,
                cloud.len()
            );
        }

        if it % cfg.log_interval == 0 || it == cfg.iterations {
            let row = log_row(&cloud, dataset, cfg, &raster, it, &step.breakdown, &mut histograms)?;
            if let Some(prev) = metrics.last() {
                let window_clean = last_densify <= prev.iteration;
                if spec.erank_active && window_clean && row.mean_erank < prev.mean_erank {
                    log::warn!(
                        "mean erank decreased from {:.4} to {:.4} between iterations {} and {it}",
                        prev.mean_erank,
                        row.mean_erank,
                        prev.iteration
                    );
                }
            }
            log::info!(
                "iteration {it}: loss {:.5} train PSNR {:.2} Gaussians {} needles {}",
                row.total,
                row.train_psnr,
                row.gaussians,
                row.needles
            );
            metrics.push(row)?;
        }
        if cfg.snapshot_interval > 0 && it % cfg.snapshot_interval == 0 {
            if let Some(dir) = &cfg.output_dir {
                crate::io::write_ply_file(&cloud, &dir.join(format!("snapshot_{it:06}.ply")))?;
            }
        }
    }
    Ok(TrainOutcome { cloud, metrics, histograms })
}

fn log_row<T: Real>(
    cloud: &GaussianCloud<T>,
    dataset: &SceneDataset<T>,
    cfg: &TrainConfig,
    raster: &RasterConfig<T>,
    it: usize,
    b: &LossBreakdown,
    histograms: &mut Vec<ErankHistogram>,
) -> Result<MetricsRow> {
    let train_psnr = evaluate(cloud, dataset, &dataset.train, raster)?.psnr;
    let test_psnr = if dataset.test.is_empty() { None } else { Some(evaluate(cloud, dataset, &dataset.test, raster)?.psnr) };
    let eranks: Vec<f64> = cloud_eranks(cloud).into_iter().map(|e| e.as_f64()).collect();
    let needles = eranks.iter().filter(|&&e| e < NEEDLE_THRESHOLD).count();
    let mean_erank = eranks.iter().sum::<f64>() / eranks.len().max(1) as f64;
    histograms.push(erank_histogram(cloud, cfg.histogram_bins, it)?);
    Ok(MetricsRow {
        iteration: it,
        photometric: b.photometric,
        erank: b.erank,
        depth_distortion: b.depth_distortion,
        normal: b.normal,
        total: b.total,
        train_psnr,
        test_psnr,
        gaussians: cloud.len(),
        needles,
        mean_erank,
        histogram: histogram_file_name(it),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneKind};

    #[test]
    fn zero_iterations_return_initialization() {
        let scene = generate_synthetic_scene::<f64>(SceneKind::Cube, 4, 16, 3).unwrap();
        let cfg = TrainConfig { iterations: 0, init_points: 50, ..TrainConfig::default() };
        let init = initialize_cloud(&scene.dataset, 50, 0, 0).unwrap();
        let out = train(&scene.dataset, &cfg, Some(init.clone())).unwrap();
        assert_eq!(out.cloud, init);
        assert!(out.metrics.rows.is_empty());
    }

    #[test]
    fn initialization_fills_bounds() {
        let scene = generate_synthetic_scene::<f64>(SceneKind::Sphere, 2, 16, 0).unwrap();
        let c = initialize_cloud(&scene.dataset, 200, 0, 5).unwrap();
        assert_eq!(c.len(), 200);
        for k in 0..c.len() {
            assert!(c.means[k].iter().all(|v| v.abs() <= 0.6));
            assert!((c.opacity(k) - 0.1).abs() < 1e-9);
            let s = c.scales(k);
            assert!(s[0] == s[1] && s[1] == s[2] && s[0] > 0.0);
        }
    }

    #[test]
    fn evaluate_errors_and_cap() {
        let scene = generate_synthetic_scene::<f64>(SceneKind::Cube, 4, 16, 0).unwrap();
        let c = initialize_cloud(&scene.dataset, 10, 0, 0).unwrap();
        assert!(matches!(evaluate(&c, &scene.dataset, &[], &RasterConfig::default()), Err(Error::EmptyViews)));
    }

    #[test]
    fn short_run_logs_consistent_rows() {
        let scene = generate_synthetic_scene::<f64>(SceneKind::Cube, 8, 24, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 40,
            log_interval: 10,
            init_points: 100,
            loss: LossWeights { erank_start_iter: 20, lambda_d: 0.001, lambda_n: 0.05, ..LossWeights::default() },
            densify: DensifyConfig { start_iter: 15, end_iter: 30, densify_interval: 15, ..DensifyConfig::default() },
            ..TrainConfig::default()
        };
        let a = train(&scene.dataset, &cfg, None).unwrap();
        assert_eq!(a.metrics.rows.len(), 4);
        for r in &a.metrics.rows {
            let sum = r.photometric + r.erank + r.depth_distortion + r.normal;
            assert!((r.total - sum).abs() <= 1e-9);
        }
        assert_eq!(a.metrics.rows[0].erank, 0.0);
        assert!(a.metrics.rows[3].erank > 0.0);
        assert_eq!(a.histograms.len(), 4);
        let b = train(&scene.dataset, &cfg, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.cloud, b.cloud);
    }

    #[test]
    fn learning_rate_schedule() {
        let lr = LearningRates::default();
        let a: GroupRates<f64> = lr.at(0, 100, 2.0);
        let b: GroupRates<f64> = lr.at(100, 100, 2.0);
        assert!((a.means - 3.2e-4).abs() < 1e-15);
        assert!((b.means - 3.2e-6).abs() < 1e-17);
        assert_eq!(a.raw_scales, 5e-3);
    }
}
