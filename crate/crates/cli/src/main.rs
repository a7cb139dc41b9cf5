use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use erank_splat::erank::{erank_histogram, summarize, DEFAULT_HISTOGRAM_BINS, NEEDLE_THRESHOLD};
use erank_splat::io::{
    depth_to_image, export_histogram_csv, export_metrics_csv, normals_to_image, read_cameras, read_config,
    read_dataset, read_ply_file, write_dataset, write_obj, write_ply_file, write_png, DataSource, Precision,
    RunConfig,
};
use erank_splat::mesh::{extract_mesh, mesh_surface_error, DEFAULT_VOLUME_RESOLUTION};
use erank_splat::raster::{render_depth_normal, render_forward, RasterConfig};
use erank_splat::scene::{generate_synthetic_scene, SceneDataset, SceneKind, SurfaceDescriptor};
use erank_splat::train::{histogram_file_name, render_image, train};
use erank_splat::{GaussianCloud, Real};

#[derive(Parser)]
#[command(name = "erank-splat", version, about = "Gaussian splatting with effective-rank regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; writes the PLY, metrics and histograms.
    Train { config: PathBuf },
    /// Effective-rank statistics and needle count of a checkpoint.
    Analyze {
        ply: PathBuf,
        #[arg(long, default_value_t = NEEDLE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        /// Histogram CSV path (defaults to `<ply>.hist.csv`).
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Render a checkpoint from a camera file.
    Render {
        ply: PathBuf,
        cameras: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = RenderMode::Color)]
        mode: RenderMode,
        /// Which camera in the file to use.
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Fuse rendered depth from every dataset camera and extract a mesh.
    Mesh {
        ply: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_VOLUME_RESOLUTION)]
        resolution: usize,
    },
    /// Paired needle report for two checkpoints (baseline first).
    Compare {
        baseline: PathBuf,
        regularized: PathBuf,
        #[arg(long, default_value_t = NEEDLE_THRESHOLD)]
        threshold: f64,
    },
    /// Write a synthetic dataset directory.
    GenScene {
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        views: usize,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderMode {
    Color,
    Depth,
    Normal,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Train { config } => {
            let rc = read_config(&config).with_context(|| format!("reading {}", config.display()))?;
            match rc.precision {
                Precision::F32 => run_train::<f32>(&rc),
                Precision::F64 => run_train::<f64>(&rc),
            }
        }
        Command::Analyze { ply, threshold, bins, hist } => analyze(&ply, threshold, bins, hist),
        Command::Render { ply, cameras, out, mode, index } => render(&ply, &cameras, &out, mode, index),
        Command::Mesh { ply, dataset, out, resolution } => mesh(&ply, &dataset, &out, resolution),
        Command::Compare { baseline, regularized, threshold } => compare(&baseline, &regularized, threshold),
        Command::GenScene { kind, out, views, resolution, seed } => {
            let kind: SceneKind = kind.parse()?;
            let scene = generate_synthetic_scene::<f64>(kind, views, resolution, seed)?;
            write_dataset(&scene.dataset, Some(&scene.surface), &out)?;
            println!(
                "wrote {kind} scene to {} ({} train / {} test views)",
                out.display(),
                scene.dataset.train.len(),
                scene.dataset.test.len()
            );
            Ok(())
        }
    }
}

fn load_dataset<T: Real>(data: &DataSource) -> anyhow::Result<(SceneDataset<T>, Option<SurfaceDescriptor>)> {
    Ok(match data {
        DataSource::Synthetic { kind, views, resolution, seed } => {
            let s = generate_synthetic_scene::<f64>(*kind, *views, *resolution, *seed)?;
            (s.dataset.cast(), Some(s.surface))
        }
        DataSource::Directory(dir) => read_dataset(dir).with_context(|| format!("reading dataset {}", dir.display()))?,
    })
}

fn run_train<T: Real>(rc: &RunConfig) -> anyhow::Result<()> {
    let (dataset, _) = load_dataset::<T>(&rc.data)?;
    let dir = &rc.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut cfg = rc.train.clone();
    cfg.output_dir = Some(dir.clone());
    let out = train(&dataset, &cfg, None)?;
    write_ply_file(&out.cloud, &dir.join("point_cloud.ply"))?;
    export_metrics_csv(&out.metrics, &dir.join("metrics.csv"))?;
    for h in &out.histograms {
        export_histogram_csv(h, &dir.join(histogram_file_name(h.iteration)))?;
    }
    match out.metrics.last() {
        Some(r) => println!(
            "iteration {}: {} Gaussians, {} needles, train PSNR {:.2}, test PSNR {}",
            r.iteration,
            r.gaussians,
            r.needles,
            r.train_psnr,
            r.test_psnr.map_or("n/a".into(), |p| format!("{p:.2}"))
        ),
        None => println!("0 iterations: wrote initialization with {} Gaussians", out.cloud.len()),
    }
    println!("outputs in {}", dir.display());
    Ok(())
}

fn load_cloud(path: &Path) -> anyhow::Result<GaussianCloud<f64>> {
    read_ply_file(path).with_context(|| format!("reading {}", path.display()))
}

fn check_threshold(threshold: f64) -> anyhow::Result<()> {
    if !(threshold > 1.0 && threshold < 3.0) {
        bail!("needle threshold must lie in (1, 3), got {threshold}");
    }
    Ok(())
}

fn analyze(ply: &Path, threshold: f64, bins: usize, hist: Option<PathBuf>) -> anyhow::Result<()> {
    check_threshold(threshold)?;
    let cloud = load_cloud(ply)?;
    let s = summarize(&cloud, threshold);
    let h = erank_histogram(&cloud, bins, 0)?;
    let hist = hist.unwrap_or_else(|| ply.with_extension("hist.csv"));
    export_histogram_csv(&h, &hist)?;
    println!("gaussians: {}", s.count);
    println!("needles (erank < {threshold}): {} ({:.2}%)", s.needles, 100.0 * s.needles as f64 / s.count.max(1) as f64);
    println!("erank mean {:.4} min {:.4} max {:.4}", s.mean, s.min, s.max);
    println!("histogram: {}", hist.display());
    Ok(())
}

fn render(ply: &Path, cameras: &Path, out: &Path, mode: RenderMode, index: usize) -> anyhow::Result<()> {
    let cloud = load_cloud(ply)?;
    let cams = read_cameras::<f64>(cameras)?;
    let Some(cam) = cams.get(index) else {
        bail!("camera index {index} out of range ({} cameras)", cams.len());
    };
    let raster = RasterConfig::default();
    let img = match mode {
        RenderMode::Color => render_image(&render_forward(&cloud, cam, &raster)?),
        RenderMode::Depth => {
            let dn = render_depth_normal(&cloud, cam, &raster)?;
            depth_to_image(dn.width, dn.height, &dn.depth, &dn.valid)
        }
        RenderMode::Normal => {
            let dn = render_depth_normal(&cloud, cam, &raster)?;
            normals_to_image(dn.width, dn.height, &dn.normals)
        }
    };
    write_png(&img, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn mesh(ply: &Path, dataset: &Path, out: &Path, resolution: usize) -> anyhow::Result<()> {
    let cloud = load_cloud(ply)?;
    let (data, surface) = read_dataset::<f64>(dataset)?;
    let (_, mesh) = extract_mesh(&cloud, &data.cameras, &data.bounds, resolution, &RasterConfig::default())?;
    write_obj(&mesh, out)?;
    println!(
        "mesh: {} vertices, {} triangles, watertight: {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.is_watertight()
    );
    if let Some(s) = surface {
        let err = mesh_surface_error(&mesh, &s)?;
        println!("distance to reference surface: mean {:.5} max {:.5}", err.mean, err.max);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn compare(baseline: &Path, regularized: &Path, threshold: f64) -> anyhow::Result<()> {
    check_threshold(threshold)?;
    let a = summarize(&load_cloud(baseline)?, threshold);
    let b = summarize(&load_cloud(regularized)?, threshold);
    println!("{:<12} {:>10} {:>10} {:>10} {:>10}", "", "gaussians", "needles", "fraction", "mean_erank");
    for (name, s) in [("baseline", a), ("regularized", b)] {
        println!(
            "{name:<12} {:>10} {:>10} {:>9.2}% {:>10.4}",
            s.count,
            s.needles,
            100.0 * s.needles as f64 / s.count.max(1) as f64,
            s.mean
        );
    }
    let ratio = if b.needles == 0 { "inf".to_string() } else { format!("{:.1}", a.needles as f64 / b.needles as f64) };
    println!("needle reduction: {} -> {} ({ratio}x)", a.needles, b.needles);
    Ok(())
}
