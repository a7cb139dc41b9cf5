use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::densify::DensifyMode;
use crate::error::{Error, Result};
use crate::scene::SceneKind;
use crate::train::TrainConfig;

/// Scalar type used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic { kind: SceneKind, views: usize, resolution: usize, seed: u64 },
    Directory(PathBuf),
}

/// Everything a `train` invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub precision: Precision,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DataSource::Synthetic { kind: SceneKind::Cube, views: 16, resolution: 128, seed: 0 },
            precision: Precision::F32,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

/// Parses `key = value` lines with dotted section prefixes. Blank lines and
/// `#` comments are ignored; every key is optional. Relative paths are
/// resolved against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig> {
    let mut rc = RunConfig { output_dir: base.join("out"), ..RunConfig::default() };
    let (mut kind, mut views, mut resolution, mut data_seed) = (SceneKind::Cube, 16, 128, 0u64);
    let mut data_path: Option<PathBuf> = None;
    let t = &mut rc.train;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, v) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", ln + 1)))?;
        match key {
            "data.path" => data_path = Some(base.join(v)),
            "data.scene" => kind = v.parse()?,
            "data.views" => views = parse(key, v)?,
            "data.resolution" => resolution = parse(key, v)?,
            "data.seed" => data_seed = parse(key, v)?,
            "output.dir" => rc.output_dir = base.join(v),
            "train.precision" => rc.precision = v.parse()?,
            "train.iterations" => t.iterations = parse(key, v)?,
            "train.seed" => t.seed = parse(key, v)?,
            "train.ssim_weight" => t.ssim_weight = parse(key, v)?,
            "train.log_interval" => t.log_interval = parse(key, v)?,
            "train.snapshot_interval" => t.snapshot_interval = parse(key, v)?,
            "train.histogram_bins" => t.histogram_bins = parse(key, v)?,
            "train.init_points" => t.init_points = parse(key, v)?,
            "train.sh_degree" => t.sh_degree = parse(key, v)?,
            "lr.means" => t.lr.means = parse(key, v)?,
            "lr.means_final" => t.lr.means_final = parse(key, v)?,
            "lr.scales" => t.lr.raw_scales = parse(key, v)?,
            "lr.rotations" => t.lr.rotations = parse(key, v)?,
            "lr.opacities" => t.lr.raw_opacities = parse(key, v)?,
            "lr.sh_dc" => t.lr.sh_dc = parse(key, v)?,
            "lr.sh_rest" => t.lr.sh_rest = parse(key, v)?,
            "loss.erank" => t.erank_enabled = parse(key, v)?,
            "loss.lambda_erank" => t.loss.lambda_erank = parse(key, v)?,
            "loss.epsilon" => t.loss.epsilon = parse(key, v)?,
            "loss.lambda_d" => t.loss.lambda_d = parse(key, v)?,
            "loss.lambda_n" => t.loss.lambda_n = parse(key, v)?,
            "loss.erank_start" => t.loss.erank_start_iter = parse(key, v)?,
            "densify.mode" => {
                t.densify_mode = match v {
                    "auto" => None,
                    other => Some(DensifyMode::from_str(other)?),
                }
            }
            "densify.tau" => t.densify.tau = parse(key, v)?,
            "densify.tau_revised" => t.tau_revised = parse(key, v)?,
            "densify.interval" => t.densify.densify_interval = parse(key, v)?,
            "densify.start" => t.densify.start_iter = parse(key, v)?,
            "densify.end" => t.densify.end_iter = parse(key, v)?,
            "densify.prune_opacity" => t.densify.prune_opacity = parse(key, v)?,
            "densify.percent_dense" => t.densify.percent_dense = parse(key, v)?,
            "densify.split_divisor" => t.densify.split_scale_divisor = parse(key, v)?,
            "densify.max_screen_fraction" => t.densify.max_screen_fraction = parse(key, v)?,
            "densify.clone_nudge" => t.densify.clone_nudge = parse(key, v)?,
            "densify.max_gaussians" => t.densify.max_gaussians = parse(key, v)?,
            "raster.cutoff_sigma" => t.raster.cutoff_sigma = parse(key, v)?,
            "raster.transmittance_min" => t.raster.transmittance_min = parse(key, v)?,
            "raster.background" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse(key, p.trim())).collect::<Result<_>>()?;
                t.raster.background =
                    parts.try_into().map_err(|_| Error::Config("`raster.background` needs three values".into()))?;
            }
            other => return Err(Error::Config(format!("line {}: unknown key `{other}`", ln + 1))),
        }
    }
    rc.data = match data_path {
        Some(p) => DataSource::Directory(p),
        None => DataSource::Synthetic { kind, views, resolution, seed: data_seed },
    };
    rc.train.validate()?;
    Ok(rc)
}

/// Reads a config file; relative paths inside it are resolved against its directory.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(parse_config("", Path::new(".")).unwrap(), RunConfig { output_dir: PathBuf::from("./out"), ..RunConfig::default() });
    }

    #[test]
    fn keys_and_errors() {
        let text = "# comment\ntrain.iterations = 7\nloss.erank = false  # baseline\ndensify.mode = revised\ndensify.tau_revised = 0.001\n\
                    data.scene = sphere\ndata.views = 8\nraster.background = 1, 0.5, 0\ntrain.precision = f64\n";
        let rc = parse_config(text, Path::new("/base")).unwrap();
        assert_eq!(rc.train.iterations, 7);
        assert!(!rc.train.erank_enabled);
        assert_eq!(rc.train.densify_mode, Some(DensifyMode::Revised));
        assert_eq!(rc.train.tau_revised, 0.001);
        assert_eq!(rc.train.raster.background, [1.0, 0.5, 0.0]);
        assert_eq!(rc.precision, Precision::F64);
        assert_eq!(rc.data, DataSource::Synthetic { kind: SceneKind::Sphere, views: 8, resolution: 128, seed: 0 });
        assert_eq!(rc.output_dir, PathBuf::from("/base/out"));
        let rc = parse_config("data.path = scene", Path::new("/base")).unwrap();
        assert_eq!(rc.data, DataSource::Directory(PathBuf::from("/base/scene")));
        assert!(parse_config("nope = 1", Path::new(".")).is_err());
        assert!(parse_config("train.iterations = many", Path::new(".")).is_err());
        assert!(parse_config("train.iterations", Path::new(".")).is_err());
        assert!(parse_config("lr.means = -1", Path::new(".")).is_err());
    }
}
