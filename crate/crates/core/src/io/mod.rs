//! File formats: checkpoints, cameras, images, analytics, meshes, configs and
//! dataset directories.

mod cameras;
mod config;
mod dataset;
mod export;
mod image;
mod ply;

pub use cameras::{cameras_from_json, cameras_to_json, read_cameras, write_cameras, CameraRecord};
pub use config::{parse_config, read_config, DataSource, Precision, RunConfig};
pub use dataset::{read_dataset, write_dataset, CAMERAS_FILE, IMAGES_DIR, SPLIT_FILE, SURFACE_FILE};
pub use export::{
    export_histogram_csv, export_metrics_csv, read_histogram_csv, read_metrics_csv, write_obj, HistogramRow,
};
pub use image::{depth_to_image, normals_to_image, read_png, write_png};
pub use ply::{property_names, read_ply, read_ply_file, write_ply, write_ply_file};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(atomic_write(&dir.path().join("missing/a.txt"), b"x").is_err());
    }
}
