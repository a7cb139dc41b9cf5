use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_cameras, read_png, write_cameras, write_png};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scene::{Aabb, SceneDataset, SurfaceDescriptor};

pub const CAMERAS_FILE: &str = "cameras.json";
pub const SPLIT_FILE: &str = "split.json";
pub const SURFACE_FILE: &str = "surface.json";
pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Serialize, Deserialize)]
struct SplitRecord {
    train: Vec<usize>,
    test: Vec<usize>,
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
}

fn image_name(i: usize) -> String {
    format!("{i:03}.png")
}

/// Writes `cameras.json`, `split.json`, `images/NNN.png` and, if given, `surface.json`.
pub fn write_dataset<T: Real>(data: &SceneDataset<T>, surface: Option<&SurfaceDescriptor>, dir: &Path) -> Result<()> {
    data.validate()?;
    let images = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    write_cameras(&data.cameras, &dir.join(CAMERAS_FILE))?;
    for (i, img) in data.images.iter().enumerate() {
        write_png(img, &images.join(image_name(i)))?;
    }
    let split = SplitRecord {
        train: data.train.clone(),
        test: data.test.clone(),
        bounds_min: data.bounds.min.map(|v| v.as_f64()),
        bounds_max: data.bounds.max.map(|v| v.as_f64()),
    };
    atomic_write(&dir.join(SPLIT_FILE), serde_json::to_string_pretty(&split)?.as_bytes())?;
    if let Some(s) = surface {
        atomic_write(&dir.join(SURFACE_FILE), serde_json::to_string_pretty(s)?.as_bytes())?;
    }
    Ok(())
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset<T: Real>(dir: &Path) -> Result<(SceneDataset<T>, Option<SurfaceDescriptor>)> {
    let cameras = read_cameras::<T>(&dir.join(CAMERAS_FILE))?;
    let split_path = dir.join(SPLIT_FILE);
    let split: SplitRecord =
        serde_json::from_str(&std::fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?)?;
    let images = (0..cameras.len())
        .map(|i| read_png::<T>(&dir.join(IMAGES_DIR).join(image_name(i))))
        .collect::<Result<Vec<_>>>()?;
    let surface_path = dir.join(SURFACE_FILE);
    let surface = if surface_path.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&surface_path).map_err(|e| Error::io(&surface_path, e))?)?)
    } else {
        None
    };
    let data = SceneDataset {
        images,
        cameras,
        train: split.train,
        test: split.test,
        bounds: Aabb { min: split.bounds_min.map(T::lit), max: split.bounds_max.map(T::lit) },
    };
    data.validate()?;
    Ok((data, surface))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, SceneKind};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_scene::<f64>(SceneKind::Sphere, 4, 16, 2).unwrap();
        write_dataset(&s.dataset, Some(&s.surface), dir.path()).unwrap();
        let (d, surf) = read_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(surf, Some(s.surface));
        assert_eq!(d.cameras, s.dataset.cameras);
        assert_eq!((d.train.clone(), d.test.clone()), (s.dataset.train.clone(), s.dataset.test.clone()));
        assert!(d.images[0].mse(&s.dataset.images[0]).unwrap() < 1e-5);
    }
}
