//! Multi-view datasets, images, and analytic reference geometry.

mod synthetic;

pub use synthetic::{generate_synthetic_scene, SceneKind, SyntheticScene, ROD_ASPECT};

use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::math::Vec3;
use crate::scalar::Real;

/// Row-major RGB image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[T; 3]>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<[T; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("{}x{} image needs {} pixels, got {}", width, height, width * height, data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: [T; 3]) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [T; 3] {
        self.data[y * self.width + x]
    }

    pub fn mse(&self, other: &Self) -> Result<T> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let mut s = T::zero();
        for (a, b) in self.data.iter().zip(&other.data) {
            for c in 0..3 {
                let d = a[c] - b[c];
                s += d * d;
            }
        }
        Ok(s / T::of_usize(3 * self.data.len()))
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.map(|v| U::lit(v.as_f64()))).collect(),
        }
    }
}

/// Cap applied to PSNR so identical images give a finite value.
pub const PSNR_CAP: f64 = 100.0;

/// `10·log10(1/MSE)` in dB, capped at 100.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: [T; 3],
    pub max: [T; 3],
}

impl<T: Real> Aabb<T> {
    pub fn center(&self) -> Vec3<T> {
        (Vec3::from_array(self.min) + Vec3::from_array(self.max)) * T::lit(0.5)
    }

    pub fn size(&self) -> Vec3<T> {
        Vec3::from_array(self.max) - Vec3::from_array(self.min)
    }
}

/// Posed images with a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset<T> {
    pub images: Vec<Image<T>>,
    pub cameras: Vec<Camera<T>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub bounds: Aabb<T>,
}

impl<T: Real> SceneDataset<T> {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.cameras.len() {
            return Err(Error::Shape(format!("{} images vs {} cameras", self.images.len(), self.cameras.len())));
        }
        for (i, (img, cam)) in self.images.iter().zip(&self.cameras).enumerate() {
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::Shape(format!("view {i}: image and camera sizes differ")));
            }
        }
        let n = self.images.len();
        if self.train.iter().chain(&self.test).any(|&i| i >= n) {
            return Err(Error::Shape("split index out of range".into()));
        }
        if self.train.iter().any(|i| self.test.contains(i)) {
            return Err(Error::Shape("train and test splits overlap".into()));
        }
        Ok(())
    }

    /// `1.1 ×` the largest distance from a camera center to their centroid.
    pub fn scene_extent(&self) -> T {
        let centers: Vec<Vec3<T>> = self.cameras.iter().map(|c| c.center()).collect();
        if centers.is_empty() {
            return T::one();
        }
        let mean = centers.iter().fold(Vec3::zero(), |a, &c| a + c) * (T::one() / T::of_usize(centers.len()));
        let r = centers.iter().map(|&c| (c - mean).norm()).fold(T::zero(), T::max);
        T::lit(1.1) * if r > T::zero() { r } else { T::one() }
    }

    pub fn cast<U: Real>(&self) -> SceneDataset<U> {
        SceneDataset {
            images: self.images.iter().map(Image::cast).collect(),
            cameras: self.cameras.iter().map(Camera::cast).collect(),
            train: self.train.clone(),
            test: self.test.clone(),
            bounds: Aabb { min: self.bounds.min.map(|v| U::lit(v.as_f64())), max: self.bounds.max.map(|v| U::lit(v.as_f64())) },
        }
    }
}

/// Analytic reference surface used to score extracted meshes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceDescriptor {
    Sphere { center: [f64; 3], radius: f64 },
    /// Points `p` with `normal · p = offset`; `normal` need not be unit.
    Plane { normal: [f64; 3], offset: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
    Cylinder { a: [f64; 3], b: [f64; 3], radius: f64 },
    Union(Vec<SurfaceDescriptor>),
}

impl SurfaceDescriptor {
    /// Unsigned distance from `p` to the surface.
    pub fn distance(&self, p: [f64; 3]) -> Result<f64> {
        let p = Vec3::from_array(p);
        match self {
            Self::Sphere { center, radius } => Ok(((p - Vec3::from_array(*center)).norm() - radius).abs()),
            Self::Plane { normal, offset } => {
                let n = Vec3::from_array(*normal);
                let len = n.norm();
                if len == 0.0 {
                    return Err(Error::UnsupportedDescriptor("plane with zero normal".into()));
                }
                Ok((n.dot(p) - offset).abs() / len)
            }
            Self::Box { min, max } => {
                let c = (Vec3::from_array(*min) + Vec3::from_array(*max)) * 0.5;
                let h = (Vec3::from_array(*max) - Vec3::from_array(*min)) * 0.5;
                let q = p - c;
                let d = Vec3::new(q.x.abs() - h.x, q.y.abs() - h.y, q.z.abs() - h.z);
                let outside = Vec3::new(d.x.max(0.0), d.y.max(0.0), d.z.max(0.0)).norm();
                let inside = d.x.max(d.y).max(d.z).min(0.0);
                Ok((outside + inside).abs())
            }
            Self::Cylinder { .. } => Err(Error::UnsupportedDescriptor("cylinder".into())),
            Self::Union(parts) => {
                if parts.is_empty() {
                    return Err(Error::UnsupportedDescriptor("empty reference surface".into()));
                }
                let mut best = f64::INFINITY;
                for part in parts {
                    best = best.min(part.distance(p.to_array())?);
                }
                Ok(best)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(0.0), 100.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let a = Image::filled(4, 4, [0.5_f64; 3]);
        let b = Image::filled(4, 4, [0.6_f64; 3]);
        assert!((psnr_from_mse(a.mse(&b).unwrap()) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn descriptor_distances() {
        let s = SurfaceDescriptor::Sphere { center: [0.0; 3], radius: 1.0 };
        assert!((s.distance([0.0, 1.02, 0.0]).unwrap() - 0.02).abs() < 1e-12);
        assert!((s.distance([0.0, 0.5, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        let p = SurfaceDescriptor::Plane { normal: [0.0, 0.0, 2.0], offset: 2.0 };
        assert!((p.distance([3.0, 1.0, 1.5]).unwrap() - 0.5).abs() < 1e-12);
        let b = SurfaceDescriptor::Box { min: [-1.0; 3], max: [1.0; 3] };
        assert!((b.distance([0.0, 0.0, 0.8]).unwrap() - 0.2).abs() < 1e-12);
        assert!((b.distance([2.0, 2.0, 0.0]).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let c = SurfaceDescriptor::Cylinder { a: [0.0; 3], b: [1.0, 0.0, 0.0], radius: 0.1 };
        assert!(matches!(c.distance([0.0; 3]), Err(Error::UnsupportedDescriptor(_))));
        assert!(SurfaceDescriptor::Union(vec![]).distance([0.0; 3]).is_err());
    }
}
