use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::camera::{DEFAULT_FAR, DEFAULT_NEAR};
use crate::gaussian::Camera;
use crate::math::{Mat3, Vec3};
use crate::scalar::Real;

/// One camera in the JSON file; `world_to_camera` is a row-major 4×4 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [f64; 16],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
}

impl CameraRecord {
    pub fn from_camera<T: Real>(c: &Camera<T>) -> Self {
        let mut m = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 4 + j] = c.rotation.m[i][j].as_f64();
            }
            m[i * 4 + 3] = c.translation[i].as_f64();
        }
        m[15] = 1.0;
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx.as_f64(),
            fy: c.fy.as_f64(),
            cx: c.cx.as_f64(),
            cy: c.cy.as_f64(),
            world_to_camera: m,
            near: Some(c.near.as_f64()),
            far: Some(c.far.as_f64()),
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<Camera<T>> {
        let m = &self.world_to_camera;
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::Camera("world_to_camera bottom row must be [0, 0, 0, 1]".into()));
        }
        let mut rot = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                rot.m[i][j] = T::lit(m[i * 4 + j]);
            }
        }
        Camera::new(
            self.width,
            self.height,
            T::lit(self.fx),
            T::lit(self.fy),
            T::lit(self.cx),
            T::lit(self.cy),
            rot,
            Vec3::new(T::lit(m[3]), T::lit(m[7]), T::lit(m[11])),
            T::lit(self.near.unwrap_or(DEFAULT_NEAR)),
            T::lit(self.far.unwrap_or(DEFAULT_FAR)),
        )
    }
}

pub fn cameras_to_json<T: Real>(cams: &[Camera<T>]) -> Result<String> {
    let recs: Vec<CameraRecord> = cams.iter().map(CameraRecord::from_camera).collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

/// Accepts a JSON array of cameras or a single camera object.
pub fn cameras_from_json<T: Real>(text: &str) -> Result<Vec<Camera<T>>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let recs: Vec<CameraRecord> =
        if value.is_array() { serde_json::from_value(value)? } else { vec![serde_json::from_value(value)?] };
    recs.iter().map(CameraRecord::to_camera).collect()
}

pub fn write_cameras<T: Real>(cams: &[Camera<T>], path: &Path) -> Result<()> {
    super::atomic_write(path, cameras_to_json(cams)?.as_bytes())
}

pub fn read_cameras<T: Real>(path: &Path) -> Result<Vec<Camera<T>>> {
    cameras_from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
