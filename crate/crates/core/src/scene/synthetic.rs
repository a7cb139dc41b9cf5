use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Aabb, Image, SceneDataset, SurfaceDescriptor};
use crate::error::{Error, Result};
use crate::gaussian::Camera;
use crate::math::Vec3;
use crate::scalar::Real;

/// Length-to-diameter ratio of the rods in the `thin_rods` scene.
pub const ROD_ASPECT: f64 = 50.0;
const OBJECT_SIZE: f64 = 1.0;
const RING_RADIUS: f64 = 4.0 * OBJECT_SIZE;
const FOV_X_DEGREES: f64 = 32.0;
const ELEVATIONS_DEGREES: [f64; 2] = [30.0, 10.0];
const AZIMUTH_JITTER: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Cube,
    Sphere,
    PlaneStack,
    ThinRods,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Self::Cube),
            "sphere" => Ok(Self::Sphere),
            "plane_stack" => Ok(Self::PlaneStack),
            "thin_rods" => Ok(Self::ThinRods),
            other => Err(Error::UnsupportedScene(other.to_string())),
        }
    }
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cube => "cube",
            Self::Sphere => "sphere",
            Self::PlaneStack => "plane_stack",
            Self::ThinRods => "thin_rods",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene<T> {
    pub kind: SceneKind,
    pub dataset: SceneDataset<T>,
    pub surface: SurfaceDescriptor,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Sphere { c: Vec3<f64>, r: f64 },
    Box { min: Vec3<f64>, max: Vec3<f64> },
    Cylinder { a: Vec3<f64>, b: Vec3<f64>, r: f64 },
}

#[derive(Debug, Clone, Copy)]
enum Albedo {
    Constant([f64; 3]),
    /// Color per face normal direction (`+x, −x, +y, −y, +z, −z`).
    PerFace([[f64; 3]; 6]),
    /// `0.5 + 0.4·n`, a smooth color ramp over the sphere.
    NormalRamp,
}

struct Object {
    shape: Shape,
    albedo: Albedo,
}

fn scene_objects(kind: SceneKind) -> Vec<Object> {
    let h = 0.5 * OBJECT_SIZE;
    match kind {
        SceneKind::Cube => vec![Object {
            shape: Shape::Box { min: Vec3::new(-h, -h, -h), max: Vec3::new(h, h, h) },
            albedo: Albedo::PerFace([
                [0.85, 0.25, 0.2],
                [0.2, 0.7, 0.75],
                [0.3, 0.8, 0.3],
                [0.75, 0.3, 0.7],
                [0.9, 0.85, 0.6],
                [0.85, 0.8, 0.2],
            ]),
        }],
        SceneKind::Sphere => vec![Object { shape: Shape::Sphere { c: Vec3::zero(), r: h }, albedo: Albedo::NormalRamp }],
        SceneKind::PlaneStack => {
            let colors = [[0.8, 0.3, 0.25], [0.3, 0.75, 0.35], [0.3, 0.4, 0.85]];
            let t = 0.01 * OBJECT_SIZE;
            (0..3)
                .map(|i| {
                    let z = (i as f64 - 1.0) * 0.3 * OBJECT_SIZE;
                    Object {
                        shape: Shape::Box { min: Vec3::new(-h, -h, z - t), max: Vec3::new(h, h, z + t) },
                        albedo: Albedo::Constant(colors[i]),
                    }
                })
                .collect()
        }
        SceneKind::ThinRods => {
            let r = OBJECT_SIZE / ROD_ASPECT / 2.0;
            let rods = [
                ([-h, -0.3, -0.2], [h, -0.3, -0.2], [0.9, 0.4, 0.2]),
                ([-0.2, -h, 0.1], [-0.2, h, 0.1], [0.3, 0.8, 0.4]),
                ([0.25, 0.2, -h], [0.25, 0.2, h], [0.4, 0.5, 0.95]),
                ([-0.35, 0.3, -0.35], [0.35, -0.3, 0.35], [0.9, 0.85, 0.3]),
                ([-0.3, -0.35, 0.35], [0.3, 0.35, -0.35], [0.85, 0.35, 0.8]),
            ];
            rods.iter()
                .map(|&(a, b, col)| {
                    // Every rod has length OBJECT_SIZE.
                    let (a, b) = (Vec3::from_array(a), Vec3::from_array(b));
                    let mid = (a + b) * 0.5;
                    let dir = (b - a).normalized().unwrap();
                    let half = dir * (0.5 * OBJECT_SIZE);
                    Object { shape: Shape::Cylinder { a: mid - half, b: mid + half, r }, albedo: Albedo::Constant(col) }
                })
                .collect()
        }
    }
}

fn surface_of(objects: &[Object]) -> SurfaceDescriptor {
    let parts: Vec<SurfaceDescriptor> = objects
        .iter()
        .map(|o| match o.shape {
            Shape::Sphere { c, r } => SurfaceDescriptor::Sphere { center: c.to_array(), radius: r },
            Shape::Box { min, max } => SurfaceDescriptor::Box { min: min.to_array(), max: max.to_array() },
            Shape::Cylinder { a, b, r } => SurfaceDescriptor::Cylinder { a: a.to_array(), b: b.to_array(), radius: r },
        })
        .collect();
    if parts.len() == 1 {
        parts.into_iter().next().unwrap()
    } else {
        SurfaceDescriptor::Union(parts)
    }
}

/// Nearest hit `(t, unit normal)` of a ray with a shape.
fn intersect(shape: &Shape, o: Vec3<f64>, d: Vec3<f64>) -> Option<(f64, Vec3<f64>)> {
    const EPS: f64 = 1e-9;
    match *shape {
        Shape::Sphere { c, r } => {
            let oc = o - c;
            let b = oc.dot(d);
            let disc = b * b - (oc.norm_sq() - r * r);
            if disc < 0.0 {
                return None;
            }
            let s = disc.sqrt();
            let t = if -b - s > EPS { -b - s } else { -b + s };
            (t > EPS).then(|| (t, (o + d * t - c) * (1.0 / r)))
        }
        Shape::Box { min, max } => {
            let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut axis0 = 0;
            let mut sign0 = 1.0;
            for a in 0..3 {
                if d[a].abs() < 1e-15 {
                    if o[a] < min[a] || o[a] > max[a] {
                        return None;
                    }
                    continue;
                }
                let inv = 1.0 / d[a];
                let (mut ta, mut tb) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                let mut s = -1.0;
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                    s = 1.0;
                }
                if ta > t0 {
                    t0 = ta;
                    axis0 = a;
                    sign0 = s;
                }
                t1 = t1.min(tb);
            }
            if t0 > t1 || t0 <= EPS {
                return None;
            }
            let mut n = Vec3::zero();
            n[axis0] = sign0;
            Some((t0, n))
        }
        Shape::Cylinder { a, b, r } => {
            let axis = b - a;
            let len = axis.norm();
            let u = axis * (1.0 / len);
            let mut best: Option<(f64, Vec3<f64>)> = None;
            let mut consider = |t: f64, n: Vec3<f64>| {
                if t > EPS && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            };
            // Side: |(o + t d − a) − ((o + t d − a)·u) u| = r
            let oa = o - a;
            let dp = d - u * d.dot(u);
            let op = oa - u * oa.dot(u);
            let qa = dp.norm_sq();
            if qa > 1e-18 {
                let qb = 2.0 * dp.dot(op);
                let qc = op.norm_sq() - r * r;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    let s = disc.sqrt();
                    for t in [(-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)] {
                        let h = (oa + d * t).dot(u);
                        if (0.0..=len).contains(&h) {
                            let p = oa + d * t;
                            let n = (p - u * h).normalized().unwrap_or(u);
                            consider(t, n);
                        }
                    }
                }
            }
            // Caps.
            let dn = d.dot(u);
            if dn.abs() > 1e-15 {
                for (center, n) in [(a, -u), (b, u)] {
                    let t = (center - o).dot(u) / dn;
                    if (o + d * t - center).norm_sq() <= r * r {
                        consider(t, n);
                    }
                }
            }
            best
        }
    }
}

fn shade(objects: &[Object], o: Vec3<f64>, d: Vec3<f64>) -> [f64; 3] {
    let light = Vec3::new(0.3, 0.5, 0.8).normalized().unwrap();
    let mut best: Option<(f64, Vec3<f64>, &Albedo)> = None;
    for obj in objects {
        if let Some((t, n)) = intersect(&obj.shape, o, d) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, n, &obj.albedo));
            }
        }
    }
    let Some((_, n, albedo)) = best else {
        return [0.0; 3];
    };
    // Shade two-sided so thin plates look the same from either side.
    let n = if n.dot(d) > 0.0 { -n } else { n };
    let base = match *albedo {
        Albedo::Constant(c) => c,
        Albedo::PerFace(faces) => {
            let mut a = 0;
            for k in 1..3 {
                if n[k].abs() > n[a].abs() {
                    a = k;
                }
            }
            faces[2 * a + usize::from(n[a] < 0.0)]
        }
        Albedo::NormalRamp => [0.5 + 0.4 * n.x, 0.5 + 0.4 * n.y, 0.5 + 0.4 * n.z],
    };
    let lambert = 0.35 + 0.65 * n.dot(light).max(0.0);
    base.map(|c| (c * lambert).clamp(0.0, 1.0))
}

/// Ray-casts every pixel with 2×2 supersampling.
fn render_reference(objects: &[Object], cam: &Camera<f64>) -> Image<f64> {
    let origin = cam.center();
    let mut data = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0; 3];
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let local = Vec3::new((x as f64 + ox - cam.cx) / cam.fx, (y as f64 + oy - cam.cy) / cam.fy, 1.0);
                let d = cam.camera_to_world_dir(local).normalized().unwrap();
                let c = shade(objects, origin, d);
                for k in 0..3 {
                    acc[k] += 0.25 * c[k];
                }
            }
            data.push(acc);
        }
    }
    Image { width: cam.width, height: cam.height, data }
}

/// Renders a deterministic ring of views around an analytic object.
/// Every fourth view (`i % 4 == 3`) is held out for testing.
pub fn generate_synthetic_scene<T: Real>(
    kind: SceneKind,
    n_views: usize,
    resolution: usize,
    seed: u64,
) -> Result<SyntheticScene<T>> {
    if n_views < 2 {
        return Err(Error::Config(format!("need at least 2 views, got {n_views}")));
    }
    if resolution < 8 {
        return Err(Error::Config(format!("resolution must be at least 8, got {resolution}")));
    }
    let objects = scene_objects(kind);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cameras = Vec::with_capacity(n_views);
    for i in 0..n_views {
        let az = std::f64::consts::TAU * i as f64 / n_views as f64 + rng.random_range(-AZIMUTH_JITTER..AZIMUTH_JITTER);
        let el = ELEVATIONS_DEGREES[i % 2].to_radians();
        let eye = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * RING_RADIUS;
        cameras.push(Camera::look_at(
            eye,
            Vec3::zero(),
            Vec3::new(0.0, 0.0, 1.0),
            resolution,
            resolution,
            FOV_X_DEGREES.to_radians(),
        )?);
    }
    let images: Vec<Image<f64>> = cameras.iter().map(|c| render_reference(&objects, c)).collect();
    let (train, test): (Vec<usize>, Vec<usize>) = (0..n_views).partition(|i| i % 4 != 3);
    let pad = 0.6 * OBJECT_SIZE;
    let dataset = SceneDataset { images, cameras, train, test, bounds: Aabb { min: [-pad; 3], max: [pad; 3] } };
    Ok(SyntheticScene { kind, dataset: dataset.cast(), surface: surface_of(&objects) })
}
