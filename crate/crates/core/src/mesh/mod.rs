//! TSDF fusion of depth maps and marching-cubes surface extraction.

mod tables;

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{Camera, GaussianCloud};
use crate::math::Vec3;
use crate::raster::{render_depth_normal, RasterConfig};
use crate::scalar::Real;
use crate::scene::{Aabb, SurfaceDescriptor};
use tables::{EDGE_TABLE, TRIANGLE_TABLE};

/// Truncation distance in voxels.
pub const TRUNCATION_VOXELS: f64 = 4.0;
pub const DEFAULT_VOLUME_RESOLUTION: usize = 128;

/// Truncated signed distances sampled at grid points `origin + voxel_size·(i, j, k)`.
/// Index `i` varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
    pub truncation: f64,
}

impl TsdfVolume {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3], truncation: f64) -> Result<Self> {
        if !(voxel_size > 0.0) || dims.iter().any(|&d| d < 2) {
            return Err(Error::Config("volume needs a positive voxel size and at least 2 samples per axis".into()));
        }
        if !(truncation >= 2.0 * voxel_size) {
            return Err(Error::Config(format!("truncation {truncation} must be at least twice the voxel size {voxel_size}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self { origin, voxel_size, dims, tsdf: vec![0.0; n], weight: vec![0.0; n], truncation })
    }

    /// Grid with `resolution` samples along the longest side of `bounds` and
    /// truncation of four voxels.
    pub fn covering<T: Real>(bounds: &Aabb<T>, resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Config("volume resolution must be at least 2".into()));
        }
        let size = bounds.size().cast::<f64>();
        let longest = size.x.max(size.y).max(size.z);
        if !(longest > 0.0) {
            return Err(Error::Config("bounding box is empty".into()));
        }
        let voxel = longest / (resolution - 1) as f64;
        let dims = [0, 1, 2].map(|a| ((size[a] / voxel).ceil() as usize + 1).clamp(2, resolution));
        Self::new(bounds.min.map(|v| v.as_f64()), voxel, dims, TRUNCATION_VOXELS * voxel)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3<f64> {
        Vec3::new(
            self.origin[0] + self.voxel_size * i as f64,
            self.origin[1] + self.voxel_size * j as f64,
            self.origin[2] + self.voxel_size * k as f64,
        )
    }

    /// Writes `f(p) / δ` clamped to `[−1, 1]` with unit weight at every sample.
    pub fn fill_from_sdf(&mut self, f: impl Fn(Vec3<f64>) -> f64) {
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    let idx = self.index(i, j, k);
                    self.tsdf[idx] = (f(self.point(i, j, k)) / self.truncation).clamp(-1.0, 1.0);
                    self.weight[idx] = 1.0;
                }
            }
        }
    }
}

/// Fuses one depth map. Each voxel that projects into a valid pixel and lies
/// no more than `δ` behind the observed depth is averaged with weight one.
/// The depth map and volume must share world units; this is not checked.
pub fn tsdf_integrate<T: Real>(volume: &mut TsdfVolume, depth: &[T], valid: &[bool], cam: &Camera<T>) -> Result<()> {
    let (w, h) = (cam.width, cam.height);
    if depth.len() != w * h || valid.len() != w * h {
        return Err(Error::Shape(format!("depth map must have {} pixels", w * h)));
    }
    let cam = cam.cast::<f64>();
    let depth: Vec<f64> = depth.iter().map(|d| d.as_f64()).collect();
    let delta = volume.truncation;
    let [nx, ny, _] = volume.dims;
    let slab = nx * ny;
    let (origin, vs) = (volume.origin, volume.voxel_size);
    volume
        .tsdf
        .par_chunks_mut(slab)
        .zip(volume.weight.par_chunks_mut(slab))
        .enumerate()
        .for_each(|(k, (tsdf, weight))| {
            for j in 0..ny {
                for i in 0..nx {
                    let p = Vec3::new(origin[0] + vs * i as f64, origin[1] + vs * j as f64, origin[2] + vs * k as f64);
                    let pc = cam.world_to_camera(p);
                    if !(pc.z > 0.0) {
                        continue;
                    }
                    let (u, v) = cam.project(pc);
                    if !(u >= 0.0 && v >= 0.0) {
                        continue;
                    }
                    let (px, py) = (u.floor() as usize, v.floor() as usize);
                    if px >= w || py >= h || !valid[py * w + px] {
                        continue;
                    }
                    let sdf = depth[py * w + px] - pc.z;
                    if sdf <= -delta {
                        continue;
                    }
                    let t = (sdf / delta).clamp(-1.0, 1.0);
                    let l = j * nx + i;
                    let wt = weight[l];
                    tsdf[l] = (tsdf[l] * wt + t) / (wt + 1.0);
                    weight[l] = wt + 1.0;
                }
            }
        });
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

impl TriangleMesh {
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Shape("triangle index out of range".into()));
        }
        if self.normals.as_ref().is_some_and(|v| v.len() != n) {
            return Err(Error::Shape("normal count differs from vertex count".into()));
        }
        Ok(())
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| Vec3::from_array(self.vertices[i]));
        (b - a).cross(c - a).norm() * 0.5
    }

    /// Number of triangles sharing each undirected edge.
    fn edge_use(&self) -> HashMap<(usize, usize), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use().values().all(|&c| c == 2)
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_use().values().filter(|&&c| c == 1).count()
    }

    /// `V − E + F` over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for &i in self.triangles.iter().flatten() {
            used[i] = true;
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_use().len() as i64 + self.triangles.len() as i64
    }
}

// Corner offsets and edge endpoints in the lookup-table convention.
const CORNERS: [[usize; 3]; 8] =
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] =
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

fn gradient(vol: &TsdfVolume, i: usize, j: usize, k: usize) -> Vec3<f64> {
    let d = vol.dims;
    let at = |i: usize, j: usize, k: usize| vol.tsdf[vol.index(i, j, k)];
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    let gx = diff(at(i.saturating_sub(1), j, k), at((i + 1).min(d[0] - 1), j, k), (i + 1).min(d[0] - 1) - i.saturating_sub(1));
    let gy = diff(at(i, j.saturating_sub(1), k), at(i, (j + 1).min(d[1] - 1), k), (j + 1).min(d[1] - 1) - j.saturating_sub(1));
    let gz = diff(at(i, j, k.saturating_sub(1)), at(i, j, (k + 1).min(d[2] - 1)), (k + 1).min(d[2] - 1) - k.saturating_sub(1));
    Vec3::new(gx, gy, gz)
}

/// Zero isosurface of the volume. Cells touching an unobserved sample are
/// skipped; vertices are shared between cells along each grid edge. Normals
/// follow the TSDF gradient (pointing outward, toward positive values) and
/// triangles are wound to agree with them.
pub fn marching_cubes(vol: &TsdfVolume) -> Result<TriangleMesh> {
    let [nx, ny, nz] = vol.dims;
    let mut mesh = TriangleMesh { normals: Some(Vec::new()), ..TriangleMesh::default() };
    let mut normals = Vec::new();
    let mut edge_vertex: HashMap<(usize, u8), usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx: [usize; 8] = CORNERS.map(|c| vol.index(i + c[0], j + c[1], k + c[2]));
                if idx.iter().any(|&l| vol.weight[l] <= 0.0) {
                    continue;
                }
                let val = idx.map(|l| vol.tsdf[l]);
                let mut case = 0usize;
                for (c, &v) in val.iter().enumerate() {
                    if v < 0.0 {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut local = [usize::MAX; 12];
                for (e, &[a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    // Key the edge by its lower endpoint and axis so neighbors share it.
                    let (ca, cb) = (CORNERS[a], CORNERS[b]);
                    let lo = if idx[a] < idx[b] { ca } else { cb };
                    let axis = (0..3).find(|&d| ca[d] != cb[d]).unwrap() as u8;
                    let key = (vol.index(i + lo[0], j + lo[1], k + lo[2]), axis);
                    local[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (val[a], val[b]);
                        let t = if (vb - va).abs() < 1e-12 { 0.5 } else { va / (va - vb) };
                        let pa = vol.point(i + ca[0], j + ca[1], k + ca[2]);
                        let pb = vol.point(i + cb[0], j + cb[1], k + cb[2]);
                        let ga = gradient(vol, i + ca[0], j + ca[1], k + ca[2]);
                        let gb = gradient(vol, i + cb[0], j + cb[1], k + cb[2]);
                        let n = (ga * (1.0 - t) + gb * t).normalized().unwrap_or(Vec3::zero());
                        mesh.vertices.push((pa + (pb - pa) * t).to_array());
                        normals.push(n);
                        mesh.vertices.len() - 1
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|c| c[0] >= 0) {
                    let mut t = [local[tri[0] as usize], local[tri[1] as usize], local[tri[2] as usize]];
                    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                        continue;
                    }
                    let [a, b, c] = t.map(|v| Vec3::from_array(mesh.vertices[v]));
                    let face = (b - a).cross(c - a);
                    if face.norm() < 1e-14 * vol.voxel_size * vol.voxel_size {
                        continue;
                    }
                    if face.dot(normals[t[0]] + normals[t[1]] + normals[t[2]]) < 0.0 {
                        t.swap(1, 2);
                    }
                    mesh.triangles.push(t);
                }
            }
        }
    }
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    mesh.normals = Some(normals.iter().map(|n| n.to_array()).collect());
    Ok(mesh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceError {
    pub mean: f64,
    pub max: f64,
}

/// Mean and maximum distance from the mesh vertices to an analytic surface.
pub fn mesh_surface_error(mesh: &TriangleMesh, reference: &SurfaceDescriptor) -> Result<SurfaceError> {
    if mesh.vertices.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut sum = 0.0;
    let mut max = 0.0_f64;
    for v in &mesh.vertices {
        let d = reference.distance(*v)?;
        sum += d;
        max = max.max(d);
    }
    Ok(SurfaceError { mean: sum / mesh.vertices.len() as f64, max })
}

/// Renders expected depth from every camera, fuses it, and extracts a mesh.
pub fn extract_mesh<T: Real>(
    cloud: &GaussianCloud<T>,
    cameras: &[Camera<T>],
    bounds: &Aabb<T>,
    resolution: usize,
    raster: &RasterConfig<T>,
) -> Result<(TsdfVolume, TriangleMesh)> {
    let mut vol = TsdfVolume::covering(bounds, resolution)?;
    for cam in cameras {
        let dn = render_depth_normal(cloud, cam, raster)?;
        tsdf_integrate(&mut vol, &dn.depth, &dn.valid, cam)?;
    }
    let mesh = marching_cubes(&vol)?;
    Ok((vol, mesh))
}
