use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::erank::ErankHistogram;
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::train::{MetricsLog, MetricsRow};

pub const HISTOGRAM_HEADER: [&str; 3] = ["bin_left", "bin_right", "count"];
pub const METRICS_HEADER: [&str; 12] = [
    "iteration",
    "photometric",
    "erank",
    "depth_distortion",
    "normal",
    "total",
    "train_psnr",
    "test_psnr",
    "gaussians",
    "needles",
    "mean_erank",
    "histogram",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn export_histogram_csv(hist: &ErankHistogram, path: &Path) -> Result<()> {
    if hist.counts.is_empty() {
        return Err(Error::EmptyHistogram);
    }
    let mut w = writer();
    w.write_record(HISTOGRAM_HEADER)?;
    for (b, &count) in hist.counts.iter().enumerate() {
        w.serialize(HistogramRow { bin_left: hist.bin_edges[b], bin_right: hist.bin_edges[b + 1], count })?;
    }
    super::atomic_write(path, &finish(w)?)
}

pub fn read_histogram_csv(path: &Path) -> Result<Vec<HistogramRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// One row per logged interval; an empty log gives a header-only file.
pub fn export_metrics_csv(log: &MetricsLog, path: &Path) -> Result<()> {
    let mut w = writer();
    w.write_record(METRICS_HEADER)?;
    for row in &log.rows {
        w.serialize(row)?;
    }
    super::atomic_write(path, &finish(w)?)
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsLog> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<MetricsRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(MetricsLog { rows })
}

/// ASCII OBJ with `v x y z` lines and 1-based `f i j k` lines.
pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    mesh.validate()?;
    let mut s = String::new();
    for v in &mesh.vertices {
        writeln!(s, "v {} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    super::atomic_write(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist() -> ErankHistogram {
        ErankHistogram { bin_edges: vec![1.0, 1.5, 2.0, 2.5, 3.0], counts: vec![3, 0, 7, 1], iteration: 10, total: 11 }
    }

    #[test]
    fn histogram_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        export_histogram_csv(&hist(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("bin_left,bin_right,count\n1.0,1.5,3\n"));
        assert!(!text.contains('\r'));
        let rows = read_histogram_csv(&p).unwrap();
        assert_eq!(rows.iter().map(|r| r.count).collect::<Vec<_>>(), hist().counts);
    }

    #[test]
    fn metrics_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        export_metrics_csv(&MetricsLog::default(), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), METRICS_HEADER.join(",") + "\n");
        let row = MetricsRow {
            iteration: 5,
            photometric: 0.25,
            erank: 0.5,
            depth_distortion: 0.0,
            normal: 0.0,
            total: 0.75,
            train_psnr: 21.5,
            test_psnr: None,
            gaussians: 9,
            needles: 1,
            mean_erank: 2.25,
            histogram: "hist_000005.csv".into(),
        };
        let log = MetricsLog { rows: vec![row.clone(), MetricsRow { iteration: 6, test_psnr: Some(20.0), ..row }] };
        export_metrics_csv(&log, &p).unwrap();
        assert_eq!(read_metrics_csv(&p).unwrap(), log);
    }

    #[test]
    fn obj_output() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.obj");
        let mesh = TriangleMesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
            normals: None,
        };
        write_obj(&mesh, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n");
        let bad = TriangleMesh { triangles: vec![[0, 1, 3]], ..mesh };
        assert!(write_obj(&bad, &p).is_err());
    }
}
