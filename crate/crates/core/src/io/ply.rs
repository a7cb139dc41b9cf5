use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::sh::{degree_from_coeffs, num_coeffs};
use crate::gaussian::GaussianCloud;
use crate::scalar::Real;

/// Property names in checkpoint order for a given SH degree.
pub fn property_names(sh_degree: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    let rest = 3 * (num_coeffs(sh_degree) - 1);
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Binary little-endian PLY with the usual splatting property layout.
/// `f_rest_*` is channel-major (all red coefficients first).
pub fn write_ply<T: Real>(cloud: &GaussianCloud<T>) -> Result<Vec<u8>> {
    cloud.validate()?;
    let names = property_names(cloud.sh_degree);
    let mut out = Vec::new();
    let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len());
    for n in &names {
        header.push_str(&format!("property {} {n}\n", T::PLY_TYPE));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    let nc = num_coeffs(cloud.sh_degree);
    for k in 0..cloud.len() {
        for v in cloud.means[k] {
            v.write_le(&mut out);
        }
        for _ in 0..3 {
            T::zero().write_le(&mut out);
        }
        let sh = cloud.sh_of(k);
        for c in 0..3 {
            sh[c].write_le(&mut out);
        }
        for c in 0..3 {
            for i in 1..nc {
                sh[i * 3 + c].write_le(&mut out);
            }
        }
        cloud.raw_opacities[k].write_le(&mut out);
        for v in cloud.raw_scales[k] {
            v.write_le(&mut out);
        }
        for v in cloud.rotations[k] {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum PropType {
    F32,
    F64,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

/// Parses a checkpoint; properties are looked up by name, in any order, as
/// `float` or `double`.
pub fn read_ply<T: Real>(bytes: &[u8]) -> Result<GaussianCloud<T>> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Ply("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Ply("header is not UTF-8".into()))?;
    let body = &bytes[end + END.len()..];
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::Ply("missing `ply` magic".into()));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PropType)> = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(Error::Ply(format!("unsupported format `{other}`"))),
            ["element", name, n] => {
                if *name != "vertex" || count.is_some() {
                    return Err(Error::Ply(format!("unexpected element `{name}`")));
                }
                count = Some(n.parse().map_err(|_| Error::Ply(format!("bad vertex count `{n}`")))?);
            }
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(Error::Ply("property before element".into()));
                }
                let t = match *ty {
                    "float" | "float32" => PropType::F32,
                    "double" | "float64" => PropType::F64,
                    other => return Err(Error::Ply(format!("unsupported property type `{other}` for `{name}`"))),
                };
                props.push((name.to_string(), t));
            }
            _ => return Err(Error::Ply(format!("unrecognized header line `{line}`"))),
        }
    }
    let count = count.ok_or_else(|| Error::Ply("no vertex element".into()))?;
    let stride: usize = props.iter().map(|(_, t)| t.size()).sum();
    if body.len() < stride * count {
        return Err(Error::Ply(format!("truncated payload: need {} bytes, have {}", stride * count, body.len())));
    }
    let mut offsets: HashMap<&str, (usize, PropType)> = HashMap::new();
    let mut off = 0;
    for (name, t) in &props {
        offsets.insert(name.as_str(), (off, *t));
        off += t.size();
    }
    let n_rest = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    if n_rest % 3 != 0 {
        return Err(Error::Ply(format!("{n_rest} f_rest properties is not a multiple of 3")));
    }
    let degree =
        degree_from_coeffs(n_rest / 3 + 1).ok_or_else(|| Error::Ply(format!("{n_rest} f_rest properties match no SH degree")))?;
    let lookup = |name: &str| offsets.get(name).copied().ok_or_else(|| Error::MissingProperty(name.to_string()));
    let read = |row: &[u8], (o, t): (usize, PropType)| -> T {
        match t {
            PropType::F32 => T::lit(f32::from_le_bytes(row[o..o + 4].try_into().unwrap()) as f64),
            PropType::F64 => T::lit(f64::from_le_bytes(row[o..o + 8].try_into().unwrap())),
        }
    };
    let pos = [lookup("x")?, lookup("y")?, lookup("z")?];
    let dc = [lookup("f_dc_0")?, lookup("f_dc_1")?, lookup("f_dc_2")?];
    let nc = num_coeffs(degree);
    let rest: Vec<_> = (0..3 * (nc - 1)).map(|i| lookup(&format!("f_rest_{i}"))).collect::<Result<_>>()?;
    let opacity = lookup("opacity")?;
    let scale = [lookup("scale_0")?, lookup("scale_1")?, lookup("scale_2")?];
    let rot = [lookup("rot_0")?, lookup("rot_1")?, lookup("rot_2")?, lookup("rot_3")?];

    let mut cloud = GaussianCloud::empty(degree)?;
    for k in 0..count {
        let row = &body[k * stride..(k + 1) * stride];
        cloud.means.push(pos.map(|p| read(row, p)));
        cloud.raw_scales.push(scale.map(|p| read(row, p)));
        cloud.rotations.push(rot.map(|p| read(row, p)));
        cloud.raw_opacities.push(read(row, opacity));
        let mut sh = vec![T::zero(); nc * 3];
        for c in 0..3 {
            sh[c] = read(row, dc[c]);
            for i in 1..nc {
                sh[i * 3 + c] = read(row, rest[c * (nc - 1) + i - 1]);
            }
        }
        cloud.sh.extend_from_slice(&sh);
    }
    cloud.validate()?;
    Ok(cloud)
}

pub fn write_ply_file<T: Real>(cloud: &GaussianCloud<T>, path: &Path) -> Result<()> {
    super::atomic_write(path, &write_ply(cloud)?)
}

pub fn read_ply_file<T: Real>(path: &Path) -> Result<GaussianCloud<T>> {
    read_ply(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianParams;

    fn sample(degree: usize) -> GaussianCloud<f32> {
        GaussianCloud::from_params(
            degree,
            (0..3).map(|i| {
                let mut g = GaussianParams::isotropic([i as f32, 0.5, -1.0], 0.2, 0.3, [0.1, 0.5, 0.9], degree);
                for (j, v) in g.sh.iter_mut().enumerate().skip(3) {
                    *v = j as f32 * 0.01;
                }
                g.rotation = [0.9, 0.1, -0.2, 0.3];
                g
            }),
        )
        .unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = write_ply(&sample(1)).unwrap();
        let text = String::from_utf8_lossy(&bytes[..400]);
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n"));
        let names = property_names(1);
        assert_eq!(names.len(), 3 + 3 + 3 + 9 + 1 + 3 + 4);
        assert_eq!(names[9], "f_rest_0");
        assert_eq!(names[18], "opacity");
    }

    #[test]
    fn round_trip_each_degree() {
        for d in 0..=2 {
            let c = sample(d);
            let back: GaussianCloud<f32> = read_ply(&write_ply(&c).unwrap()).unwrap();
            assert_eq!(back, c);
        }
        let c64 = sample(2).cast::<f64>();
        assert_eq!(read_ply::<f64>(&write_ply(&c64).unwrap()).unwrap(), c64);
    }

    fn rebuild(names: &[(&str, f64)]) -> Vec<u8> {
        let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for (n, _) in names {
            out.push_str(&format!("property double {n}\n"));
        }
        out.push_str("end_header\n");
        let mut b = out.into_bytes();
        for (_, v) in names {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn name_keyed_and_missing() {
        let mut props = vec![
            ("rot_3", 0.0),
            ("rot_2", 0.0),
            ("rot_1", 0.0),
            ("rot_0", 1.0),
            ("scale_2", -1.0),
            ("scale_1", -2.0),
            ("scale_0", -3.0),
            ("opacity", 0.5),
            ("f_dc_2", 0.3),
            ("f_dc_1", 0.2),
            ("f_dc_0", 0.1),
            ("z", 3.0),
            ("y", 2.0),
            ("x", 1.0),
        ];
        let c: GaussianCloud<f64> = read_ply(&rebuild(&props)).unwrap();
        assert_eq!(c.means[0], [1.0, 2.0, 3.0]);
        assert_eq!(c.raw_scales[0], [-3.0, -2.0, -1.0]);
        assert_eq!(c.sh, vec![0.1, 0.2, 0.3]);
        props.retain(|(n, _)| *n != "scale_2");
        match read_ply::<f64>(&rebuild(&props)) {
            Err(Error::MissingProperty(p)) => assert_eq!(p, "scale_2"),
            other => panic!("expected missing property, got {other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let bytes = write_ply(&sample(0)).unwrap();
        assert!(matches!(read_ply::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Ply(_))));
        let renamed = String::from_utf8_lossy(&bytes).replacen("element vertex", "element face", 1);
        assert!(matches!(read_ply::<f32>(renamed.as_bytes()), Err(Error::Ply(_))));
        assert!(read_ply::<f32>(b"not a ply").is_err());
    }
}
