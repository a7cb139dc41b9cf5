use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scalar::Real;
use crate::scene::Image;

fn encode<T: Real>(img: &Image<T>) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        let p = img.get(x as usize, y as usize);
        Rgb(p.map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit RGB PNG; values are clamped to `[0, 1]`.
pub fn write_png<T: Real>(img: &Image<T>, path: &Path) -> Result<()> {
    super::atomic_write(path, &encode(img)?)
}

pub fn read_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let rgb = image::load_from_memory(&bytes)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.pixels().map(|p| p.0.map(|v| T::lit(v as f64 / 255.0))).collect();
    Image::new(w, h, data)
}

/// Depth mapped linearly to gray between the valid minimum and maximum; invalid pixels are black.
pub fn depth_to_image<T: Real>(width: usize, height: usize, depth: &[T], valid: &[bool]) -> Image<T> {
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    for (d, _) in depth.iter().zip(valid).filter(|(_, &v)| v) {
        lo = lo.min(*d);
        hi = hi.max(*d);
    }
    let span = if hi > lo { hi - lo } else { T::one() };
    let data = depth
        .iter()
        .zip(valid)
        .map(|(&d, &v)| if v { [T::one() - (d - lo) / span; 3] } else { [T::zero(); 3] })
        .collect();
    Image { width, height, data }
}

/// Unit normals mapped to colors by `0.5·(n + 1)`; zero normals stay black.
pub fn normals_to_image<T: Real>(width: usize, height: usize, normals: &[Vec3<T>]) -> Image<T> {
    let half = T::lit(0.5);
    let data = normals
        .iter()
        .map(|n| if n.norm_sq() == T::zero() { [T::zero(); 3] } else { n.to_array().map(|v| half * (v + T::one())) })
        .collect();
    Image { width, height, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::new(3, 2, vec![[0.0, 0.5, 1.0], [1.0, 0.0, 0.2], [0.3; 3], [0.0; 3], [1.0; 3], [0.7, 0.1, 0.9]]).unwrap();
        write_png(&img, &p).unwrap();
        let back: Image<f64> = read_png(&p).unwrap();
        assert_eq!((back.width, back.height), (3, 2));
        for (a, b) in img.data.iter().zip(&back.data) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn depth_visualization_range() {
        let img = depth_to_image(3, 1, &[1.0_f64, 2.0, 5.0], &[true, true, false]);
        assert_eq!(img.data, vec![[1.0; 3], [0.0; 3], [0.0; 3]]);
    }
}
