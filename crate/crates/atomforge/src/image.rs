//! Image buffers and the raw-file format shared by imaging and analysis:
//! packed little-endian pixel data plus a JSON sidecar describing the shape.
//! Round trips are bit-exact; pixel bytes never pass through a lossy codec.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageU16 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ImageU16 {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageU16 {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u16) {
        self.data[y * self.width + x] = v;
    }
}

impl ImageF32 {
    pub fn zeros(width: usize, height: usize) -> Self {
        ImageF32 {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    /// "u16le" or "f32le".
    pub dtype: String,
    /// What produced this image (frame, average, overlay, ...).
    pub kind: String,
}

/// Loaded raw image of either supported dtype.
#[derive(Debug, Clone)]
pub enum LoadedImage {
    U16(ImageU16),
    F32(ImageF32),
}

pub fn sidecar_path(raw_path: &Path) -> PathBuf {
    raw_path.with_extension("json")
}

pub fn write_u16_raw(path: &Path, img: &ImageU16, kind: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 2);
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_raw(path, &bytes, img.width, img.height, "u16le", kind)
}

pub fn write_f32_raw(path: &Path, img: &ImageF32, kind: &str) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.data.len() * 4);
    for v in &img.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_raw(path, &bytes, img.width, img.height, "f32le", kind)
}

fn write_raw(
    path: &Path,
    bytes: &[u8],
    width: usize,
    height: usize,
    dtype: &str,
    kind: &str,
) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    let sidecar = RawSidecar {
        width,
        height,
        dtype: dtype.to_string(),
        kind: kind.to_string(),
    };
    let sc_path = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&sc_path, json).map_err(|e| Error::io(sc_path.display().to_string(), e))?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<(LoadedImage, RawSidecar)> {
    let sc_path = sidecar_path(path);
    let sc_text = std::fs::read_to_string(&sc_path)
        .map_err(|e| Error::io(sc_path.display().to_string(), e))?;
    let sidecar: RawSidecar = serde_json::from_str(&sc_text).map_err(|e| Error::BadData {
        path: sc_path.display().to_string(),
        message: format!("bad sidecar: {e}"),
    })?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let n_px = sidecar.width * sidecar.height;
    let image = match sidecar.dtype.as_str() {
        "u16le" => {
            if bytes.len() != n_px * 2 {
                return Err(Error::BadData {
                    path: path.display().to_string(),
                    message: format!("expected {} bytes, found {}", n_px * 2, bytes.len()),
                });
            }
            let data = bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            LoadedImage::U16(ImageU16 {
                width: sidecar.width,
                height: sidecar.height,
                data,
            })
        }
        "f32le" => {
            if bytes.len() != n_px * 4 {
                return Err(Error::BadData {
                    path: path.display().to_string(),
                    message: format!("expected {} bytes, found {}", n_px * 4, bytes.len()),
                });
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            LoadedImage::F32(ImageF32 {
                width: sidecar.width,
                height: sidecar.height,
                data,
            })
        }
        other => {
            return Err(Error::BadData {
                path: sc_path.display().to_string(),
                message: format!("unsupported dtype {other:?}"),
            })
        }
    };
    Ok((image, sidecar))
}

/// 8-bit binary PGM export for quick visual inspection. Values are scaled
/// by the image min/max; a constant image maps to mid-gray.
pub fn write_pgm(path: &Path, img: &ImageF32) -> Result<()> {
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for &v in &img.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    for &v in &img.data {
        let g = if scale > 0.0 {
            ((v - lo) * scale).round().clamp(0.0, 255.0) as u8
        } else {
            128
        };
        out.push(g);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u16_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.raw");
        let mut img = ImageU16::zeros(7, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 37 % 65536) as u16;
        }
        write_u16_raw(&path, &img, "frame").unwrap();
        let (loaded, sc) = read_raw(&path).unwrap();
        match loaded {
            LoadedImage::U16(back) => assert_eq!(back, img),
            _ => panic!("wrong dtype"),
        }
        assert_eq!(sc.kind, "frame");
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avg.raw");
        let mut img = ImageF32::zeros(5, 4);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32).sqrt() * 0.1 + 1e-7;
        }
        write_f32_raw(&path, &img, "average").unwrap();
        let (loaded, _) = read_raw(&path).unwrap();
        match loaded {
            LoadedImage::F32(back) => {
                assert_eq!(back.data.len(), img.data.len());
                for (a, b) in back.data.iter().zip(&img.data) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn truncated_raw_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.raw");
        let img = ImageU16::zeros(4, 4);
        write_u16_raw(&path, &img, "frame").unwrap();
        std::fs::write(&path, [0u8; 7]).unwrap();
        let err = read_raw(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn missing_sidecar_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orphan.raw");
        std::fs::write(&path, [0u8; 8]).unwrap();
        let err = read_raw(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let mut img = ImageF32::zeros(3, 2);
        img.set(2, 1, 4.0);
        write_pgm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);
        assert_eq!(*bytes.last().unwrap(), 255);
    }
}
