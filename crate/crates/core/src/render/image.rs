use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

/// Float RGB image with an optional per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB in `[0, 1]`.
    pub pixels: Vec<[f32; 3]>,
    pub mask: Option<Vec<bool>>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: u32, height: u32, color: [f32; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![color; width as usize * height as usize],
            mask: None,
        }
    }

    #[inline]
    fn idx(&self, u: u32, v: u32) -> usize {
        v as usize * self.width as usize + u as usize
    }

    pub fn get(&self, u: u32, v: u32) -> [f32; 3] {
        self.pixels[self.idx(u, v)]
    }

    pub fn set(&mut self, u: u32, v: u32, c: [f32; 3]) {
        let i = self.idx(u, v);
        self.pixels[i] = c.map(|x| x.clamp(0.0, 1.0));
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(self.pixels.len(), |m| m.iter().filter(|&&b| b).count())
    }

    /// ITU-R 601 luma.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
            .collect()
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Image {
            width: w,
            height: h,
            pixels: img
                .pixels()
                .map(|p| p.0.map(|c| c as f32 / 255.0))
                .collect(),
            mask: None,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width, self.height);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            dst.0 = src.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.into_rgb8()))
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }

    /// Raw dump: `u32 width, u32 height`, then `width·height·3` `f32`s, all
    /// little-endian.
    pub fn write_float_dump(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(8 + 12 * self.pixels.len());
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        for c in self.pixels.iter().flatten() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        w.write_all(&buf)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_float_dump(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut data = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut data)
            .map_err(|e| Error::io(path, e))?;
        if data.len() < 8 {
            return Err(Error::Format(format!(
                "{}: float dump header truncated",
                path.display()
            )));
        }
        let width = u32::from_le_bytes(data[0..4].try_into().expect("4 bytes"));
        let height = u32::from_le_bytes(data[4..8].try_into().expect("4 bytes"));
        let n = width as usize * height as usize;
        if data.len() != 8 + 12 * n {
            return Err(Error::Format(format!(
                "{}: expected {} payload bytes for {width}×{height}, found {}",
                path.display(),
                12 * n,
                data.len() - 8
            )));
        }
        let pixels = data[8..]
            .chunks_exact(12)
            .map(|c| {
                std::array::from_fn(|k| {
                    f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().expect("4 bytes"))
                })
            })
            .collect();
        Ok(Image {
            width,
            height,
            pixels,
            mask: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_clamps_into_unit_range() {
        let mut img = Image::new(2, 2);
        img.set(1, 0, [1.5, -0.2, 0.5]);
        assert_eq!(img.get(1, 0), [1.0, 0.0, 0.5]);
    }

    #[test]
    fn float_dump_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.f32");
        let mut img = Image::new(3, 2);
        img.set(2, 1, [0.123_456_7, 0.5, 1.0 / 3.0]);
        img.write_float_dump(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 3 * 2 * 12);
        assert_eq!(&bytes[0..4], &3u32.to_le_bytes());
        assert_eq!(Image::read_float_dump(&path).unwrap().pixels, img.pixels);
    }

    #[test]
    fn png_round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::new(4, 3);
        img.set(0, 0, [0.2, 0.4, 0.6]);
        img.write_png(&path).unwrap();
        let back = Image::read_png(&path).unwrap();
        for (a, b) in back
            .pixels
            .iter()
            .flatten()
            .zip(img.pixels.iter().flatten())
        {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
