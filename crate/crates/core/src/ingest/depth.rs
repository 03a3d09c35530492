use std::path::Path;

use crate::{Error, Result};

/// Metric depth image; 0 marks a missing reading.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.data[v as usize * self.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, z: f32) {
        self.data[v as usize * self.width as usize + u as usize] = z;
    }

    /// Reads a 16-bit PNG, multiplying stored units by `depth_scale`.
    pub fn read_png(path: &Path, depth_scale: f64) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.into(),
                source,
            })?
            .into_luma16();
        let (width, height) = img.dimensions();
        Ok(DepthMap {
            width,
            height,
            data: img
                .pixels()
                .map(|p| (p.0[0] as f64 * depth_scale) as f32)
                .collect(),
        })
    }

    /// Writes a 16-bit PNG of `round(z / depth_scale)`, saturating at 65535.
    pub fn write_png(&self, path: &Path, depth_scale: f64) -> Result<()> {
        let mut img =
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(self.width, self.height);
        for (dst, &z) in img.pixels_mut().zip(&self.data) {
            let units = if z.is_finite() && z > 0.0 {
                (z as f64 / depth_scale).round().min(u16::MAX as f64)
            } else {
                0.0
            };
            dst.0 = [units as u16];
        }
        img.save(path).map_err(|source| Error::Image {
            path: path.into(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_within_half_a_unit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let scale = 1.0 / 5000.0;
        let mut d = DepthMap::new(3, 2);
        d.set(0, 0, 1.23456);
        d.set(2, 1, 7.5);
        d.write_png(&path, scale).unwrap();
        let back = DepthMap::read_png(&path, scale).unwrap();
        for (a, b) in back.data.iter().zip(&d.data) {
            assert!(((a - b).abs() as f64) <= scale / 2.0 + 1e-6);
        }
        assert_eq!(back.get(1, 0), 0.0);
    }
}
