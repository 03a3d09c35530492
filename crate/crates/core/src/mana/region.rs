use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Integer coordinates of one region cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegionIndex {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl RegionIndex {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        RegionIndex { x, y, z }
    }

    pub fn as_array(self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }
}

impl fmt::Display for RegionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}_{}", self.x, self.y, self.z)
    }
}

/// Axis-aligned bounding box split into cubic regions of edge `cell_edge`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionGridConfig {
    pub b_min: [f64; 3],
    pub b_max: [f64; 3],
    pub cell_edge: f64,
}

impl Default for RegionGridConfig {
    /// A box large enough for room- to building-scale scenes.
    fn default() -> Self {
        RegionGridConfig {
            b_min: [-256.0; 3],
            b_max: [256.0; 3],
            cell_edge: 4.0,
        }
    }
}

impl RegionGridConfig {
    pub fn new(b_min: [f64; 3], b_max: [f64; 3], cell_edge: f64) -> Result<Self> {
        let cfg = RegionGridConfig {
            b_min,
            b_max,
            cell_edge,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_edge > 0.0 && self.cell_edge.is_finite()) {
            return Err(Error::Config(format!(
                "cell edge {} must be positive",
                self.cell_edge
            )));
        }
        for a in 0..3 {
            if !(self.b_min[a] < self.b_max[a])
                || !self.b_min[a].is_finite()
                || !self.b_max[a].is_finite()
            {
                return Err(Error::Config(format!(
                    "bounding box {:?}..{:?} is empty or non-finite on axis {a}",
                    self.b_min, self.b_max
                )));
            }
        }
        Ok(())
    }

    /// Cells per axis: `ceil((b_max - b_min) / cell_edge)`.
    pub fn cell_counts(&self) -> [u32; 3] {
        std::array::from_fn(|a| {
            ((self.b_max[a] - self.b_min[a]) / self.cell_edge)
                .ceil()
                .max(1.0) as u32
        })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.b_min[a] && p[a] <= self.b_max[a])
    }

    /// `floor((p - b_min) / cell_edge)` per axis; a point on a shared face
    /// belongs to the upper cell, points on `b_max` to the last cell.
    pub fn region_of(&self, p: &Vector3<f64>) -> Result<RegionIndex> {
        if !self.contains(p) {
            return Err(Error::Routing([p.x, p.y, p.z]));
        }
        let counts = self.cell_counts();
        let idx: [u32; 3] = std::array::from_fn(|a| {
            let i = ((p[a] - self.b_min[a]) / self.cell_edge).floor() as u32;
            i.min(counts[a] - 1)
        });
        Ok(RegionIndex::new(idx[0], idx[1], idx[2]))
    }

    /// World-space minimum corner of a region.
    pub fn region_origin(&self, r: RegionIndex) -> Vector3<f64> {
        let i = r.as_array();
        Vector3::from_fn(|a, _| self.b_min[a] + i[a] as f64 * self.cell_edge)
    }

    /// Maps a world point into the region's unit cube, clamped to `[0, 1]`.
    pub fn to_unit(&self, r: RegionIndex, p: &Vector3<f64>) -> [f64; 3] {
        let o = self.region_origin(r);
        std::array::from_fn(|a| ((p[a] - o[a]) / self.cell_edge).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> RegionGridConfig {
        RegionGridConfig::new([0.0; 3], [12.0; 3], 4.0).unwrap()
    }

    #[test]
    fn minimum_corner_is_region_zero() {
        assert_eq!(
            grid().region_of(&Vector3::zeros()).unwrap(),
            RegionIndex::new(0, 0, 0)
        );
    }

    #[test]
    fn floor_arithmetic() {
        let r = grid().region_of(&Vector3::new(4.5, 0.2, 8.0)).unwrap();
        assert_eq!(r, RegionIndex::new(1, 0, 2));
    }

    #[test]
    fn shared_face_belongs_to_upper_cell() {
        let r = grid().region_of(&Vector3::new(4.0, 1.0, 1.0)).unwrap();
        assert_eq!(r.x, 1);
    }

    #[test]
    fn upper_bound_clamps_to_last_cell() {
        let r = grid().region_of(&Vector3::new(12.0, 12.0, 12.0)).unwrap();
        assert_eq!(r, RegionIndex::new(2, 2, 2));
    }

    #[test]
    fn outside_points_are_routing_errors() {
        let err = grid().region_of(&Vector3::new(-0.1, 1.0, 1.0)).unwrap_err();
        match err {
            Error::Routing(p) => assert_eq!(p, [-0.1, 1.0, 1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cell_counts_round_up() {
        let cfg = RegionGridConfig::new([0.0; 3], [10.0, 4.0, 0.5], 4.0).unwrap();
        assert_eq!(cfg.cell_counts(), [3, 1, 1]);
    }

    #[test]
    fn unit_cube_mapping() {
        let cfg = grid();
        let r = RegionIndex::new(1, 0, 2);
        let u = cfg.to_unit(r, &Vector3::new(5.0, 2.0, 11.0));
        assert_eq!(u, [0.25, 0.5, 0.75]);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(RegionGridConfig::new([0.0; 3], [1.0; 3], 0.0).is_err());
        assert!(RegionGridConfig::new([0.0; 3], [0.0, 1.0, 1.0], 1.0).is_err());
    }
}
