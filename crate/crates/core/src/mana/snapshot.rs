use std::collections::BTreeMap;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::{RegionGridConfig, RegionIndex};
use crate::models::{AnyModel, ColorModel};
use crate::Result;

/// Color returned for points in regions that have no agent.
pub const UNCOVERED_COLOR: [f32; 3] = [0.5, 0.5, 0.5];

/// Anything that can color a batch of world-space surface samples.
pub trait BatchPredictor: Sync {
    /// Colors for each `(point, unit direction)` pair, plus a coverage flag
    /// that is false where no model owns the point.
    fn predict_batch(&self, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> Result<Prediction>;
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prediction {
    pub colors: Vec<[f32; 3]>,
    pub covered: Vec<bool>,
}

/// Frozen copy of every agent's model.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub grid: RegionGridConfig,
    pub models: BTreeMap<RegionIndex, AnyModel<f32>>,
    pub trained_iters: BTreeMap<RegionIndex, u64>,
}

impl Snapshot {
    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    fn predict_one(&self, p: &Vector3<f64>, d: &Vector3<f64>) -> Result<([f32; 3], bool)> {
        let region = self.grid.region_of(p)?;
        match self.models.get(&region) {
            Some(model) => {
                let unit = self.grid.to_unit(region, p).map(|c| c as f32);
                let dir = [d.x as f32, d.y as f32, d.z as f32];
                Ok((model.predict(unit, dir)?, true))
            }
            None => Ok((UNCOVERED_COLOR, false)),
        }
    }
}

impl BatchPredictor for Snapshot {
    fn predict_batch(&self, points: &[Vector3<f64>], dirs: &[Vector3<f64>]) -> Result<Prediction> {
        if points.len() != dirs.len() {
            return Err(crate::Error::Shape(format!(
                "{} points but {} directions",
                points.len(),
                dirs.len()
            )));
        }
        let results: Vec<([f32; 3], bool)> = points
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(p, d)| self.predict_one(p, d))
            .collect::<Result<_>>()?;
        let (colors, covered) = results.into_iter().unzip();
        Ok(Prediction { colors, covered })
    }
}
