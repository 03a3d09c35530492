use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::{RegionGridConfig, RegionIndex};
use crate::ingest::ColoredPointBatch;
use crate::models::TrainBatch;

/// A frame's points split by region.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Distribution {
    /// Region-local samples with points in the region's unit cube.
    pub batches: BTreeMap<RegionIndex, TrainBatch<f32>>,
    /// Source indices of each sub-batch, in order.
    pub indices: BTreeMap<RegionIndex, Vec<usize>>,
    /// Indices of points outside the grid's bounding box.
    pub rejected: Vec<usize>,
}

impl Distribution {
    pub fn routed_count(&self) -> usize {
        self.indices.values().map(Vec::len).sum()
    }
}

fn to_f32(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Partitions `batch` by [`RegionGridConfig::region_of`], normalising each
/// point into its region's unit cube.
pub fn distribute(grid: &RegionGridConfig, batch: &ColoredPointBatch) -> Distribution {
    let mut out = Distribution::default();
    for (i, p) in batch.points.iter().enumerate() {
        let Ok(region) = grid.region_of(p) else {
            out.rejected.push(i);
            continue;
        };
        let unit = grid.to_unit(region, p).map(|c| c as f32);
        out.batches.entry(region).or_default().push(
            unit,
            to_f32(&batch.directions[i]),
            batch.colors[i],
        );
        out.indices.entry(region).or_default().push(i);
    }
    out
}
