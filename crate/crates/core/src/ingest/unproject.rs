use nalgebra::Vector3;

use super::{CameraIntrinsics, DepthMap, Pose};
use crate::render::Image;
use crate::{Error, Result};

/// Depths at or beyond this range are treated as invalid readings.
pub const MAX_VALID_DEPTH: f64 = 65.0;

/// One frame's colored, directed point cloud in world coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColoredPointBatch {
    pub points: Vec<Vector3<f64>>,
    /// Unit vectors from the camera center toward each point.
    pub directions: Vec<Vector3<f64>>,
    pub colors: Vec<[f32; 3]>,
}

impl ColoredPointBatch {
    pub fn new(
        points: Vec<Vector3<f64>>,
        directions: Vec<Vector3<f64>>,
        colors: Vec<[f32; 3]>,
    ) -> Result<Self> {
        if points.len() != directions.len() || points.len() != colors.len() {
            return Err(Error::Shape(format!(
                "point batch arrays differ in length: {} / {} / {}",
                points.len(),
                directions.len(),
                colors.len()
            )));
        }
        Ok(ColoredPointBatch {
            points,
            directions,
            colors,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Vector3<f64>, d: Vector3<f64>, c: [f32; 3]) {
        self.points.push(p);
        self.directions.push(d);
        self.colors.push(c);
    }

    pub fn extend(&mut self, other: &ColoredPointBatch) {
        self.points.extend_from_slice(&other.points);
        self.directions.extend_from_slice(&other.directions);
        self.colors.extend_from_slice(&other.colors);
    }
}

pub fn is_valid_depth(z: f64) -> bool {
    z.is_finite() && z > 0.0 && z < MAX_VALID_DEPTH
}

/// Back-projects every `stride`-th valid depth pixel through `k` and `pose`.
pub fn unproject_frame(
    depth: &DepthMap,
    color: &Image,
    k: &CameraIntrinsics,
    pose: &Pose,
    stride: usize,
) -> Result<ColoredPointBatch> {
    if stride == 0 {
        return Err(Error::Config("pixel stride must be at least 1".into()));
    }
    if depth.width != k.width
        || depth.height != k.height
        || color.width != k.width
        || color.height != k.height
    {
        return Err(Error::Shape(format!(
            "depth {}×{} and color {}×{} must match intrinsics {}×{}",
            depth.width, depth.height, color.width, color.height, k.width, k.height
        )));
    }
    let center = pose.center();
    let mut batch = ColoredPointBatch::default();
    for v in (0..k.height).step_by(stride) {
        for u in (0..k.width).step_by(stride) {
            let z = depth.get(u, v) as f64;
            if !is_valid_depth(z) {
                continue;
            }
            let p = pose.to_world(&(k.pixel_ray(u as f64, v as f64) * z));
            let Some(d) = (p - center).try_normalize(0.0) else {
                continue;
            };
            batch.push(p, d, color.get(u, v));
        }
    }
    Ok(batch)
}
