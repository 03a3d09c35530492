use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{psnr_from_mse, render_view, Bvh, Image, RenderedView};
use crate::ingest::{CameraIntrinsics, ColoredPointBatch, Pose, TriangleMesh};
use crate::mana::BatchPredictor;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLDS_DEG: [f64; 3] = [15.0, 30.0, 60.0];

/// How the angle to the training views is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// Per pixel: angle between its view direction and the closest training
    /// direction recorded near the same surface point.
    #[default]
    PerPoint,
    /// Per frame: angle between the camera's optical axis and the closest
    /// training camera's optical axis.
    PerFrame,
}

impl std::str::FromStr for AngleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_point" | "point" => Ok(AngleMode::PerPoint),
            "per_frame" | "frame" => Ok(AngleMode::PerFrame),
            other => Err(Error::Config(format!(
                "unknown angle mode '{other}' (expected per_point or per_frame)"
            ))),
        }
    }
}

/// A surface point and the unit direction it was observed from.
type PointDir = (Vector3<f64>, Vector3<f64>);

/// Training view directions indexed by surface location.
#[derive(Debug, Clone)]
pub struct TrainedDirections {
    voxel: f64,
    cells: HashMap<[i64; 3], Vec<PointDir>>,
    camera_axes: Vec<Vector3<f64>>,
}

impl TrainedDirections {
    /// `voxel` is the radius (m) within which a training sample counts as
    /// the same surface point.
    pub fn new(voxel: f64) -> Result<Self> {
        if !(voxel > 0.0) {
            return Err(Error::Config(
                "direction index voxel size must be positive".into(),
            ));
        }
        Ok(TrainedDirections {
            voxel,
            cells: HashMap::new(),
            camera_axes: Vec::new(),
        })
    }

    fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / self.voxel).floor() as i64)
    }

    pub fn add_frame(&mut self, pose: &Pose, batch: &ColoredPointBatch) {
        self.camera_axes.push(pose.forward());
        for (p, d) in batch.points.iter().zip(&batch.directions) {
            let key = self.key(p);
            self.cells.entry(key).or_default().push((*p, *d));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.camera_axes.is_empty()
    }

    /// Smallest angle (radians) between `d` and a training direction
    /// observed within one voxel of `p`; `None` if `p` was never observed.
    pub fn point_angle(&self, p: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let [x, y, z] = self.key(p);
        let r2 = self.voxel * self.voxel;
        let mut best: Option<f64> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(cell) = self.cells.get(&[x + dx, y + dy, z + dz]) else {
                        continue;
                    };
                    for (q, e) in cell {
                        if (q - p).norm_squared() <= r2 {
                            let c = d.dot(e);
                            best = Some(best.map_or(c, |b: f64| b.max(c)));
                        }
                    }
                }
            }
        }
        best.map(|c| c.clamp(-1.0, 1.0).acos())
    }

    /// Smallest angle (radians) between `axis` and a training camera axis.
    pub fn frame_angle(&self, axis: &Vector3<f64>) -> Option<f64> {
        self.camera_axes
            .iter()
            .map(|a| a.dot(axis).clamp(-1.0, 1.0))
            .reduce(f64::max)
            .map(f64::acos)
    }
}

#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Ground truth; its mask, if any, marks valid pixels.
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleBucket {
    pub max_angle_deg: f64,
    pub pixels: usize,
    /// Absent when the bucket is empty.
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub mode: AngleMode,
    /// Nested buckets, one per threshold in ascending order.
    pub buckets: Vec<AngleBucket>,
    /// Compared pixels whose surface point no training frame observed.
    pub unobserved: usize,
    /// Compared pixels beyond the largest threshold.
    pub beyond: usize,
}

/// Streaming form of [`angle_filtered_eval`]: feed rendered views one at a
/// time, then [`finish`](Self::finish).
#[derive(Debug, Clone)]
pub struct AngleAccumulator {
    mode: AngleMode,
    thresholds: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    unobserved: usize,
    beyond: usize,
}

impl AngleAccumulator {
    pub fn new(thresholds_deg: &[f64], mode: AngleMode) -> Result<Self> {
        let mut thresholds = thresholds_deg.to_vec();
        if thresholds.is_empty() || thresholds.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config(
                "angle thresholds must be non-negative and non-empty".into(),
            ));
        }
        thresholds.sort_by(f64::total_cmp);
        let n = thresholds.len();
        Ok(AngleAccumulator {
            mode,
            thresholds,
            sums: vec![0.0; n],
            counts: vec![0; n],
            unobserved: 0,
            beyond: 0,
        })
    }

    /// Adds the pixels of `view`, rendered from `frame.pose`, that are valid
    /// in both the rendering and the ground truth.
    pub fn add_view(
        &mut self,
        view: &RenderedView,
        frame: &EvalFrame,
        trained: &TrainedDirections,
    ) -> Result<()> {
        if frame.image.width != view.image.width || frame.image.height != view.image.height {
            return Err(Error::Shape(
                "ground-truth frame size differs from its intrinsics".into(),
            ));
        }
        let frame_angle = match self.mode {
            AngleMode::PerFrame => trained.frame_angle(&frame.pose.forward()),
            AngleMode::PerPoint => None,
        };
        for i in 0..view.image.pixels.len() {
            if !view.image.is_valid(i) || !frame.image.is_valid(i) {
                continue;
            }
            let angle = match self.mode {
                AngleMode::PerPoint => trained.point_angle(&view.hits.points[i], &view.dirs[i]),
                AngleMode::PerFrame => frame_angle,
            };
            let Some(angle) = angle else {
                self.unobserved += 1;
                continue;
            };
            let deg = angle.to_degrees();
            let (a, b) = (view.image.pixels[i], frame.image.pixels[i]);
            let se: f64 = (0..3).map(|c| (a[c] as f64 - b[c] as f64).powi(2)).sum();
            let mut counted = false;
            for (k, t) in self.thresholds.iter().enumerate() {
                if deg <= *t {
                    self.sums[k] += se;
                    self.counts[k] += 1;
                    counted = true;
                }
            }
            self.beyond += (!counted) as usize;
        }
        Ok(())
    }

    pub fn finish(&self) -> AngleReport {
        let buckets = self
            .thresholds
            .iter()
            .zip(self.sums.iter().zip(&self.counts))
            .map(|(&t, (&s, &n))| AngleBucket {
                max_angle_deg: t,
                pixels: n,
                psnr: (n > 0).then(|| psnr_from_mse(s / (3 * n) as f64)),
            })
            .collect();
        AngleReport {
            mode: self.mode,
            buckets,
            unobserved: self.unobserved,
            beyond: self.beyond,
        }
    }
}

/// PSNR of rendered views against ground truth, bucketed by the angle to
/// the nearest training view. Buckets are nested: a pixel counts toward
/// every threshold at or above its angle. Errors are pooled over all frames
/// before conversion to PSNR.
pub fn angle_filtered_eval<P: BatchPredictor + ?Sized>(
    predictor: &P,
    bvh: &Bvh,
    mesh: &TriangleMesh,
    frames: &[EvalFrame],
    trained: &TrainedDirections,
    thresholds_deg: &[f64],
    mode: AngleMode,
) -> Result<AngleReport> {
    let mut acc = AngleAccumulator::new(thresholds_deg, mode)?;
    for frame in frames {
        let view = render_view(predictor, bvh, mesh, &frame.intrinsics, &frame.pose)?;
        acc.add_view(&view, frame, trained)?;
    }
    Ok(acc.finish())
}
