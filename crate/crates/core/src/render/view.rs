use std::time::{Duration, Instant};

use nalgebra::Vector3;

use super::{raycast, Bvh, Image, RaycastResult};
use crate::ingest::{CameraIntrinsics, Pose, TriangleMesh};
use crate::mana::BatchPredictor;
use crate::Result;

pub const BACKGROUND: [f32; 3] = [0.0; 3];

#[derive(Debug, Clone)]
pub struct RenderedView {
    /// Mask marks pixels that hit the mesh inside a trained region.
    pub image: Image,
    pub hits: RaycastResult,
    /// Unit view directions (camera → point) of hit pixels; zero elsewhere.
    pub dirs: Vec<Vector3<f64>>,
    pub covered: usize,
    pub elapsed: Duration,
}

/// Ray-casts `mesh` from `pose` and colors every hit with `predictor`.
/// Misses are black; hits in untrained regions keep the predictor's
/// uncovered color and are masked out.
pub fn render_view<P: BatchPredictor + ?Sized>(
    predictor: &P,
    bvh: &Bvh,
    mesh: &TriangleMesh,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<RenderedView> {
    let start = Instant::now();
    let hits = raycast(bvh, mesh, k, pose);
    let center = pose.center();
    let idx: Vec<usize> = (0..hits.mask.len()).filter(|&i| hits.mask[i]).collect();
    let points: Vec<Vector3<f64>> = idx.iter().map(|&i| hits.points[i]).collect();
    let mut dirs = vec![Vector3::zeros(); hits.mask.len()];
    let hit_dirs: Vec<Vector3<f64>> = points.iter().map(|p| (p - center).normalize()).collect();
    for (&i, d) in idx.iter().zip(&hit_dirs) {
        dirs[i] = *d;
    }
    let pred = predictor.predict_batch(&points, &hit_dirs)?;

    let mut image = Image::filled(k.width, k.height, BACKGROUND);
    let mut mask = vec![false; hits.mask.len()];
    let mut covered = 0;
    for (j, &i) in idx.iter().enumerate() {
        image.pixels[i] = pred.colors[j].map(|c| c.clamp(0.0, 1.0));
        mask[i] = pred.covered[j];
        covered += pred.covered[j] as usize;
    }
    image.mask = Some(mask);
    Ok(RenderedView {
        image,
        hits,
        dirs,
        covered,
        elapsed: start.elapsed(),
    })
}
