#![allow(dead_code)]

use std::time::Duration;

use nslf_core::ingest::{unproject_frame, CameraIntrinsics, ColoredPointBatch, Pose, SynthScene};
use nslf_core::mana::{
    DrainPolicy, ManaRuntime, RegionGridConfig, RuntimeConfig, Scheduler, Snapshot,
};
use nslf_core::models::ModelKind;
use nslf_core::render::{EvalFrame, TrainedDirections};

pub fn desk_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 160.0,
        fy: 160.0,
        cx: 79.5,
        cy: 59.5,
        width: 160,
        height: 120,
        depth_scale: 1.0 / 5000.0,
    }
}

pub fn ground_truth(scene: &SynthScene, k: &CameraIntrinsics, pose: &Pose) -> EvalFrame {
    let f = scene.render_frame(k, pose);
    let mut image = f.color;
    image.mask = Some(f.depth.data.iter().map(|&z| z > 0.0).collect());
    EvalFrame {
        pose: *pose,
        intrinsics: *k,
        image,
    }
}

pub struct TrainRun {
    pub snapshot: Snapshot,
    pub trained: TrainedDirections,
    pub losses: Vec<f32>,
}

/// Renders `poses` from the analytic scene, feeds each frame to a
/// deterministic runtime and drains `quota` iterations after every frame.
pub fn train_synthetic(
    scene: &SynthScene,
    poses: &[Pose],
    k: &CameraIntrinsics,
    kind: ModelKind,
    seed: u64,
    quota: u64,
    stride: usize,
) -> TrainRun {
    let mut cfg = RuntimeConfig::new(RegionGridConfig::default(), kind);
    cfg.seed = seed;
    cfg.budget.quota = quota;
    cfg.scheduler = Scheduler::Deterministic;
    let mut rt = ManaRuntime::new(cfg).unwrap();
    let mut trained = TrainedDirections::new(0.02).unwrap();
    for pose in poses {
        let f = scene.render_frame(k, pose);
        let batch: ColoredPointBatch =
            unproject_frame(&f.depth, &f.color, k, pose, stride).unwrap();
        trained.add_frame(pose, &batch);
        rt.feed_frame(&batch).unwrap();
        rt.settle(Duration::from_secs(3600)).unwrap();
    }
    let regions = rt.regions();
    let losses = regions.iter().flat_map(|r| rt.loss_history(*r)).collect();
    let snapshot = rt.quiesce_and_snapshot(DrainPolicy::PauseNow).unwrap();
    TrainRun {
        snapshot,
        trained,
        losses,
    }
}
