use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use log::info;
use nalgebra::Vector3;
use nslf_core::ingest::{
    cone_trajectory, ring_trajectory, synth_scene_frames, write_tum_sequence, CameraIntrinsics,
    Pose, SynthScene,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::report::{write_json, SCHEMA_VERSION};
use crate::usage;

pub const ORACLE_FILE: &str = "scene.json";
pub const MESH_FILE: &str = "mesh.obj";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `plane`, `sphere`, or a scene JSON file.
    #[arg(long, default_value = "plane")]
    pub scene: String,
    /// `cone` (random views within --max-angle of the axis) or `ring`
    /// (evenly spaced views at --offset from the axis).
    #[arg(long, default_value = "cone")]
    pub trajectory: String,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, env = "NSLFOL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Camera distance from the scene center in metres.
    #[arg(long, default_value_t = 3.0)]
    pub distance: f64,
    /// Cone half-angle in degrees.
    #[arg(long, default_value_t = 15.0)]
    pub max_angle: f64,
    /// Ring angle from the axis in degrees.
    #[arg(long, default_value_t = 45.0)]
    pub offset: f64,
    /// Direction from the scene center toward the cameras, `x,y,z`.
    #[arg(long, default_value = "0,0,-1", value_delimiter = ',', num_args = 3)]
    pub axis: Vec<f64>,
    #[arg(long, default_value_t = 160)]
    pub width: u32,
    #[arg(long, default_value_t = 120)]
    pub height: u32,
    #[arg(long, env = "NSLFOL_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct TrajectorySpec<'a> {
    kind: &'a str,
    frames: usize,
    seed: u64,
    distance: f64,
    max_angle_deg: f64,
    offset_deg: f64,
    axis: [f64; 3],
}

/// Everything needed to regenerate or query the sequence exactly.
#[derive(Debug, Serialize)]
struct Oracle<'a> {
    schema_version: u32,
    scene: &'a SynthScene,
    trajectory: TrajectorySpec<'a>,
    intrinsics: CameraIntrinsics,
    poses: &'a [Pose],
}

fn load_scene(spec: &str) -> Result<SynthScene> {
    match spec {
        "plane" => Ok(SynthScene::textured_plane()),
        "sphere" => Ok(SynthScene::phong_sphere()),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("reading scene {path}"))?;
            let scene: SynthScene =
                serde_json::from_str(&text).with_context(|| format!("parsing scene {path}"))?;
            scene.validate()?;
            Ok(scene)
        }
    }
}

pub fn run(args: &SynthArgs) -> Result<()> {
    if args.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    if args.width < 2 || args.height < 2 {
        return Err(usage("image must be at least 2×2"));
    }
    let scene = load_scene(&args.scene)?;
    let axis = Vector3::new(args.axis[0], args.axis[1], args.axis[2]);
    if axis.norm() < 1e-9 {
        return Err(usage("--axis must be non-zero"));
    }
    let target = scene.surface.center();
    let poses = match args.trajectory.as_str() {
        "cone" => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            cone_trajectory(
                &target,
                &axis,
                args.distance,
                args.max_angle.to_radians(),
                args.frames,
                &mut rng,
            )
        }
        "ring" => ring_trajectory(
            &target,
            &axis,
            args.distance,
            args.offset.to_radians(),
            args.frames,
        ),
        other => {
            return Err(usage(format!(
                "unknown trajectory '{other}' (expected cone or ring)"
            )))
        }
    }
    .map_err(|e| usage(e.to_string()))?;
    let (w, h) = (args.width as f64, args.height as f64);
    let k = CameraIntrinsics {
        fx: w,
        fy: w,
        cx: (w - 1.0) / 2.0,
        cy: (h - 1.0) / 2.0,
        width: args.width,
        height: args.height,
        depth_scale: 1.0 / 5000.0,
    };
    let (frames, oracle_scene) = synth_scene_frames(&scene, &poses, &k)?;
    let frames: Vec<_> = frames
        .into_iter()
        .map(|f| (f.depth, f.color, f.pose))
        .collect();
    write_tum_sequence(&args.out, &k, &frames)?;
    scene.mesh().write_obj(&args.out.join(MESH_FILE))?;
    let oracle = Oracle {
        schema_version: SCHEMA_VERSION,
        scene: &oracle_scene,
        trajectory: TrajectorySpec {
            kind: &args.trajectory,
            frames: args.frames,
            seed: args.seed,
            distance: args.distance,
            max_angle_deg: args.max_angle,
            offset_deg: args.offset,
            axis: [axis.x, axis.y, axis.z],
        },
        intrinsics: k,
        poses: &poses,
    };
    write_json(&oracle, &args.out.join(ORACLE_FILE))?;
    info!(
        "wrote {} frames, {MESH_FILE} and {ORACLE_FILE} to {}",
        frames.len(),
        args.out.display()
    );
    Ok(())
}
