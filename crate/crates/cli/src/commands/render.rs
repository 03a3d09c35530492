use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use nslf_core::ingest::{icl_default_intrinsics, load_mesh, read_intrinsics, read_tum_trajectory};
use nslf_core::mana::read_checkpoint;
use nslf_core::render::{build_bvh, render_view};

use super::frame_name;
use crate::report::{write_json, RenderLog, RenderRecord, SCHEMA_VERSION};
use crate::{usage, RenderArgs};

pub const RENDER_LOG: &str = "render_log.json";

pub fn run(args: &RenderArgs) -> Result<()> {
    let snapshot = read_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    if snapshot.is_empty() {
        warn!("checkpoint has no agents; every hit pixel will be uncovered gray");
    }
    let (mesh, report) =
        load_mesh(&args.mesh).with_context(|| format!("loading mesh {}", args.mesh.display()))?;
    if report.dropped_degenerate > 0 {
        warn!("dropped {} degenerate triangles", report.dropped_degenerate);
    }
    let bvh = build_bvh(&mesh)?;
    let k = match &args.intrinsics {
        Some(path) if !path.exists() => {
            return Err(usage(format!(
                "intrinsics file {} not found",
                path.display()
            )))
        }
        Some(path) => read_intrinsics(path, icl_default_intrinsics())?,
        None => icl_default_intrinsics(),
    };
    let poses = read_tum_trajectory(&args.trajectory)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut frames = Vec::new();
    for (n, (timestamp, pose)) in poses.iter().enumerate() {
        let t = Instant::now();
        let view = render_view(&snapshot, &bvh, &mesh, &k, pose)?;
        let render_ms = t.elapsed().as_secs_f64() * 1e3;
        let file = frame_name(n);
        let path = args.out.join(&file);
        view.image.write_png(&path)?;
        if args.float_dump {
            view.image.write_float_dump(&path.with_extension("f32"))?;
        }
        let hit_pixels = view.hits.mask.iter().filter(|&&m| m).count();
        if view.covered < hit_pixels {
            warn!(
                "{file}: {} of {hit_pixels} surface pixels fall in untrained regions",
                hit_pixels - view.covered
            );
        }
        info!("{file}: {render_ms:.1} ms");
        frames.push(RenderRecord {
            file,
            timestamp: *timestamp,
            render_ms,
            hit_pixels,
            covered_pixels: view.covered,
        });
    }
    write_json(
        &RenderLog {
            schema_version: SCHEMA_VERSION,
            checkpoint: args.checkpoint.clone(),
            frames,
        },
        &args.out.join(RENDER_LOG),
    )?;
    info!("rendered {} frames to {}", poses.len(), args.out.display());
    Ok(())
}
