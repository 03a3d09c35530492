use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use nslf_core::ingest::{is_valid_depth, load_mesh, read_sequence, unproject_frame};
use nslf_core::mana::read_checkpoint;
use nslf_core::render::{
    build_bvh, psnr, render_view, ssim, AngleAccumulator, AngleMode, EvalFrame, TrainedDirections,
};

use crate::config::RunConfig;
use crate::report::{write_json, FrameMetrics, MetricsReport};
use crate::{usage, EvalArgs};

pub const METRICS_FILE: &str = "metrics.json";
pub const REPORT_FILE: &str = "report.txt";

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.run)?;
    let dataset = cfg.dataset()?;
    let format = cfg.sequence_format()?;
    if args.eval_skip == 0 {
        return Err(usage("--eval-skip must be at least 1"));
    }
    let mode: AngleMode = args
        .angle_mode
        .parse()
        .map_err(|e: nslf_core::Error| usage(e.to_string()))?;
    let mut angles =
        AngleAccumulator::new(&args.thresholds, mode).map_err(|e| usage(e.to_string()))?;

    let snapshot = read_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let model = snapshot
        .models
        .values()
        .next()
        .map_or_else(|| "none".to_string(), |m| m.kind().to_string());
    let (mesh, _) =
        load_mesh(&args.mesh).with_context(|| format!("loading mesh {}", args.mesh.display()))?;
    let bvh = build_bvh(&mesh)?;

    let train_dataset = args.train_dataset.as_deref().unwrap_or(dataset);
    let mut trained = TrainedDirections::new(args.voxel).map_err(|e| usage(e.to_string()))?;
    for frame in read_sequence(train_dataset, format, cfg.skip)? {
        let frame = frame?;
        let batch = unproject_frame(
            &frame.depth,
            &frame.color,
            &frame.intrinsics,
            &frame.pose,
            cfg.stride,
        )?;
        trained.add_frame(&frame.pose, &batch);
    }
    if trained.is_empty() {
        warn!(
            "no training directions from {}; every pixel is unobserved",
            train_dataset.display()
        );
    }

    let mut frames = Vec::new();
    for frame in read_sequence(dataset, format, args.eval_skip)? {
        let frame = frame?;
        let mut gt = frame.color;
        gt.mask = Some(
            frame
                .depth
                .data
                .iter()
                .map(|&z| is_valid_depth(z as f64))
                .collect(),
        );
        let t = Instant::now();
        let view = render_view(&snapshot, &bvh, &mesh, &frame.intrinsics, &frame.pose)?;
        let render_ms = t.elapsed().as_secs_f64() * 1e3;
        let valid_pixels = (0..gt.pixels.len())
            .filter(|&i| gt.is_valid(i) && view.image.is_valid(i))
            .count();
        let eval = EvalFrame {
            pose: frame.pose,
            intrinsics: frame.intrinsics,
            image: gt,
        };
        angles.add_view(&view, &eval, &trained)?;
        let metrics = FrameMetrics {
            index: frame.index,
            timestamp: frame.timestamp,
            psnr: (valid_pixels > 0)
                .then(|| psnr(&view.image, &eval.image))
                .transpose()?,
            ssim: ssim(&view.image, &eval.image).ok(),
            valid_pixels,
            covered_pixels: view.covered,
            render_ms,
        };
        info!(
            "frame {}: psnr {:?} ssim {:?} over {valid_pixels} pixels",
            metrics.index, metrics.psnr, metrics.ssim
        );
        frames.push(metrics);
    }
    let report = MetricsReport::new(
        args.checkpoint.clone(),
        dataset.to_path_buf(),
        model,
        frames,
        angles.finish(),
    );
    let text = report.to_text();
    print!("{text}");
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_json(&report, &out.join(METRICS_FILE))?;
        fs::write(out.join(REPORT_FILE), &text)
            .with_context(|| format!("writing report in {}", out.display()))?;
        info!(
            "wrote {} and {} to {}",
            METRICS_FILE,
            REPORT_FILE,
            out.display()
        );
    }
    Ok(())
}
