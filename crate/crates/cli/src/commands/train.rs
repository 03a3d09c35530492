use std::collections::BTreeMap;
use std::fs;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use log::{info, warn};
use nslf_core::ingest::{read_sequence, unproject_frame};
use nslf_core::mana::{write_checkpoint, DrainPolicy, ManaRuntime, RegionIndex};

use crate::config::{RunArgs, RunConfig};
use crate::report::{write_json, AgentRecord, FeedRecord, TrainLog, SCHEMA_VERSION};

pub const TRAIN_LOG: &str = "train_log.json";

/// Generous bound for draining or settling; training itself is bounded by
/// the granted budgets.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(24 * 3600);

/// Mean loss between consecutive `marks` (loss counts recorded after each
/// frame) and after the last mark; empty segments are dropped.
fn smoothed(losses: &[f32], marks: &[usize]) -> Vec<f64> {
    let mut bounds: Vec<usize> = marks.iter().map(|&m| m.min(losses.len())).collect();
    bounds.push(losses.len());
    let mut start = 0;
    let mut out = Vec::new();
    for end in bounds {
        if end > start {
            let seg = &losses[start..end];
            out.push(seg.iter().map(|&l| l as f64).sum::<f64>() / seg.len() as f64);
            start = end;
        }
    }
    out
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = RunConfig::resolve(args)?;
    let dataset = cfg.dataset()?;
    let out = cfg.out()?;
    let start = Instant::now();
    let reader = read_sequence(dataset, cfg.sequence_format()?, cfg.skip)
        .with_context(|| format!("opening sequence {}", dataset.display()))?;
    if reader.frame_count() == 0 {
        warn!(
            "{} contains no frames; writing an empty checkpoint",
            dataset.display()
        );
    }
    info!(
        "training {} on {} frames of {} (skip {}, {})",
        cfg.model,
        reader.frame_count(),
        dataset.display(),
        cfg.skip,
        if cfg.deterministic {
            "deterministic"
        } else {
            "asynchronous"
        }
    );
    let mut runtime = ManaRuntime::new(cfg.runtime_config()?)?;
    let mut frames = Vec::new();
    let mut marks: BTreeMap<RegionIndex, Vec<usize>> = BTreeMap::new();
    for frame in reader {
        let frame = frame?;
        let batch = unproject_frame(
            &frame.depth,
            &frame.color,
            &frame.intrinsics,
            &frame.pose,
            cfg.stride,
        )
        .with_context(|| format!("unprojecting frame {}", frame.index))?;
        let t = Instant::now();
        let ack = match runtime.feed_frame(&batch) {
            Ok(ack) => ack,
            Err(e) => {
                warn!("frame {}: feed failed: {e}", frame.index);
                continue;
            }
        };
        let feed_ms = t.elapsed().as_secs_f64() * 1e3;
        if cfg.deterministic {
            runtime.settle(DRAIN_TIMEOUT)?;
        }
        for s in runtime.stats() {
            marks
                .entry(s.region)
                .or_default()
                .push((s.trained_iters - s.skipped) as usize);
        }
        info!(
            "frame {} ({:.3}): {} points, {} outside the box, {} agents, feed {feed_ms:.2} ms",
            frame.index,
            frame.timestamp,
            batch.len(),
            ack.rejected.len(),
            runtime.agent_count()
        );
        frames.push(FeedRecord {
            index: frame.index,
            timestamp: frame.timestamp,
            points: batch.len(),
            rejected: ack.rejected.len(),
            feed_ms,
        });
    }
    let snapshot = runtime.quiesce_and_snapshot(DrainPolicy::Drain {
        timeout: DRAIN_TIMEOUT,
    })?;
    let agents: Vec<AgentRecord> = runtime
        .stats()
        .into_iter()
        .map(|s| AgentRecord {
            region: s.region,
            trained_iters: s.trained_iters,
            granted: s.granted,
            skipped: s.skipped,
            errors: s.errors,
            memory_points: s.memory_points,
            smoothed_loss: smoothed(
                &runtime.loss_history(s.region),
                marks.get(&s.region).map_or(&[][..], Vec::as_slice),
            ),
        })
        .collect();
    for a in &agents {
        if a.errors > 0 {
            warn!("agent {}: {} training errors", a.region, a.errors);
        }
        info!(
            "agent {}: {} iterations, {} points stored",
            a.region, a.trained_iters, a.memory_points
        );
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_checkpoint(&snapshot, out)?;
    let log = TrainLog {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        frames,
        agents,
        total_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&log, &out.join(TRAIN_LOG))?;
    info!(
        "wrote checkpoint with {} agents to {} in {:.1}s",
        snapshot.models.len(),
        out.display(),
        log.total_seconds
    );
    Ok(())
}
