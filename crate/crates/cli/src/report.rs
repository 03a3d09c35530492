//! Machine-readable reports. Every report carries `schema_version`; the
//! text summaries are derived from these structures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use nslf_core::mana::RegionIndex;
use nslf_core::render::AngleReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedRecord {
    pub index: usize,
    pub timestamp: f64,
    pub points: usize,
    pub rejected: usize,
    pub feed_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub region: RegionIndex,
    pub trained_iters: u64,
    pub granted: u64,
    pub skipped: u64,
    pub errors: u64,
    pub memory_points: usize,
    /// Mean loss over the iterations trained after each fed frame.
    pub smoothed_loss: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub schema_version: u32,
    pub config: RunConfig,
    pub frames: Vec<FeedRecord>,
    pub agents: Vec<AgentRecord>,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderRecord {
    pub file: String,
    pub timestamp: f64,
    pub render_ms: f64,
    pub hit_pixels: usize,
    pub covered_pixels: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderLog {
    pub schema_version: u32,
    pub checkpoint: PathBuf,
    pub frames: Vec<RenderRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub timestamp: f64,
    /// `None` when no pixel is valid in both images.
    pub psnr: Option<f64>,
    /// `None` when no SSIM window is fully valid.
    pub ssim: Option<f64>,
    pub valid_pixels: usize,
    pub covered_pixels: usize,
    pub render_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub model: String,
    pub frames: Vec<FrameMetrics>,
    /// Means of the per-frame columns over frames where they are defined.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_render_ms: f64,
    pub angle: AngleReport,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn new(
        checkpoint: PathBuf,
        dataset: PathBuf,
        model: String,
        frames: Vec<FrameMetrics>,
        angle: AngleReport,
    ) -> Self {
        MetricsReport {
            schema_version: SCHEMA_VERSION,
            checkpoint,
            dataset,
            model,
            mean_psnr: mean(frames.iter().filter_map(|f| f.psnr)),
            mean_ssim: mean(frames.iter().filter_map(|f| f.ssim)),
            mean_render_ms: mean(frames.iter().map(|f| f.render_ms)).unwrap_or(0.0),
            frames,
            angle,
        }
    }

    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, digits: usize| {
            v.map_or("n/a".to_string(), |v| format!("{v:.digits$}"))
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "checkpoint {} ({})",
            self.checkpoint.display(),
            self.model
        );
        let _ = writeln!(s, "dataset    {}", self.dataset.display());
        let _ = writeln!(
            s,
            "{:>6} {:>12} {:>9} {:>7} {:>8} {:>9}",
            "frame", "timestamp", "psnr", "ssim", "valid", "ms"
        );
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{:>6} {:>12.4} {:>9} {:>7} {:>8} {:>9.1}",
                f.index,
                f.timestamp,
                opt(f.psnr, 2),
                opt(f.ssim, 4),
                f.valid_pixels,
                f.render_ms
            );
        }
        let _ = writeln!(
            s,
            "mean psnr {} dB, mean ssim {}, mean render {:.1} ms over {} frames",
            opt(self.mean_psnr, 2),
            opt(self.mean_ssim, 4),
            self.mean_render_ms,
            self.frames.len()
        );
        let _ = writeln!(s, "angle buckets ({:?}):", self.angle.mode);
        for b in &self.angle.buckets {
            let _ = writeln!(
                s,
                "  ≤{:>5.1}°  {:>9} px  psnr {}",
                b.max_angle_deg,
                b.pixels,
                opt(b.psnr, 2)
            );
        }
        let _ = writeln!(
            s,
            "  unobserved {} px, beyond largest threshold {} px",
            self.angle.unobserved, self.angle.beyond
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use nslf_core::render::{AngleBucket, AngleMode};

    use super::*;

    fn frame(index: usize, psnr: Option<f64>, ssim: Option<f64>) -> FrameMetrics {
        FrameMetrics {
            index,
            timestamp: index as f64,
            psnr,
            ssim,
            valid_pixels: 10,
            covered_pixels: 10,
            render_ms: 2.0 * index as f64,
        }
    }

    fn report() -> MetricsReport {
        let angle = AngleReport {
            mode: AngleMode::PerPoint,
            buckets: vec![AngleBucket {
                max_angle_deg: 15.0,
                pixels: 3,
                psnr: Some(30.0),
            }],
            unobserved: 1,
            beyond: 2,
        };
        let frames = vec![
            frame(0, Some(20.0), Some(0.5)),
            frame(1, None, None),
            frame(2, Some(30.0), Some(0.7)),
        ];
        MetricsReport::new("ckpt".into(), "data".into(), "hg".into(), frames, angle)
    }

    #[test]
    fn aggregates_are_means_of_the_frame_columns() {
        let r = report();
        assert_eq!(r.mean_psnr, Some(25.0));
        assert!((r.mean_ssim.unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(r.mean_render_ms, 2.0);
        assert_eq!(r.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn json_round_trip_and_text_rendering() {
        let r = report();
        let back: MetricsReport =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.contains("mean psnr 25.00 dB"));
        assert!(text.contains("n/a"));
        assert!(text.contains("unobserved 1 px"));
    }
}
