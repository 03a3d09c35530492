//! Run configuration: defaults, then a `key = value` file, then
//! `NSLFOL_*` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use nslf_core::ingest::SequenceFormat;
use nslf_core::mana::{
    default_executors, RegionGridConfig, RuntimeConfig, Scheduler, DEFAULT_BATCH_SIZE,
    DEFAULT_QUOTA,
};
use nslf_core::models::{ModelConfig, ModelKind};
use serde::Serialize;

use crate::usage;

pub const DEFAULT_SKIP: usize = 20;
pub const DEFAULT_STRIDE: usize = 2;
pub const DEFAULT_CELL_EDGE: f64 = 4.0;
pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_N_MAX: u32 = 512;

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Configuration file of `key = value` lines; flags and environment
    /// variables override it.
    #[arg(long, env = "NSLFOL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Sequence directory.
    #[arg(long, env = "NSLFOL_DATASET")]
    pub dataset: Option<PathBuf>,
    /// Sequence layout: `tum` or `icl`.
    #[arg(long, env = "NSLFOL_FORMAT")]
    pub format: Option<String>,
    /// Keep every n-th frame.
    #[arg(long, env = "NSLFOL_SKIP")]
    pub skip: Option<usize>,
    /// `nslf_sh` or `hg`.
    #[arg(long, env = "NSLFOL_MODEL")]
    pub model: Option<String>,
    /// Region cell edge in metres.
    #[arg(long, env = "NSLFOL_CELL_EDGE")]
    pub cell_edge: Option<f64>,
    /// Training iterations granted per fed frame.
    #[arg(long, env = "NSLFOL_QUOTA")]
    pub quota: Option<u64>,
    #[arg(long, env = "NSLFOL_SEED")]
    pub seed: Option<u64>,
    /// Train on the calling thread after every frame; bit-reproducible.
    #[arg(long, env = "NSLFOL_DETERMINISTIC", num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    /// Worker threads shared by all agents.
    #[arg(long, env = "NSLFOL_EXECUTORS")]
    pub executors: Option<usize>,
    /// Output directory.
    #[arg(long, env = "NSLFOL_OUT")]
    pub out: Option<PathBuf>,
    /// Pixel stride when unprojecting training frames.
    #[arg(long, env = "NSLFOL_STRIDE")]
    pub stride: Option<usize>,
    #[arg(long, env = "NSLFOL_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "NSLFOL_LR")]
    pub lr: Option<f64>,
    /// Finest hash-grid resolution.
    #[arg(long, env = "NSLFOL_N_MAX")]
    pub n_max: Option<u32>,
    /// Scene box minimum corner, `x,y,z`.
    #[arg(long, env = "NSLFOL_B_MIN")]
    pub b_min: Option<String>,
    /// Scene box maximum corner, `x,y,z`.
    #[arg(long, env = "NSLFOL_B_MAX")]
    pub b_max: Option<String>,
    /// Cap on stored frame slices per agent.
    #[arg(long, env = "NSLFOL_MEMORY_CAP")]
    pub memory_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub format: String,
    pub skip: usize,
    pub model: String,
    pub cell_edge: f64,
    pub quota: u64,
    pub seed: u64,
    pub deterministic: bool,
    pub executors: usize,
    pub out: Option<PathBuf>,
    pub stride: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub n_max: u32,
    pub b_min: [f64; 3],
    pub b_max: [f64; 3],
    pub memory_cap: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = RegionGridConfig::default();
        RunConfig {
            dataset: None,
            format: SequenceFormat::TumAssoc.to_string(),
            skip: DEFAULT_SKIP,
            model: ModelKind::NslfSh.to_string(),
            cell_edge: DEFAULT_CELL_EDGE,
            quota: DEFAULT_QUOTA,
            seed: 0,
            deterministic: false,
            executors: default_executors(),
            out: None,
            stride: DEFAULT_STRIDE,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            n_max: DEFAULT_N_MAX,
            b_min: grid.b_min,
            b_max: grid.b_max,
            memory_cap: None,
        }
    }
}

const KEYS: &[&str] = &[
    "dataset",
    "format",
    "skip",
    "model",
    "cell_edge",
    "quota",
    "seed",
    "deterministic",
    "executors",
    "out",
    "stride",
    "batch_size",
    "lr",
    "n_max",
    "b_min",
    "b_max",
    "memory_cap",
];

/// Parses `key = value` lines; `#` starts a comment, `-` and `_` are
/// interchangeable in keys.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                n + 1
            )));
        };
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(usage(format!(
                "{}:{}: unknown key '{key}'",
                origin.display(),
                n + 1
            )));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value '{value}' for {key}")))
}

fn parse_vec3(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(usage(format!(
            "{key} needs three comma-separated numbers, got '{value}'"
        )));
    }
    Ok([
        parse(key, parts[0])?,
        parse(key, parts[1])?,
        parse(key, parts[2])?,
    ])
}

impl RunConfig {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "format" => self.format = value.to_string(),
            "skip" => self.skip = parse(key, value)?,
            "model" => self.model = value.to_string(),
            "cell_edge" => self.cell_edge = parse(key, value)?,
            "quota" => self.quota = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "deterministic" => self.deterministic = parse(key, value)?,
            "executors" => self.executors = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "stride" => self.stride = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "b_min" => self.b_min = parse_vec3(key, value)?,
            "b_max" => self.b_max = parse_vec3(key, value)?,
            "memory_cap" => self.memory_cap = Some(parse(key, value)?),
            other => return Err(usage(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config_text(&text, path)? {
                cfg.apply(&k, &v)?;
            }
        }
        let flags: [(&str, Option<String>); 17] = [
            (
                "dataset",
                args.dataset.as_ref().map(|p| p.display().to_string()),
            ),
            ("format", args.format.clone()),
            ("skip", args.skip.map(|v| v.to_string())),
            ("model", args.model.clone()),
            ("cell_edge", args.cell_edge.map(|v| v.to_string())),
            ("quota", args.quota.map(|v| v.to_string())),
            ("seed", args.seed.map(|v| v.to_string())),
            ("deterministic", args.deterministic.map(|v| v.to_string())),
            ("executors", args.executors.map(|v| v.to_string())),
            ("out", args.out.as_ref().map(|p| p.display().to_string())),
            ("stride", args.stride.map(|v| v.to_string())),
            ("batch_size", args.batch_size.map(|v| v.to_string())),
            ("lr", args.lr.map(|v| v.to_string())),
            ("n_max", args.n_max.map(|v| v.to_string())),
            ("b_min", args.b_min.clone()),
            ("b_max", args.b_max.clone()),
            ("memory_cap", args.memory_cap.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.apply(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sequence_format()?;
        self.model_kind()?;
        if self.skip == 0 || self.stride == 0 || self.batch_size == 0 || self.executors == 0 {
            return Err(usage(
                "skip, stride, batch_size and executors must be at least 1",
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(usage(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.runtime_config()?
            .validate()
            .map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn sequence_format(&self) -> Result<SequenceFormat> {
        self.format
            .parse()
            .map_err(|e: nslf_core::Error| usage(e.to_string()))
    }

    pub fn model_kind(&self) -> Result<ModelKind> {
        self.model
            .parse()
            .map_err(|e: nslf_core::Error| usage(e.to_string()))
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| usage("--dataset is required"))
    }

    pub fn out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| usage("--out is required"))
    }

    pub fn runtime_config(&self) -> Result<RuntimeConfig> {
        let grid = RegionGridConfig::new(self.b_min, self.b_max, self.cell_edge)
            .map_err(|e| usage(e.to_string()))?;
        let mut cfg = RuntimeConfig::new(grid, self.model_kind()?);
        match &mut cfg.model {
            ModelConfig::Nslf(m) => m.grid.max_resolution = self.n_max,
            ModelConfig::Hg(m) => m.grid.max_resolution = self.n_max,
        }
        cfg.adam.lr = self.lr;
        cfg.batch_size = self.batch_size;
        cfg.budget.quota = self.quota;
        cfg.seed = self.seed;
        cfg.memory_cap = self.memory_cap;
        cfg.scheduler = if self.deterministic {
            Scheduler::Deterministic
        } else {
            Scheduler::Threaded {
                executors: self.executors,
            }
        };
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_experimental_settings() {
        let cfg = RunConfig::default();
        assert_eq!(
            (cfg.skip, cfg.cell_edge, cfg.lr, cfg.n_max),
            (20, 4.0, 1e-3, 512)
        );
        assert_eq!(cfg.model, "nslf_sh");
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(
            &path,
            "# comment\nskip = 5\ncell-edge = 2.5 # inline\nmodel = hg\nb_min = -8, -8, -8\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(path),
            skip: Some(7),
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.skip, 7);
        assert_eq!(cfg.cell_edge, 2.5);
        assert_eq!(cfg.model, "hg");
        assert_eq!(cfg.b_min, [-8.0; 3]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let p = Path::new("x.conf");
        let err = parse_config_text("colour = red\n", p).unwrap_err();
        assert!(err.downcast_ref::<crate::UsageError>().is_some());
        assert!(err.to_string().contains("x.conf:1"));
        let args = RunArgs {
            model: Some("nerf".into()),
            ..RunArgs::default()
        };
        assert!(RunConfig::resolve(&args)
            .unwrap_err()
            .downcast_ref::<crate::UsageError>()
            .is_some());
    }

    #[test]
    fn runtime_config_carries_overrides() {
        let args = RunArgs {
            n_max: Some(256),
            quota: Some(17),
            deterministic: Some(true),
            ..RunArgs::default()
        };
        let rc = RunConfig::resolve(&args).unwrap().runtime_config().unwrap();
        assert_eq!(rc.model.grid().max_resolution, 256);
        assert_eq!(rc.budget.quota, 17);
        assert!(matches!(rc.scheduler, Scheduler::Deterministic));
    }
}
