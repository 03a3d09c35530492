//! Trainable color models over a region's unit cube.
//!
//! Both models map a surface point `p ∈ [0,1]³` and a unit view direction
//! `d` to an RGB color in `(0,1)³`:
//!
//! - [`NslfModel`] predicts spherical-harmonic coefficients of a small
//!   latent from the position encoding, decodes the latent analytically at
//!   `d`, and maps it to RGB through a per-point MLP whose weights are also
//!   predicted from the position encoding.
//! - [`HgModel`] concatenates the position encoding with the SH basis of
//!   `d` and decodes with a plain MLP.

mod checkpoint;
mod hg;
mod nslf;
mod train;

pub use checkpoint::{read_model_blob, write_model_blob, MODEL_BLOB_MAGIC, MODEL_BLOB_VERSION};
pub use hg::{HgCache, HgConfig, HgModel};
pub use nslf::{HyperShape, NslfCache, NslfConfig, NslfModel};
pub use train::{loss_and_grad, train_steps, Learner, TrainTrace};

use rand::Rng;

use crate::numerics::{GradBundle, Parameters};
use crate::{Error, Real, Result};

/// Common interface of the trainable color models.
pub trait ColorModel<T: Real>: Parameters<T> + Clone + Send + Sync {
    type Cache;

    fn forward(&self, p: [T; 3], d: [T; 3]) -> Result<([T; 3], Self::Cache)>;

    /// Adds `∂(rgb · grad_rgb)/∂θ` into `grads`.
    fn backward_accumulate(
        &self,
        cache: &Self::Cache,
        grad_rgb: [T; 3],
        grads: &mut GradBundle<T>,
    ) -> Result<()>;

    fn predict(&self, p: [T; 3], d: [T; 3]) -> Result<[T; 3]> {
        self.forward(p, d).map(|(rgb, _)| rgb)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    NslfSh,
    Hg,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::NslfSh => 0,
            ModelKind::Hg => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::NslfSh => "nslf_sh",
            ModelKind::Hg => "hg",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nslf_sh" | "nslf" | "sh" => Ok(ModelKind::NslfSh),
            "hg" => Ok(ModelKind::Hg),
            other => Err(Error::Config(format!(
                "unknown model kind '{other}' (expected nslf_sh or hg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelConfig {
    Nslf(NslfConfig),
    Hg(HgConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Nslf(_) => ModelKind::NslfSh,
            ModelConfig::Hg(_) => ModelKind::Hg,
        }
    }

    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::NslfSh => ModelConfig::Nslf(NslfConfig::default()),
            ModelKind::Hg => ModelConfig::Hg(HgConfig::default()),
        }
    }

    pub fn grid(&self) -> crate::encoding::HashGridConfig {
        match self {
            ModelConfig::Nslf(c) => c.grid,
            ModelConfig::Hg(c) => c.grid,
        }
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<AnyModel<T>> {
        Ok(match self {
            ModelConfig::Nslf(c) => AnyModel::Nslf(NslfModel::new(*c, rng)?),
            ModelConfig::Hg(c) => AnyModel::Hg(HgModel::new(*c, rng)?),
        })
    }
}

/// Either model, for runtimes that pick the architecture from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel<T> {
    Nslf(NslfModel<T>),
    Hg(HgModel<T>),
}

pub enum AnyCache<T> {
    Nslf(NslfCache<T>),
    Hg(HgCache<T>),
}

impl<T: Real> AnyModel<T> {
    pub fn config(&self) -> ModelConfig {
        match self {
            AnyModel::Nslf(m) => ModelConfig::Nslf(*m.config()),
            AnyModel::Hg(m) => ModelConfig::Hg(*m.config()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind()
    }
}

impl<T: Real> Parameters<T> for AnyModel<T> {
    fn params(&self) -> Vec<&[T]> {
        match self {
            AnyModel::Nslf(m) => m.params(),
            AnyModel::Hg(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            AnyModel::Nslf(m) => m.params_mut(),
            AnyModel::Hg(m) => m.params_mut(),
        }
    }
}

impl<T: Real> ColorModel<T> for AnyModel<T> {
    type Cache = AnyCache<T>;

    fn forward(&self, p: [T; 3], d: [T; 3]) -> Result<([T; 3], AnyCache<T>)> {
        match self {
            AnyModel::Nslf(m) => m.forward(p, d).map(|(c, k)| (c, AnyCache::Nslf(k))),
            AnyModel::Hg(m) => m.forward(p, d).map(|(c, k)| (c, AnyCache::Hg(k))),
        }
    }

    fn backward_accumulate(
        &self,
        cache: &AnyCache<T>,
        grad_rgb: [T; 3],
        grads: &mut GradBundle<T>,
    ) -> Result<()> {
        match (self, cache) {
            (AnyModel::Nslf(m), AnyCache::Nslf(c)) => m.backward_accumulate(c, grad_rgb, grads),
            (AnyModel::Hg(m), AnyCache::Hg(c)) => m.backward_accumulate(c, grad_rgb, grads),
            _ => Err(Error::Shape(
                "forward cache belongs to a different model kind".into(),
            )),
        }
    }
}

/// Region-local training samples: unit-cube points, unit directions, RGB.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainBatch<T> {
    pub points: Vec<[T; 3]>,
    pub dirs: Vec<[T; 3]>,
    pub colors: Vec<[T; 3]>,
}

impl<T: Real> TrainBatch<T> {
    pub fn new(points: Vec<[T; 3]>, dirs: Vec<[T; 3]>, colors: Vec<[T; 3]>) -> Result<Self> {
        if points.len() != dirs.len() || points.len() != colors.len() {
            return Err(Error::Shape(format!(
                "batch arrays differ in length: {} points, {} dirs, {} colors",
                points.len(),
                dirs.len(),
                colors.len()
            )));
        }
        if let Some(p) = points
            .iter()
            .find(|p| p.iter().any(|&c| !(c >= T::zero() && c <= T::one())))
        {
            return Err(Error::Domain(format!(
                "batch point ({}, {}, {}) outside the unit cube",
                p[0], p[1], p[2]
            )));
        }
        Ok(TrainBatch {
            points,
            dirs,
            colors,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: [T; 3], d: [T; 3], c: [T; 3]) {
        self.points.push(p);
        self.dirs.push(d);
        self.colors.push(c);
    }

    pub fn cast<U: Real>(&self) -> TrainBatch<U> {
        let conv = |v: &Vec<[T; 3]>| v.iter().map(|a| a.map(|x| U::lit(x.as_f64()))).collect();
        TrainBatch {
            points: conv(&self.points),
            dirs: conv(&self.dirs),
            colors: conv(&self.colors),
        }
    }
}

impl<T> AsRef<TrainBatch<T>> for TrainBatch<T> {
    fn as_ref(&self) -> &TrainBatch<T> {
        self
    }
}
