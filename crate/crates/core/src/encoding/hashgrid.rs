//! Multi-resolution hash-grid feature field.
//!
//! Each level is a table of `T × F` trainable entries addressed by a spatial
//! hash of integer lattice vertices. A query point in the unit cube is
//! encoded by trilinearly interpolating the 8 surrounding vertex entries on
//! every level and concatenating the per-level results.

use rand::Rng;

use crate::numerics::Parameters;
use crate::{Error, Real, Result};

pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Initial entries are drawn from `±INIT_SCALE`.
const INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features: usize,
    /// log2 of the per-level table size.
    pub log2_table_size: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            features: 2,
            log2_table_size: 14,
            base_resolution: 16,
            max_resolution: 512,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features == 0 {
            return Err(Error::Config(
                "hash grid needs at least one level and feature".into(),
            ));
        }
        if self.log2_table_size == 0 || self.log2_table_size > 30 {
            return Err(Error::Config(format!(
                "table size 2^{} is out of range",
                self.log2_table_size
            )));
        }
        if self.base_resolution == 0 || self.base_resolution > self.max_resolution {
            return Err(Error::Config(format!(
                "resolutions must satisfy 0 < {} <= {}",
                self.base_resolution, self.max_resolution
            )));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    /// Geometric per-level growth factor.
    pub fn growth(&self) -> f64 {
        if self.levels == 1 {
            return 1.0;
        }
        let (lo, hi) = (self.base_resolution as f64, self.max_resolution as f64);
        ((hi.ln() - lo.ln()) / (self.levels - 1) as f64).exp()
    }

    /// Cells per axis at `level`: `floor(N_min · b^level)`.
    pub fn resolution(&self, level: usize) -> u32 {
        let r = (self.base_resolution as f64 * self.growth().powi(level as i32)).floor() as u32;
        // exp/ln roundoff can land just under an integer at the top level
        if level + 1 == self.levels && self.levels > 1 {
            r.max(self.max_resolution)
        } else {
            r
        }
    }

    pub fn resolutions(&self) -> Vec<u32> {
        (0..self.levels).map(|l| self.resolution(l)).collect()
    }
}

/// Spatial hash of a lattice vertex: `(x·π1 ⊕ y·π2 ⊕ z·π3) mod T` with
/// wrapping 32-bit products. `table_size` must be a power of two.
#[inline]
pub fn hash_index(cell: [u32; 3], table_size: usize) -> usize {
    debug_assert!(table_size.is_power_of_two());
    let h = cell[0].wrapping_mul(HASH_PRIMES[0])
        ^ cell[1].wrapping_mul(HASH_PRIMES[1])
        ^ cell[2].wrapping_mul(HASH_PRIMES[2]);
    (h as usize) & (table_size - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<T> {
    config: HashGridConfig,
    /// One `T × F` row-major table per level.
    tables: Vec<Vec<T>>,
}

/// Table indices and trilinear weights of the 8 corners on every level.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCache<T> {
    pub corners: Vec<[(usize, T); 8]>,
}

/// Gradient restricted to the entries a single query touched.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGridGrad<T> {
    /// `(level, table index, per-feature gradient)`; indices unique per level.
    pub entries: Vec<(usize, usize, Vec<T>)>,
}

impl<T: Real> HashGrid<T> {
    pub fn new<R: Rng + ?Sized>(config: HashGridConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.table_size() * config.features;
        let tables = (0..config.levels)
            .map(|_| {
                (0..n)
                    .map(|_| T::lit(rng.gen_range(-INIT_SCALE..INIT_SCALE)))
                    .collect()
            })
            .collect();
        Ok(HashGrid { config, tables })
    }

    pub fn constant(config: HashGridConfig, value: T) -> Result<Self> {
        config.validate()?;
        let n = config.table_size() * config.features;
        Ok(HashGrid {
            config,
            tables: vec![vec![value; n]; config.levels],
        })
    }

    pub fn config(&self) -> &HashGridConfig {
        &self.config
    }

    pub fn tables(&self) -> &[Vec<T>] {
        &self.tables
    }

    pub fn entry(&self, level: usize, index: usize) -> &[T] {
        let f = self.config.features;
        &self.tables[level][index * f..(index + 1) * f]
    }

    pub fn entry_mut(&mut self, level: usize, index: usize) -> &mut [T] {
        let f = self.config.features;
        &mut self.tables[level][index * f..(index + 1) * f]
    }

    /// Corner indices and weights for `p` on one level.
    fn corners(&self, p: [T; 3], level: usize) -> [(usize, T); 8] {
        let res = self.config.resolution(level);
        let t = self.config.table_size();
        let mut base = [0u32; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let x = p[a] * T::lit(res as f64);
            let c = x.floor().to_u32().unwrap_or(0).min(res - 1);
            base[a] = c;
            frac[a] = x - T::lit(c as f64);
        }
        let mut out = [(0usize, T::zero()); 8];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut w = T::one();
            let mut cell = base;
            for a in 0..3 {
                if (k >> a) & 1 == 1 {
                    cell[a] += 1;
                    w = w * frac[a];
                } else {
                    w = w * (T::one() - frac[a]);
                }
            }
            *slot = (hash_index(cell, t), w);
        }
        out
    }

    fn check_point(p: [T; 3]) -> Result<()> {
        if p.iter().all(|&c| c >= T::zero() && c <= T::one()) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "grid query ({}, {}, {}) lies outside the unit cube",
                p[0], p[1], p[2]
            )))
        }
    }

    /// Encodes a unit-cube point into `levels · features` values.
    pub fn encode(&self, p: [T; 3]) -> Result<(Vec<T>, GridCache<T>)> {
        Self::check_point(p)?;
        let f = self.config.features;
        let mut out = vec![T::zero(); self.config.output_dim()];
        let mut cache = GridCache {
            corners: Vec::with_capacity(self.config.levels),
        };
        for level in 0..self.config.levels {
            let corners = self.corners(p, level);
            let dst = &mut out[level * f..(level + 1) * f];
            for &(idx, w) in &corners {
                for (o, &e) in dst.iter_mut().zip(self.entry(level, idx)) {
                    *o = *o + w * e;
                }
            }
            cache.corners.push(corners);
        }
        Ok((out, cache))
    }

    /// Sparse reverse pass; zero contributions are omitted and hash
    /// collisions within a level are merged.
    pub fn backward(&self, cache: &GridCache<T>, grad_out: &[T]) -> Result<SparseGridGrad<T>> {
        self.check_grad_len(cache, grad_out)?;
        let f = self.config.features;
        let mut grad = SparseGridGrad::default();
        for (level, corners) in cache.corners.iter().enumerate() {
            let g = &grad_out[level * f..(level + 1) * f];
            if g.iter().all(|&v| v == T::zero()) {
                continue;
            }
            let start = grad.entries.len();
            for &(idx, w) in corners {
                if w == T::zero() {
                    continue;
                }
                let contrib: Vec<T> = g.iter().map(|&gi| gi * w).collect();
                match grad.entries[start..].iter_mut().find(|(_, i, _)| *i == idx) {
                    Some((_, _, acc)) => {
                        acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a = *a + c)
                    }
                    None => grad.entries.push((level, idx, contrib)),
                }
            }
        }
        Ok(grad)
    }

    /// Dense-accumulating reverse pass into per-level gradient tables.
    pub fn backward_accumulate(
        &self,
        cache: &GridCache<T>,
        grad_out: &[T],
        grads: &mut [Vec<T>],
    ) -> Result<()> {
        self.check_grad_len(cache, grad_out)?;
        if grads.len() != self.config.levels {
            return Err(Error::Shape(
                "grid gradient needs one tensor per level".into(),
            ));
        }
        let f = self.config.features;
        for (level, corners) in cache.corners.iter().enumerate() {
            let g = &grad_out[level * f..(level + 1) * f];
            let dst = &mut grads[level];
            for &(idx, w) in corners {
                for (k, &gi) in g.iter().enumerate() {
                    dst[idx * f + k] = dst[idx * f + k] + gi * w;
                }
            }
        }
        Ok(())
    }

    fn check_grad_len(&self, cache: &GridCache<T>, grad_out: &[T]) -> Result<()> {
        if cache.corners.len() != self.config.levels || grad_out.len() != self.config.output_dim() {
            return Err(Error::Shape(
                "grid cache or gradient does not match this grid".into(),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> HashGrid<U> {
        HashGrid {
            config: self.config,
            tables: self
                .tables
                .iter()
                .map(|t| t.iter().map(|v| U::lit(v.as_f64())).collect())
                .collect(),
        }
    }
}

impl<T: Real> Parameters<T> for HashGrid<T> {
    fn params(&self) -> Vec<&[T]> {
        self.tables.iter().map(Vec::as_slice).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.tables.iter_mut().map(Vec::as_mut_slice).collect()
    }
}
