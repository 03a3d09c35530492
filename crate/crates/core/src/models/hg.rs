use rand::Rng;

use super::ColorModel;
use crate::encoding::{
    checked_direction, sh_basis_into, sh_dim, GridCache, HashGrid, HashGridConfig, MAX_SH_DEGREE,
};
use crate::numerics::{Activation, GradBundle, Mlp, MlpCache, Parameters};
use crate::{Error, Real, Result};

/// Hash-grid baseline: `decoder(concat(grid(p), Y(d)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgConfig {
    pub grid: HashGridConfig,
    pub sh_degree: usize,
    pub width: usize,
    /// Number of dense layers in the decoder, output layer included.
    pub layers: usize,
}

impl Default for HgConfig {
    fn default() -> Self {
        HgConfig {
            grid: HashGridConfig::default(),
            sh_degree: 3,
            width: 32,
            layers: 4,
        }
    }
}

impl HgConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!(
                "SH degree {} unsupported",
                self.sh_degree
            )));
        }
        if self.width == 0 || self.layers == 0 {
            return Err(Error::Config(
                "decoder width and depth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn decoder_input(&self) -> usize {
        self.grid.output_dim() + sh_dim(self.sh_degree)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HgModel<T> {
    config: HgConfig,
    pub grid: HashGrid<T>,
    pub decoder: Mlp<T>,
}

pub struct HgCache<T> {
    grid: GridCache<T>,
    decoder: MlpCache<T>,
}

impl<T: Real> HgModel<T> {
    pub fn new<R: Rng + ?Sized>(config: HgConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let grid = HashGrid::new(config.grid, rng)?;
        let mut dims = vec![config.decoder_input()];
        dims.extend(std::iter::repeat_n(config.width, config.layers - 1));
        dims.push(3);
        let decoder = Mlp::glorot(&dims, Activation::Relu, Activation::Sigmoid, rng)?;
        Ok(HgModel {
            config,
            grid,
            decoder,
        })
    }

    pub fn config(&self) -> &HgConfig {
        &self.config
    }

    pub fn cast<U: Real>(&self) -> HgModel<U> {
        HgModel {
            config: self.config,
            grid: self.grid.cast(),
            decoder: self.decoder.cast(),
        }
    }
}

impl<T: Real> ColorModel<T> for HgModel<T> {
    type Cache = HgCache<T>;

    fn forward(&self, p: [T; 3], d: [T; 3]) -> Result<([T; 3], HgCache<T>)> {
        let d = checked_direction(d)?;
        let (mut x, grid) = self.grid.encode(p)?;
        let n = sh_dim(self.config.sh_degree);
        let mut basis = [T::zero(); 16];
        sh_basis_into(d, self.config.sh_degree, &mut basis);
        x.extend_from_slice(&basis[..n]);
        let (y, decoder) = self.decoder.forward(&x)?;
        Ok(([y[0], y[1], y[2]], HgCache { grid, decoder }))
    }

    fn backward_accumulate(
        &self,
        cache: &HgCache<T>,
        grad_rgb: [T; 3],
        grads: &mut GradBundle<T>,
    ) -> Result<()> {
        grads.check_shapes(&self.param_shapes())?;
        let (grid_grads, dec_grads) = grads.tensors.split_at_mut(self.config.grid.levels);
        let g_x = self
            .decoder
            .backward_accumulate(&cache.decoder, &grad_rgb, dec_grads)?;
        let feat = self.config.grid.output_dim();
        self.grid
            .backward_accumulate(&cache.grid, &g_x[..feat], grid_grads)
    }
}

impl<T: Real> Parameters<T> for HgModel<T> {
    fn params(&self) -> Vec<&[T]> {
        let mut v = self.grid.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.grid.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::{finite_diff_check, CoordSelection};

    fn small_config() -> HgConfig {
        HgConfig {
            grid: HashGridConfig {
                levels: 3,
                features: 2,
                log2_table_size: 8,
                base_resolution: 2,
                max_resolution: 8,
            },
            ..HgConfig::default()
        }
    }

    #[test]
    fn default_decoder_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = HgModel::<f32>::new(HgConfig::default(), &mut rng).unwrap();
        let dims: Vec<_> = m
            .decoder
            .layers()
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        assert_eq!(dims, vec![(32, 32), (32, 32), (32, 32), (32, 3)]);
    }

    #[test]
    fn zero_decoder_gives_mid_gray() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = HgModel::<f64>::new(small_config(), &mut rng).unwrap();
        for t in m.decoder.params_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        for _ in 0..20 {
            let p = [rng.gen(), rng.gen(), rng.gen()];
            assert_eq!(m.predict(p, [0.0, 1.0, 0.0]).unwrap(), [0.5; 3]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..4 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
            let mut model = HgModel::<f64>::new(small_config(), &mut rng).unwrap();
            for t in model.grid.params_mut() {
                t.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            }
            let samples: Vec<([f64; 3], [f64; 3], [f64; 3])> = (0..16)
                .map(|_| {
                    let v: [f64; 3] = [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    (
                        [rng.gen(), rng.gen(), rng.gen()],
                        v.map(|c| c / n),
                        [rng.gen_range(-1.0..1.0), 0.5, -0.25],
                    )
                })
                .collect();
            let mut grads = GradBundle::zeros_like(&model);
            for (p, d, g) in &samples {
                let (_, cache) = model.forward(*p, *d).unwrap();
                model.backward_accumulate(&cache, *g, &mut grads).unwrap();
            }
            let f = |m: &HgModel<f64>| {
                samples
                    .iter()
                    .map(|(p, d, g)| {
                        let c = m.predict(*p, *d).unwrap();
                        c[0] * g[0] + c[1] * g[1] + c[2] * g[2]
                    })
                    .sum::<f64>()
            };
            let report = finite_diff_check(
                &mut model,
                &grads,
                f,
                1e-5,
                &CoordSelection::Sample {
                    per_tensor: 40,
                    seed,
                },
            );
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }
}
