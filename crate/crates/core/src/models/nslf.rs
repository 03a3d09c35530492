use rand::Rng;

use super::ColorModel;
use crate::encoding::{
    checked_direction, sh_basis_into, sh_dim, GridCache, HashGrid, HashGridConfig, MAX_SH_DEGREE,
};
use crate::numerics::{sigmoid, Activation, GradBundle, Mlp, MlpCache, Parameters};
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NslfConfig {
    pub grid: HashGridConfig,
    pub sh_degree: usize,
    /// Channels of the directional latent `s`; 1 is the scalar variant.
    pub latent_channels: usize,
    pub head_width: usize,
    /// Dense layers per head (including the linear output layer).
    pub head_layers: usize,
    pub hyper_hidden: usize,
}

impl Default for NslfConfig {
    fn default() -> Self {
        NslfConfig {
            grid: HashGridConfig::default(),
            sh_degree: 3,
            latent_channels: 3,
            head_width: 32,
            head_layers: 2,
            hyper_hidden: 16,
        }
    }
}

impl NslfConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!(
                "SH degree {} unsupported",
                self.sh_degree
            )));
        }
        if self.latent_channels == 0
            || self.head_width == 0
            || self.head_layers == 0
            || self.hyper_hidden == 0
        {
            return Err(Error::Config(
                "NSLF widths and depths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperShape {
        HyperShape {
            latent: self.latent_channels,
            hidden: self.hyper_hidden,
        }
    }

    pub fn sh_coefficients(&self) -> usize {
        self.latent_channels * sh_dim(self.sh_degree)
    }
}

/// Layout of the per-point color MLP `latent → hidden (ReLU) → RGB (sigmoid)`
/// whose weights are predicted by the `w` head.
///
/// The flat weight vector is `[W1 (hidden×latent), b1, W2 (3×hidden), b2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperShape {
    pub latent: usize,
    pub hidden: usize,
}

impl HyperShape {
    pub fn param_count(&self) -> usize {
        self.hidden * self.latent + self.hidden + 3 * self.hidden + 3
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.latent;
        let w2 = b1 + self.hidden;
        let b2 = w2 + 3 * self.hidden;
        (b1, w2, b2)
    }
}

/// SH-decoded surface light field model over one region.
#[derive(Debug, Clone, PartialEq)]
pub struct NslfModel<T> {
    config: NslfConfig,
    pub grid: HashGrid<T>,
    /// Position features → SH coefficients, `latent_channels` sets of `(l_max+1)²`.
    pub head_sh: Mlp<T>,
    /// Position features → weights of the per-point color MLP.
    pub head_w: Mlp<T>,
}

pub struct NslfCache<T> {
    grid: GridCache<T>,
    sh: MlpCache<T>,
    w: MlpCache<T>,
    basis: [T; 16],
    latent: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    rgb: [T; 3],
}

fn head_dims(input: usize, width: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(width, layers - 1));
    dims.push(output);
    dims
}

impl<T: Real> NslfModel<T> {
    pub fn new<R: Rng + ?Sized>(config: NslfConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let grid = HashGrid::new(config.grid, rng)?;
        let feat = config.grid.output_dim();
        let head_sh = Mlp::glorot(
            &head_dims(
                feat,
                config.head_width,
                config.head_layers,
                config.sh_coefficients(),
            ),
            Activation::Relu,
            Activation::None,
            rng,
        )?;
        let hyper = config.hyper();
        let mut head_w = Mlp::glorot(
            &head_dims(
                feat,
                config.head_width,
                config.head_layers,
                hyper.param_count(),
            ),
            Activation::Relu,
            Activation::None,
            rng,
        )?;
        // The w head starts out emitting a Glorot-initialised color MLP for
        // every point instead of an all-zero one.
        let (b1, w2, b2) = hyper.offsets();
        let last = head_w.layers_mut().last_mut().expect("non-empty head");
        let lim1 = (6.0 / (hyper.latent + hyper.hidden) as f64).sqrt();
        let lim2 = (6.0 / (hyper.hidden + 3) as f64).sqrt();
        for (i, b) in last.bias.iter_mut().enumerate() {
            *b = if i < b1 {
                T::lit(rng.gen_range(-lim1..lim1))
            } else if (w2..b2).contains(&i) {
                T::lit(rng.gen_range(-lim2..lim2))
            } else {
                T::zero()
            };
        }
        Ok(NslfModel {
            config,
            grid,
            head_sh,
            head_w,
        })
    }

    pub fn config(&self) -> &NslfConfig {
        &self.config
    }

    /// The decoded directional latent `s` at `(p, d)`.
    pub fn latent(&self, p: [T; 3], d: [T; 3]) -> Result<Vec<T>> {
        let d = checked_direction(d)?;
        let (f, _) = self.grid.encode(p)?;
        let (coeffs, _) = self.head_sh.forward(&f)?;
        let mut basis = [T::zero(); 16];
        sh_basis_into(d, self.config.sh_degree, &mut basis);
        Ok(self.decode_latent(&coeffs, &basis))
    }

    fn decode_latent(&self, coeffs: &[T], basis: &[T; 16]) -> Vec<T> {
        let n = sh_dim(self.config.sh_degree);
        coeffs
            .chunks_exact(n)
            .map(|c| {
                c.iter()
                    .zip(&basis[..n])
                    .fold(T::zero(), |acc, (&v, &y)| acc + v * y)
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> NslfModel<U> {
        NslfModel {
            config: self.config,
            grid: self.grid.cast(),
            head_sh: self.head_sh.cast(),
            head_w: self.head_w.cast(),
        }
    }
}

impl<T: Real> ColorModel<T> for NslfModel<T> {
    type Cache = NslfCache<T>;

    fn forward(&self, p: [T; 3], d: [T; 3]) -> Result<([T; 3], NslfCache<T>)> {
        let d = checked_direction(d)?;
        let (f, grid) = self.grid.encode(p)?;
        let (coeffs, sh) = self.head_sh.forward(&f)?;
        let (w, w_cache) = self.head_w.forward(&f)?;

        let mut basis = [T::zero(); 16];
        sh_basis_into(d, self.config.sh_degree, &mut basis);
        let latent = self.decode_latent(&coeffs, &basis);

        let hyper = self.config.hyper();
        let (b1, w2, b2) = hyper.offsets();
        let mut hidden_pre = Vec::with_capacity(hyper.hidden);
        let mut hidden = Vec::with_capacity(hyper.hidden);
        for j in 0..hyper.hidden {
            let row = &w[j * hyper.latent..(j + 1) * hyper.latent];
            let z = row
                .iter()
                .zip(&latent)
                .fold(w[b1 + j], |acc, (&a, &s)| acc + a * s);
            hidden_pre.push(z);
            hidden.push(z.max(T::zero()));
        }
        let mut rgb = [T::zero(); 3];
        for (k, c) in rgb.iter_mut().enumerate() {
            let row = &w[w2 + k * hyper.hidden..w2 + (k + 1) * hyper.hidden];
            let o = row
                .iter()
                .zip(&hidden)
                .fold(w[b2 + k], |acc, (&a, &h)| acc + a * h);
            *c = sigmoid(o);
        }
        Ok((
            rgb,
            NslfCache {
                grid,
                sh,
                w: w_cache,
                basis,
                latent,
                hidden_pre,
                hidden,
                rgb,
            },
        ))
    }

    fn backward_accumulate(
        &self,
        cache: &NslfCache<T>,
        grad_rgb: [T; 3],
        grads: &mut GradBundle<T>,
    ) -> Result<()> {
        grads.check_shapes(&self.param_shapes())?;
        let hyper = self.config.hyper();
        let (b1, w2, b2) = hyper.offsets();
        let w = cache.w.output();
        if w.len() != hyper.param_count() || cache.latent.len() != hyper.latent {
            return Err(Error::Shape("NSLF cache does not match this model".into()));
        }

        let mut g_w = vec![T::zero(); hyper.param_count()];
        let mut g_hidden = vec![T::zero(); hyper.hidden];
        for k in 0..3 {
            let y = cache.rgb[k];
            let g_o = grad_rgb[k] * y * (T::one() - y);
            g_w[b2 + k] = g_o;
            for j in 0..hyper.hidden {
                g_w[w2 + k * hyper.hidden + j] = g_o * cache.hidden[j];
                g_hidden[j] = g_hidden[j] + g_o * w[w2 + k * hyper.hidden + j];
            }
        }
        let mut g_latent = vec![T::zero(); hyper.latent];
        for j in 0..hyper.hidden {
            if cache.hidden_pre[j] <= T::zero() {
                continue;
            }
            let g = g_hidden[j];
            g_w[b1 + j] = g;
            for c in 0..hyper.latent {
                g_w[j * hyper.latent + c] = g * cache.latent[c];
                g_latent[c] = g_latent[c] + g * w[j * hyper.latent + c];
            }
        }

        let n = sh_dim(self.config.sh_degree);
        let g_coeffs: Vec<T> = g_latent
            .iter()
            .flat_map(|&g| cache.basis[..n].iter().map(move |&y| g * y))
            .collect();

        let n_grid = self.config.grid.levels;
        let n_sh = 2 * self.head_sh.layers().len();
        let (grid_grads, rest) = grads.tensors.split_at_mut(n_grid);
        let (sh_grads, w_grads) = rest.split_at_mut(n_sh);
        let g_feat_sh = self
            .head_sh
            .backward_accumulate(&cache.sh, &g_coeffs, sh_grads)?;
        let g_feat_w = self.head_w.backward_accumulate(&cache.w, &g_w, w_grads)?;
        let g_feat: Vec<T> = g_feat_sh
            .iter()
            .zip(&g_feat_w)
            .map(|(&a, &b)| a + b)
            .collect();
        self.grid
            .backward_accumulate(&cache.grid, &g_feat, grid_grads)
    }
}

impl<T: Real> Parameters<T> for NslfModel<T> {
    fn params(&self) -> Vec<&[T]> {
        let mut v = self.grid.params();
        v.extend(self.head_sh.params());
        v.extend(self.head_w.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.grid.params_mut();
        v.extend(self.head_sh.params_mut());
        v.extend(self.head_w.params_mut());
        v
    }
}
