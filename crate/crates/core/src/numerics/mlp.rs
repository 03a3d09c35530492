use rand::Rng;

use super::{Activation, DenseLayer, GradBundle, Parameters};
use crate::{Error, Real, Result};

/// A stack of dense layers. Layer `i`'s output feeds layer `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

/// Per-layer activations retained by [`Mlp::forward`] for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache<T> {
    /// `inputs[i]` is the input to layer `i`.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
    dims: Vec<(usize, usize)>,
}

impl<T> MlpCache<T> {
    pub fn output(&self) -> &[T] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-initialised MLP with `dims = [in, hidden.., out]`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
            dims: self
                .layers
                .iter()
                .map(|l| (l.in_dim(), l.out_dim()))
                .collect(),
        };
        let mut input = x.to_vec();
        for layer in &self.layers {
            let mut pre = Vec::with_capacity(layer.out_dim());
            let mut out = Vec::with_capacity(layer.out_dim());
            layer.forward_into(&input, &mut pre, &mut out);
            cache
                .inputs
                .push(std::mem::replace(&mut input, out.clone()));
            cache.pre.push(pre);
            cache.post.push(out);
        }
        Ok((input, cache))
    }

    /// Reverse pass for `y · grad_y`. Returns fresh gradients and `∂/∂x`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_y: &[T]) -> Result<(GradBundle<T>, Vec<T>)> {
        let mut grads = GradBundle::zeros_like(self);
        let grad_x = self.backward_accumulate(cache, grad_y, &mut grads.tensors)?;
        Ok((grads, grad_x))
    }

    /// Like [`Mlp::backward`] but adds into `grads` (ordered `w0, b0, w1, b1, ..`).
    pub fn backward_accumulate(
        &self,
        cache: &MlpCache<T>,
        grad_y: &[T],
        grads: &mut [Vec<T>],
    ) -> Result<Vec<T>> {
        let dims: Vec<_> = self
            .layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim()))
            .collect();
        if cache.dims != dims || cache.inputs.len() != self.layers.len() {
            return Err(Error::Shape("MLP cache does not match this network".into()));
        }
        if grad_y.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient has {} entries, MLP outputs {}",
                grad_y.len(),
                self.out_dim()
            )));
        }
        if grads.len() != 2 * self.layers.len() {
            return Err(Error::Shape(
                "gradient bundle does not match this network".into(),
            ));
        }
        let mut g = grad_y.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gw, rest) = grads[2 * i..].split_first_mut().expect("checked length");
            g = layer.backward_into(
                &cache.inputs[i],
                &cache.pre[i],
                &cache.post[i],
                &g,
                gw,
                &mut rest[0],
            );
        }
        Ok(g)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
        }
    }
}

impl<T: Real> Parameters<T> for Mlp<T> {
    fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}
