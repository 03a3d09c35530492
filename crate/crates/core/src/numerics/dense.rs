use rand::Rng;

use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => sigmoid(z),
            Activation::None => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::None => T::one(),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

/// Numerically stable logistic function.
#[inline]
pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `y = activation(W x + b)` with `W` stored row-major as `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    in_dim: usize,
    out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> DenseLayer<T> {
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<T>,
        bias: Vec<T>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::from_parts(
            in_dim,
            out_dim,
            vec![T::zero(); in_dim * out_dim],
            vec![T::zero(); out_dim],
            activation,
        )
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, activation)?;
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        for w in &mut layer.weights {
            *w = T::lit(rng.gen_range(-limit..limit));
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Writes the pre-activation into `pre` and the activated output into `out`.
    pub(crate) fn forward_into(&self, x: &[T], pre: &mut Vec<T>, out: &mut Vec<T>) {
        pre.clear();
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi);
            pre.push(z);
            out.push(self.activation.apply(z));
        }
    }

    /// Accumulates `dW += δ ⊗ x`, `db += δ` and returns `Wᵀ δ`, where
    /// `δ` is `grad_out` pushed through the activation derivative.
    pub(crate) fn backward_into(
        &self,
        x: &[T],
        pre: &[T],
        out: &[T],
        grad_out: &[T],
        grad_w: &mut [T],
        grad_b: &mut [T],
    ) -> Vec<T> {
        let mut grad_x = vec![T::zero(); self.in_dim];
        for o in 0..self.out_dim {
            let delta = grad_out[o] * self.activation.derivative(pre[o], out[o]);
            if delta == T::zero() {
                continue;
            }
            grad_b[o] = grad_b[o] + delta;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] = grow[i] + delta * x[i];
                grad_x[i] = grad_x[i] + delta * row[i];
            }
        }
        grad_x
    }

    pub fn cast<U: Real>(&self) -> DenseLayer<U> {
        DenseLayer {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().map(|w| U::lit(w.as_f64())).collect(),
            bias: self.bias.iter().map(|w| U::lit(w.as_f64())).collect(),
            activation: self.activation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0_f64), 1.0);
        assert_eq!(sigmoid(-1000.0_f64), 0.0);
        assert!((sigmoid(0.5_f64) - 0.622_459_331_201_854_6).abs() < 1e-15);
    }

    #[test]
    fn rejects_inconsistent_parts() {
        let err = DenseLayer::<f64>::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::None);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = rand::rngs::mock::StepRng::new(0, 1 << 40);
        let layer = DenseLayer::<f64>::glorot(10, 6, Activation::Relu, &mut rng).unwrap();
        let limit = (6.0_f64 / 16.0).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= limit));
        assert!(layer.bias.iter().all(|&b| b == 0.0));
    }
}
