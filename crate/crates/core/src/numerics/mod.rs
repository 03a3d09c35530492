//! Dense layers, MLPs with hand-written reverse passes, and Adam.

mod adam;
mod dense;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState, GRAD_CLAMP};
pub(crate) use dense::sigmoid;
pub use dense::{Activation, DenseLayer};
pub use gradcheck::{
    finite_diff_check, relative_error, CoordSelection, GradCheckReport, REL_ERROR_FLOOR,
};
pub use mlp::{Mlp, MlpCache};

use crate::{Error, Real, Result};

/// A bundle of named-by-position parameter tensors.
///
/// Every trainable block flattens its parameters into an ordered list of
/// slices. The order is part of the checkpoint layout, so it must stay
/// stable.
pub trait Parameters<T: Real> {
    fn params(&self) -> Vec<&[T]>;
    fn params_mut(&mut self) -> Vec<&mut [T]>;

    fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    fn param_count(&self) -> usize {
        self.param_shapes().iter().sum()
    }
}

/// Gradients shape-matching a [`Parameters`] bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> GradBundle<T> {
    pub fn zeros(shapes: &[usize]) -> Self {
        GradBundle {
            tensors: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn zeros_like<P: Parameters<T> + ?Sized>(params: &P) -> Self {
        Self::zeros(&params.param_shapes())
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors.iter().map(Vec::len).collect()
    }

    pub fn check_shapes(&self, expected: &[usize]) -> Result<()> {
        let shapes = self.shapes();
        if shapes != expected {
            return Err(Error::Shape(format!(
                "gradient bundle shapes {shapes:?} do not match parameters {expected:?}"
            )));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.tensors
            .iter()
            .flatten()
            .fold(T::zero(), |acc, g| acc.max(g.abs()))
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Flattened view, in bundle order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flatten().copied().collect()
    }
}
