use super::{GradBundle, Parameters};
use crate::{Error, Real, Result};

/// Gradient components are clamped to `±GRAD_CLAMP` before the update.
pub const GRAD_CLAMP: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
        }
    }

    pub fn for_params<P: Parameters<T> + ?Sized>(config: AdamConfig, params: &P) -> Self {
        Self::new(config, &params.param_shapes())
    }

    /// One bias-corrected Adam update.
    ///
    /// A gradient containing NaN or infinity is rejected before any state is
    /// touched, so the caller can skip the iteration.
    pub fn step<P: Parameters<T> + ?Sized>(
        &mut self,
        params: &mut P,
        grads: &GradBundle<T>,
    ) -> Result<()> {
        let shapes = params.param_shapes();
        grads.check_shapes(&shapes)?;
        if self.m.iter().map(Vec::len).ne(shapes.iter().copied()) {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }

        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t.min(i32::MAX as u64) as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t.min(i32::MAX as u64) as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        let clamp = T::lit(GRAD_CLAMP);

        for (((p, g), m), v) in params
            .params_mut()
            .into_iter()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i].max(-clamp).min(clamp);
                if gi == T::zero() && m[i] == T::zero() && v[i] == T::zero() {
                    continue;
                }
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<f64>);

    impl Parameters<f64> for Flat {
        fn params(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn params_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Flat(vec![0.5, -1.0, 3.0]);
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        let g = GradBundle::zeros(&[3]);
        for _ in 0..5 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p.0, vec![0.5, -1.0, 3.0]);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Flat(vec![0.0]);
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        adam.step(
            &mut p,
            &GradBundle {
                tensors: vec![vec![1.0]],
            },
        )
        .unwrap();
        // m̂ = v̂ = 1, so Δ = -lr / (1 + ε)
        assert!((p.0[0] - (-9.99999e-4)).abs() < 1e-9);
        assert!((p.0[0] - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let (mut m, mut v, mut x) = (0.0_f64, 0.0_f64, 0.25_f64);
        for t in 1..=2 {
            let g = 1.0;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = Flat(vec![0.25]);
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        for _ in 0..2 {
            adam.step(
                &mut p,
                &GradBundle {
                    tensors: vec![vec![1.0]],
                },
            )
            .unwrap();
        }
        assert!((p.0[0] - x).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut p = Flat(vec![1.0, 2.0]);
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        let err = adam.step(
            &mut p,
            &GradBundle {
                tensors: vec![vec![f64::NAN, 1.0]],
            },
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(adam.t, 0);
        assert_eq!(p.0, vec![1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Flat(vec![1.0, 2.0]);
        let mut adam = AdamState::for_params(AdamConfig::default(), &p);
        let err = adam.step(
            &mut p,
            &GradBundle {
                tensors: vec![vec![1.0]],
            },
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn huge_gradients_are_clamped() {
        let mut a = Flat(vec![0.0]);
        let mut b = Flat(vec![0.0]);
        let mut sa = AdamState::for_params(AdamConfig::default(), &a);
        let mut sb = AdamState::for_params(AdamConfig::default(), &b);
        sa.step(
            &mut a,
            &GradBundle {
                tensors: vec![vec![1e9]],
            },
        )
        .unwrap();
        sb.step(
            &mut b,
            &GradBundle {
                tensors: vec![vec![GRAD_CLAMP]],
            },
        )
        .unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(sa.v, sb.v);
    }
}
