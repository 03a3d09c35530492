use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ColorModel, TrainBatch};
use crate::numerics::{AdamState, GradBundle};
use crate::{Error, Real, Result};

/// Sum-of-squares color loss over `indices` of `batch`, accumulating
/// gradients into `grads`.
fn accumulate<T: Real, M: ColorModel<T>>(
    model: &M,
    batch: &TrainBatch<T>,
    indices: impl IntoIterator<Item = usize>,
    grads: &mut GradBundle<T>,
) -> Result<T> {
    let two = T::lit(2.0);
    let mut loss = T::zero();
    for j in indices {
        let (pred, cache) = model.forward(batch.points[j], batch.dirs[j])?;
        let target = batch.colors[j];
        let diff = [
            pred[0] - target[0],
            pred[1] - target[1],
            pred[2] - target[2],
        ];
        loss = loss + diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2];
        model.backward_accumulate(&cache, diff.map(|e| two * e), grads)?;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// `Σ_j ‖c_j − ĉ_j‖²` over the whole batch and its gradient.
pub fn loss_and_grad<T: Real, M: ColorModel<T>>(
    model: &M,
    batch: &TrainBatch<T>,
) -> Result<(T, GradBundle<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut grads = GradBundle::zeros_like(model);
    let loss = accumulate(model, batch, 0..batch.len(), &mut grads)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace<T> {
    pub losses: Vec<T>,
    pub skipped: usize,
}

/// One optimisation step on a random stored slice and a random subset of it.
///
/// Returns `Ok(None)` when the step was skipped because the loss or
/// gradient was not finite.
fn train_iteration<T, M, B>(
    model: &mut M,
    optimizer: &mut AdamState<T>,
    grads: &mut GradBundle<T>,
    memory: &[B],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<T>>
where
    T: Real,
    M: ColorModel<T>,
    B: AsRef<TrainBatch<T>>,
{
    if memory.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let slice = memory[rng.gen_range(0..memory.len())].as_ref();
    if slice.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let picked = sample(rng, slice.len(), batch_size.min(slice.len()));
    grads.fill_zero();
    let loss = match accumulate(model, slice, picked.iter(), grads) {
        Ok(loss) => loss,
        Err(Error::NonFinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    match optimizer.step(model, grads) {
        Ok(()) => Ok(Some(loss)),
        Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Runs `iters` optimisation steps drawing from `memory`.
pub fn train_steps<T, M, B>(
    model: &mut M,
    optimizer: &mut AdamState<T>,
    memory: &[B],
    iters: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrainTrace<T>>
where
    T: Real,
    M: ColorModel<T>,
    B: AsRef<TrainBatch<T>>,
{
    let mut trace = TrainTrace::default();
    if iters == 0 {
        return Ok(trace);
    }
    let mut grads = GradBundle::zeros_like(model);
    for _ in 0..iters {
        match train_iteration(model, optimizer, &mut grads, memory, batch_size, rng)? {
            Some(loss) => trace.losses.push(loss),
            None => trace.skipped += 1,
        }
    }
    Ok(trace)
}

/// A model, its optimiser, and the sampling stream that drives it.
#[derive(Debug, Clone)]
pub struct Learner<T, M> {
    pub model: M,
    pub optimizer: AdamState<T>,
    pub rng: ChaCha8Rng,
    pub batch_size: usize,
    grads: GradBundle<T>,
}

impl<T: Real, M: ColorModel<T>> Learner<T, M> {
    pub fn new(model: M, optimizer: AdamState<T>, rng: ChaCha8Rng, batch_size: usize) -> Self {
        let grads = GradBundle::zeros_like(&model);
        Learner {
            model,
            optimizer,
            rng,
            batch_size,
            grads,
        }
    }

    /// One iteration; `Ok(None)` marks a skipped non-finite step.
    pub fn step<B: AsRef<TrainBatch<T>>>(&mut self, memory: &[B]) -> Result<Option<T>> {
        train_iteration(
            &mut self.model,
            &mut self.optimizer,
            &mut self.grads,
            memory,
            self.batch_size,
            &mut self.rng,
        )
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::encoding::HashGridConfig;
    use crate::models::{HgConfig, HgModel, NslfConfig, NslfModel};
    use crate::numerics::{AdamConfig, Parameters};

    fn tiny_grid() -> HashGridConfig {
        HashGridConfig {
            levels: 3,
            features: 2,
            log2_table_size: 8,
            base_resolution: 2,
            max_resolution: 8,
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> TrainBatch<f64> {
        let mut b = TrainBatch::default();
        for _ in 0..n {
            let v: [f64; 3] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            b.push(
                [rng.gen(), rng.gen(), rng.gen()],
                v.map(|c| c / norm),
                [rng.gen(), rng.gen(), rng.gen()],
            );
        }
        b
    }

    #[test]
    fn empty_batch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = HgModel::<f64>::new(
            HgConfig {
                grid: tiny_grid(),
                ..HgConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        assert!(matches!(
            loss_and_grad(&m, &TrainBatch::default()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = NslfModel::<f64>::new(
            NslfConfig {
                grid: tiny_grid(),
                ..NslfConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let mut batch = random_batch(&mut rng, 8);
        for j in 0..batch.len() {
            batch.colors[j] = m.predict(batch.points[j], batch.dirs[j]).unwrap();
        }
        let (loss, grads) = loss_and_grad(&m, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn mid_gray_against_red_costs_three_quarters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = HgModel::<f64>::new(
            HgConfig {
                grid: tiny_grid(),
                ..HgConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        for t in m.decoder.params_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let batch =
            TrainBatch::new(vec![[0.5; 3]], vec![[0.0, 0.0, 1.0]], vec![[1.0, 0.0, 0.0]]).unwrap();
        let (loss, _) = loss_and_grad(&m, &batch).unwrap();
        assert_eq!(loss, 0.75);
    }

    #[test]
    fn loss_matches_scripted_forward_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = NslfModel::<f64>::new(
            NslfConfig {
                grid: tiny_grid(),
                ..NslfConfig::default()
            },
            &mut rng,
        )
        .unwrap();
        let batch = random_batch(&mut rng, 32);
        let mut expected = 0.0;
        for j in 0..32 {
            let c = m.predict(batch.points[j], batch.dirs[j]).unwrap();
            for k in 0..3 {
                expected += (batch.colors[j][k] - c[k]).powi(2);
            }
        }
        let (loss, _) = loss_and_grad(&m, &batch).unwrap();
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn zero_iterations_leave_the_model_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = NslfModel::<f32>::new(NslfConfig::default(), &mut rng).unwrap();
        let before = m.clone();
        let mut opt = AdamState::for_params(AdamConfig::default(), &m);
        let memory = vec![random_batch(&mut rng, 16).cast::<f32>()];
        let trace = train_steps(&mut m, &mut opt, &memory, 0, 8, &mut rng).unwrap();
        assert!(trace.losses.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn fixed_seed_traces_are_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut m = HgModel::<f32>::new(
                HgConfig {
                    grid: tiny_grid(),
                    ..HgConfig::default()
                },
                &mut rng,
            )
            .unwrap();
            let mut opt = AdamState::for_params(AdamConfig::default(), &m);
            let memory = vec![
                random_batch(&mut rng, 64).cast::<f32>(),
                random_batch(&mut rng, 40).cast::<f32>(),
            ];
            let trace = train_steps(&mut m, &mut opt, &memory, 30, 16, &mut rng).unwrap();
            trace.losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nslf_learns_a_constant_color() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = NslfModel::<f32>::new(NslfConfig::default(), &mut rng).unwrap();
        let mut opt = AdamState::for_params(AdamConfig::default(), &m);
        let mut batch = random_batch(&mut rng, 512);
        batch.colors.iter_mut().for_each(|c| *c = [0.8, 0.3, 0.1]);
        let memory = vec![batch.cast::<f32>()];
        let trace = train_steps(&mut m, &mut opt, &memory, 2000, 256, &mut rng).unwrap();
        let last = *trace.losses.last().unwrap();
        assert!(last < 1e-4, "final loss {last}");
    }
}
