use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradBundle, Parameters};

/// Denominator floor for [`relative_error`]: differences below
/// `1e-5 · tolerance` in absolute terms are treated as roundoff.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

pub const REFINE_THRESHOLD: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Which parameter coordinates to probe.
#[derive(Debug, Clone)]
pub enum CoordSelection {
    All,
    /// Up to `per_tensor` random coordinates from every tensor.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
    /// Explicit `(tensor, index)` pairs.
    List(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates whose error only fell below the first-pass threshold
    /// after re-probing with a smaller step.
    pub refined: usize,
    /// Coordinates resolved by a one-sided difference at a kink.
    pub one_sided: usize,
    /// `(tensor, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` and returns the
/// worst relative error over the selected coordinates.
///
/// Coordinates whose central difference disagrees by more than
/// [`REFINE_THRESHOLD`] are probed again with step `h / 100` and the smaller
/// error is kept, so a ReLU kink that falls inside the first step does not
/// read as a gradient bug. If both central differences still disagree, the
/// one-sided differences at step `h / 100` are compared: when they differ
/// from each other the coordinate sits on a kink, and the analytic value is
/// accepted if it matches either side. A wrong gradient matches neither.
///
/// `params` is perturbed in place and restored bit-exactly afterwards.
pub fn finite_diff_check<P, F>(
    params: &mut P,
    analytic: &GradBundle<f64>,
    mut f: F,
    h: f64,
    coords: &CoordSelection,
) -> GradCheckReport
where
    P: Parameters<f64> + ?Sized,
    F: FnMut(&P) -> f64,
{
    let shapes = params.param_shapes();
    let selected: Vec<(usize, usize)> = match coords {
        CoordSelection::All => shapes
            .iter()
            .enumerate()
            .flat_map(|(t, &n)| (0..n).map(move |i| (t, i)))
            .collect(),
        CoordSelection::Sample { per_tensor, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            shapes
                .iter()
                .enumerate()
                .flat_map(|(t, &n)| {
                    let k = (*per_tensor).min(n);
                    sample(&mut rng, n, k)
                        .into_iter()
                        .map(move |i| (t, i))
                        .collect::<Vec<_>>()
                })
                .collect()
        }
        CoordSelection::List(list) => list.clone(),
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        refined: 0,
        one_sided: 0,
        worst: None,
        checked: 0,
    };
    // Returns (f(x + h), f(x), f(x - h)).
    let mut probe = |params: &mut P, t: usize, i: usize, h: f64| {
        let original = params.params()[t][i];
        params.params_mut()[t][i] = original + h;
        let plus = f(params);
        params.params_mut()[t][i] = original - h;
        let minus = f(params);
        params.params_mut()[t][i] = original;
        (plus, f(params), minus)
    };
    for (t, i) in selected {
        let a = analytic.tensors[t][i];
        let (plus, _, minus) = probe(params, t, i, h);
        let mut numeric = (plus - minus) / (2.0 * h);
        let mut err = relative_error(a, numeric);
        if err > REFINE_THRESHOLD {
            let hf = h / 100.0;
            let (plus, mid, minus) = probe(params, t, i, hf);
            let fine = (plus - minus) / (2.0 * hf);
            let fine_err = relative_error(a, fine);
            if fine_err < err {
                if err >= 1e-4 && fine_err < 1e-4 {
                    report.refined += 1;
                }
                numeric = fine;
                err = fine_err;
            }
            if err > REFINE_THRESHOLD {
                let (fwd, bwd) = ((plus - mid) / hf, (mid - minus) / hf);
                let kink = relative_error(fwd, bwd) > 1e-3;
                let (side, side_err) = [fwd, bwd]
                    .into_iter()
                    .map(|d| (d, relative_error(a, d)))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("two sides");
                if kink && side_err < err {
                    if err >= 1e-4 && side_err < 1e-4 {
                        report.one_sided += 1;
                    }
                    numeric = side;
                    err = side_err;
                }
            }
        }
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((t, i, a, numeric));
        }
    }
    report
}
