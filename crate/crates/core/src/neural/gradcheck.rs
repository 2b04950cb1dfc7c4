//! Analytic-versus-finite-difference gradient comparison.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Below this magnitude gradients are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// A scalar loss of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn n_params(&self) -> usize;

    /// Returns the loss; when `grad` is given, accumulates `dL/dp` into it.
    fn loss_grad(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64;
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F> {
    n: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], Option<&mut [f64]>) -> f64,
{
    pub fn new(n: usize, f: F) -> Self {
        FnObjective { n, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], Option<&mut [f64]>) -> f64,
{
    fn n_params(&self) -> usize {
        self.n
    }

    fn loss_grad(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        (self.f)(params, grad)
    }
}

/// Largest relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
/// and central-difference gradients over `n_check` randomly chosen
/// parameters (all of them when the model is smaller).
pub fn gradient_check(obj: &dyn Objective, params: &[f64], n_check: usize, seed: u64) -> Result<f64> {
    let n = obj.n_params();
    if params.len() != n {
        return Err(Error::Dimension {
            what: "gradient check parameters",
            expected: n,
            found: params.len(),
        });
    }
    let mut analytic = vec![0.0; n];
    let base = obj.loss_grad(params, Some(&mut analytic));
    if !base.is_finite() {
        return Err(Error::Invalid(format!("loss is not finite ({base})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if n_check >= n {
        (0..n).collect()
    } else {
        sample(&mut rng, n, n_check).into_vec()
    };
    let mut p = params.to_vec();
    let mut worst = 0.0_f64;
    for i in picks {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let plus = obj.loss_grad(&p, None);
        p[i] = orig - FD_STEP;
        let minus = obj.loss_grad(&p, None);
        p[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::Invalid(format!("loss is not finite near parameter {i}")));
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}
