use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid_config, Result};
use crate::losses::{jaccard_grad, mutual_loss_grad, soft_jaccard_distance, MutualLossConfig};
use crate::rng::SimRng;
use crate::segcore::{forward, predict, sgd_step, Gradient, ModelParams};
use crate::synthdata::Case;

/// Standard deviation of the initial weights (variance 0.01).
pub(crate) const INIT_WEIGHT_STD: f64 = 0.1;

pub(crate) fn init_params(channels: usize, rng: &mut SimRng) -> ModelParams {
    let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
    ModelParams {
        weights: (0..channels).map(|_| normal.sample(rng)).collect(),
        bias: 0.0,
    }
}

pub(crate) fn sample_batch<'a>(cases: &[&'a Case], batch: usize, rng: &mut SimRng) -> Vec<&'a Case> {
    (0..batch).map(|_| cases[rng.random_range(0..cases.len())]).collect()
}

fn accumulate(acc: &mut Gradient, g: &Gradient, scale: f64) {
    for (a, x) in acc.weights.iter_mut().zip(&g.weights) {
        *a += scale * x;
    }
    acc.bias += scale * g.bias;
}

/// One SGD step on the batch-mean Jaccard distance.
pub(crate) fn jaccard_step(params: &ModelParams, batch: &[&Case], lr: f64) -> Result<ModelParams> {
    let mut grad = ModelParams::zeros(params.channels());
    let scale = 1.0 / batch.len() as f64;
    for case in batch {
        let fw = forward(params, &case.volume)?;
        accumulate(&mut grad, &jaccard_grad(&fw, &case.truth, &case.volume)?, scale);
    }
    sgd_step(params, &grad, lr)
}

/// `steps` Jaccard-loss SGD steps with batches drawn from `cases`.
pub(crate) fn local_training(
    mut params: ModelParams,
    cases: &[&Case],
    steps: usize,
    batch: usize,
    lr: f64,
    rng: &mut SimRng,
) -> Result<ModelParams> {
    if steps > 0 && cases.is_empty() {
        return Err(invalid_config("local training needs a non-empty training split"));
    }
    for _ in 0..steps {
        let b = sample_batch(cases, batch, rng);
        params = jaccard_step(&params, &b, lr)?;
    }
    Ok(params)
}

/// One simultaneous mutual-learning step: each model descends its own loss
/// against the other's (detached) prediction on the same batch.
pub(crate) fn mutual_step(
    local: &ModelParams,
    incoming: &ModelParams,
    batch: &[&Case],
    lr: f64,
    cfg: &MutualLossConfig,
) -> Result<(ModelParams, ModelParams)> {
    let mut g_local = ModelParams::zeros(local.channels());
    let mut g_incoming = ModelParams::zeros(incoming.channels());
    let scale = 1.0 / batch.len() as f64;
    for case in batch {
        let fl = forward(local, &case.volume)?;
        let fi = forward(incoming, &case.volume)?;
        let gl = mutual_loss_grad(&fl, &fi.field, &case.truth, &case.volume, cfg)?;
        let gi = mutual_loss_grad(&fi, &fl.field, &case.truth, &case.volume, cfg)?;
        accumulate(&mut g_local, &gl, scale);
        accumulate(&mut g_incoming, &gi, scale);
    }
    Ok((sgd_step(local, &g_local, lr)?, sgd_step(incoming, &g_incoming, lr)?))
}

/// Mean soft Jaccard distance of a model over some cases.
pub fn mean_jaccard(params: &ModelParams, cases: &[Case]) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        total += soft_jaccard_distance(&predict(params, &case.volume)?, &case.truth)?;
    }
    Ok(total / cases.len().max(1) as f64)
}
