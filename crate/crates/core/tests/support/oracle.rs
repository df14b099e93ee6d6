//! Voxel-loop reference implementations of the losses, written from their
//! definitions with explicit `(i, j, k)` loops and their own indexing,
//! sigmoid and clamping. Nothing here calls into the loss code under test.

#![allow(dead_code)]

use gml_core::{FeatureVolume, GridDims, Mask, ProbField};
use rand::Rng;

const EPS: f64 = 1e-7;

fn flat(d: &GridDims, i: usize, j: usize, k: usize) -> usize {
    k + d.width * (j + d.height * i)
}

fn voxels(d: &GridDims) -> impl Iterator<Item = usize> + '_ {
    (0..d.depth).flat_map(move |i| (0..d.height).flat_map(move |j| (0..d.width).map(move |k| flat(d, i, j, k))))
}

pub fn soft_jaccard(p: &ProbField, t: &Mask) -> f64 {
    let d = p.dims();
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for v in voxels(&d) {
        let (pv, tv) = (p.probs()[v], f64::from(t.bits()[v]));
        inter += pv * tv;
        sp += pv;
        st += tv;
    }
    let union = sp + st - inter;
    if union == 0.0 {
        0.0
    } else {
        1.0 - inter / union
    }
}

fn plogq(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p / q).ln()
    }
}

pub fn kl(p: f64, q: f64, full: bool) -> f64 {
    if full {
        plogq(p, q) + plogq(1.0 - p, 1.0 - q)
    } else {
        plogq(p, q)
    }
}

/// Sum of per-voxel KL over the voxels where `mask` is set.
pub fn rkld_masked(p: &ProbField, q: &ProbField, mask: &[u8], full: bool) -> f64 {
    let d = p.dims();
    let mut total = 0.0;
    for v in voxels(&d) {
        if mask[v] == 1 {
            total += kl(p.probs()[v], q.probs()[v], full);
        }
    }
    total
}

pub fn rkld_mixed(p: &ProbField, q: &ProbField, truth: &[u8], predicted: &[u8], full: bool) -> f64 {
    let size: usize = truth.iter().chain(predicted).map(|&b| usize::from(b)).sum();
    if size == 0 {
        return 0.0;
    }
    (rkld_masked(p, q, truth, full) + rkld_masked(p, q, predicted, full)) / size as f64
}

pub fn threshold(p: &ProbField) -> Vec<u8> {
    p.probs().iter().map(|&x| u8::from(x >= 0.5)).collect()
}

/// `(1 - lambda) * JD + lambda * mixed rKLD`, with the predicted mask given.
pub fn mutual_with_mask(p: &ProbField, q: &ProbField, t: &Mask, predicted: &[u8], lambda: f64, full: bool) -> f64 {
    (1.0 - lambda) * soft_jaccard(p, t) + lambda * rkld_mixed(p, q, t.bits(), predicted, full)
}

pub fn mutual(p: &ProbField, q: &ProbField, t: &Mask, lambda: f64, full: bool) -> f64 {
    mutual_with_mask(p, q, t, &threshold(p), lambda, full)
}

/// Clamped sigmoid of `bias + sum_c w_c x_c` at every voxel.
pub fn predict(flat_params: &[f64], vol: &FeatureVolume) -> ProbField {
    let d = vol.dims();
    let (weights, bias) = flat_params.split_at(d.channels);
    let n = d.voxels();
    let mut probs = vec![0.0; n];
    for v in voxels(&d) {
        let mut z = bias[0];
        for (c, w) in weights.iter().enumerate() {
            z += w * f64::from(vol.values()[c * n + v]);
        }
        probs[v] = (1.0 / (1.0 + (-z).exp())).clamp(EPS, 1.0 - EPS);
    }
    ProbField::new(d, probs).unwrap()
}

/// Loss as a function of the parameters with the peer field and the
/// predicted mask held fixed.
pub fn loss_at(
    flat_params: &[f64],
    vol: &FeatureVolume,
    peer: &ProbField,
    truth: &Mask,
    predicted: &[u8],
    lambda: f64,
    full: bool,
) -> f64 {
    mutual_with_mask(&predict(flat_params, vol), peer, truth, predicted, lambda, full)
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            xs[i] = x[i] + h;
            let up = f(&xs);
            xs[i] = x[i] - h;
            let down = f(&xs);
            xs[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn random_dims(rng: &mut impl Rng, max_side: usize, max_channels: usize) -> GridDims {
    GridDims::new(
        rng.random_range(1..=max_side),
        rng.random_range(1..=max_side),
        rng.random_range(1..=max_side),
        rng.random_range(1..=max_channels),
    )
    .unwrap()
}

/// Probabilities spread over the open interval, with occasional values at
/// the clamp bounds.
pub fn random_field(rng: &mut impl Rng, d: GridDims) -> ProbField {
    let probs = (0..d.voxels())
        .map(|_| match rng.random_range(0..20) {
            0 => EPS,
            1 => 1.0 - EPS,
            _ => rng.random_range(EPS..1.0 - EPS),
        })
        .collect();
    ProbField::new(d, probs).unwrap()
}

/// A mask with a random density; empty and full masks come up regularly.
pub fn random_mask(rng: &mut impl Rng, d: GridDims) -> Mask {
    let density: f64 = match rng.random_range(0..8) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random(),
    };
    let bits = (0..d.voxels()).map(|_| u8::from(rng.random_bool(density))).collect();
    Mask::new(d, bits).unwrap()
}

pub fn random_volume(rng: &mut impl Rng, d: GridDims) -> FeatureVolume {
    let values = (0..d.channels * d.voxels())
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    FeatureVolume::new(d, values).unwrap()
}
