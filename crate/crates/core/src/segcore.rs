//! Voxel-grid domain types and the per-voxel linear segmentation model.
//!
//! The model shares one weight per feature channel (plus a bias) across all
//! voxels: `p_v = sigmoid(sum_c w_c * x_{c,v} + b)`, clamped to `[EPS, 1 - EPS]`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, GmlError, Result};

/// Probability clamp applied by [`predict`]; keeps every downstream log finite.
pub const PROB_EPS: f64 = 1e-7;

/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridDims {
    pub fn new(depth: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        let dims = Self {
            depth,
            height,
            width,
            channels,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(invalid_input(format!("grid dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn voxels(&self) -> usize {
        self.depth * self.height * self.width
    }

    /// Spatial equality; the channel count is not compared.
    #[inline]
    pub fn same_grid(&self, other: &GridDims) -> bool {
        self.depth == other.depth && self.height == other.height && self.width == other.width
    }

    /// Flat voxel index of `(i, j, k)` in depth-major order.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.height + j) * self.width + k
    }
}

/// Multi-channel voxel features stored `[channel, depth, height, width]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVolume {
    dims: GridDims,
    values: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(dims: GridDims, values: Vec<f32>) -> Result<Self> {
        dims.validate()?;
        let expected = dims.channels * dims.voxels();
        if values.len() != expected {
            return Err(invalid_input(format!(
                "feature volume holds {} values, expected {expected}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!("non-finite feature at index {pos}")));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// All voxels of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.dims.voxels();
        &self.values[c * n..(c + 1) * n]
    }
}

/// Per-voxel tumor probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbField {
    dims: GridDims,
    probs: Vec<f64>,
}

impl ProbField {
    /// Accepts any probabilities in `[0, 1]`. Fields produced by [`predict`]
    /// are additionally clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn new(dims: GridDims, probs: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if probs.len() != dims.voxels() {
            return Err(invalid_input(format!(
                "probability field holds {} values, expected {}",
                probs.len(),
                dims.voxels()
            )));
        }
        if let Some(pos) = probs.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid_input(format!(
                "probability {} at voxel {pos} outside [0, 1]",
                probs[pos]
            )));
        }
        Ok(Self { dims, probs })
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Elementwise mean of several fields over the same grid.
    pub fn mean(fields: &[ProbField]) -> Result<ProbField> {
        let first = fields
            .first()
            .ok_or_else(|| invalid_input("cannot average an empty list of fields"))?;
        let mut acc = alloc::vec![0.0; first.len()];
        for f in fields {
            check_grid(&first.dims, &f.dims)?;
            for (a, p) in acc.iter_mut().zip(&f.probs) {
                *a += p;
            }
        }
        let k = fields.len() as f64;
        for a in &mut acc {
            *a /= k;
        }
        Ok(ProbField {
            dims: first.dims,
            probs: acc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    dims: GridDims,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(dims: GridDims, bits: Vec<u8>) -> Result<Self> {
        dims.validate()?;
        if bits.len() != dims.voxels() {
            return Err(invalid_input(format!(
                "mask holds {} values, expected {}",
                bits.len(),
                dims.voxels()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(invalid_input(format!("mask value {} at voxel {pos} is not 0/1", bits[pos])));
        }
        Ok(Self { dims, bits })
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self {
            dims,
            bits: alloc::vec![0; dims.voxels()],
        }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }
}

/// True mask `T` together with the predicted mask `T'` of the updating model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub truth: Mask,
    pub predicted: Mask,
}

impl MaskPair {
    pub fn new(truth: Mask, predicted: Mask) -> Result<Self> {
        check_grid(&truth.dims, &predicted.dims)?;
        Ok(Self { truth, predicted })
    }
}

/// Trainable parameters of one site's model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Gradients share the parameter layout.
pub type Gradient = ModelParams;

impl ModelParams {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        let p = Self { weights, bias };
        if !p.is_finite() {
            return Err(GmlError::Numeric(format!("non-finite parameters {p:?}")));
        }
        Ok(p)
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: alloc::vec![0.0; channels],
            bias: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.len()
    }

    /// Number of scalars transferred when this model is sent to a peer.
    pub fn scalar_count(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// Flattened `[weights..., bias]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let (bias, weights) = flat
            .split_last()
            .ok_or_else(|| invalid_input("flat parameter vector is empty"))?;
        Ok(Self {
            weights: weights.to_vec(),
            bias: *bias,
        })
    }
}

pub(crate) fn check_grid(a: &GridDims, b: &GridDims) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(invalid_input(format!(
            "grid mismatch: {}x{}x{} vs {}x{}x{}",
            a.depth, a.height, a.width, b.depth, b.height, b.width
        )))
    }
}

fn check_shape(a: &ModelParams, b: &ModelParams) -> Result<()> {
    if a.weights.len() == b.weights.len() {
        Ok(())
    } else {
        Err(invalid_input(format!(
            "parameter shape mismatch: {} vs {} weights",
            a.weights.len(),
            b.weights.len()
        )))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Logits and clamped probabilities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub field: ProbField,
}

impl Forward {
    /// `dp/dz` per voxel; zero where the clamp is active.
    pub fn prob_slope(&self) -> impl Iterator<Item = f64> + '_ {
        self.logits.iter().map(|&z| {
            let s = sigmoid(z);
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&s) {
                s * (1.0 - s)
            } else {
                0.0
            }
        })
    }
}

pub fn logits(params: &ModelParams, volume: &FeatureVolume) -> Result<Vec<f64>> {
    let dims = volume.dims();
    if dims.channels != params.weights.len() {
        return Err(invalid_input(format!(
            "volume has {} channels but the model has {} weights",
            dims.channels,
            params.weights.len()
        )));
    }
    let mut z = alloc::vec![params.bias; dims.voxels()];
    for (c, &w) in params.weights.iter().enumerate() {
        for (acc, &x) in z.iter_mut().zip(volume.channel(c)) {
            *acc += w * x as f64;
        }
    }
    Ok(z)
}

pub fn forward(params: &ModelParams, volume: &FeatureVolume) -> Result<Forward> {
    let logits = logits(params, volume)?;
    let probs = logits
        .iter()
        .map(|&z| sigmoid(z).clamp(PROB_EPS, 1.0 - PROB_EPS))
        .collect();
    Ok(Forward {
        logits,
        field: ProbField {
            dims: volume.dims(),
            probs,
        },
    })
}

pub fn predict(params: &ModelParams, volume: &FeatureVolume) -> Result<ProbField> {
    forward(params, volume).map(|f| f.field)
}

/// `bits[v] = 1` iff `probs[v] >= threshold`.
pub fn binarize(field: &ProbField, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid_input(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(Mask {
        dims: field.dims,
        bits: field.probs.iter().map(|&p| u8::from(p >= threshold)).collect(),
    })
}

/// `alpha * a + (1 - alpha) * b`, elementwise.
pub fn weighted_average(a: &ModelParams, b: &ModelParams, alpha: f64) -> Result<ModelParams> {
    check_shape(a, b)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid_input(format!("merge weight {alpha} outside [0, 1]")));
    }
    let mix = |x: f64, y: f64| alpha * x + (1.0 - alpha) * y;
    Ok(ModelParams {
        weights: a.weights.iter().zip(&b.weights).map(|(&x, &y)| mix(x, y)).collect(),
        bias: mix(a.bias, b.bias),
    })
}

pub fn sgd_step(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<ModelParams> {
    check_shape(params, grad)?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(invalid_input(format!("learning rate {lr} must be positive")));
    }
    if !grad.is_finite() {
        return Err(GmlError::Numeric(format!("non-finite gradient {grad:?}")));
    }
    Ok(ModelParams {
        weights: params
            .weights
            .iter()
            .zip(&grad.weights)
            .map(|(&w, &g)| w - lr * g)
            .collect(),
        bias: params.bias - lr * grad.bias,
    })
}
