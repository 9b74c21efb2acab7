//! Losses of the three networks.
//!
//! * SA-Module: `L_SA = L_rec`, the pixel MSE.
//! * Gaze head: `L_MLP = L_gaze`, the L1 distance between `(pitch, yaw)` pairs.
//! * Backbone: `alpha * E[M * gate * (1 - e)] + beta * L_gaze`, where `e(p)` is
//!   the channel-mean squared difference at spatial location `p` and
//!   `gate(p) = 1[(1 - e(p)) > k]`.
//!
//! With `M = 1` and `k = 0` the adversarial term reduces to `1 - L_rec`.
//! All image terms reduce by mean so the weights are resolution independent.

use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::error::{Error, Result};
use crate::geometry::GazeLabel;
use crate::pixels::Image;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_K: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    /// Truncation threshold in `[0, 1)`; `0` disables truncation.
    pub k: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            k: DEFAULT_K,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::config("alpha and beta must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.k) {
            return Err(Error::config(format!("k must lie in [0, 1), got {}", self.k)));
        }
        Ok(())
    }
}

/// One logged training step. `adv_loss` is the plain `1 - rec_loss`;
/// `adv_truncated` is the attention-weighted, gated term that drives the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub gaze_loss: f64,
    pub rec_loss: f64,
    pub adv_loss: f64,
    pub adv_truncated: f64,
    pub backbone_loss: f64,
    pub sa_loss: f64,
    pub mlp_loss: f64,
}

pub fn gaze_loss(pred: GazeLabel, truth: GazeLabel) -> f64 {
    (pred.pitch - truth.pitch).abs() + (pred.yaw - truth.yaw).abs()
}

/// Mean L1 over a batch. Empty batches have zero loss.
pub fn gaze_loss_batch(preds: &[GazeLabel], truths: &[GazeLabel]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::domain("prediction and label batches differ in length"));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = preds.iter().zip(truths).map(|(p, t)| gaze_loss(*p, *t)).sum();
    Ok(total / preds.len() as f64)
}

/// `d L_gaze / d pred` for one sample; zero where the prediction is exact.
pub fn gaze_loss_grad(pred: GazeLabel, truth: GazeLabel) -> [f64; 2] {
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    [sign(pred.pitch - truth.pitch), sign(pred.yaw - truth.yaw)]
}

pub fn reconstruction_loss(original: &Image, reconstructed: &Image) -> Result<f64> {
    original.check_same_shape(reconstructed)?;
    let sum: f64 = original
        .data
        .iter()
        .zip(&reconstructed.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / original.data.len() as f64)
}

/// `d L_rec / d reconstructed`.
pub fn reconstruction_loss_grad(original: &Image, reconstructed: &Image) -> Result<Vec<f64>> {
    original.check_same_shape(reconstructed)?;
    let scale = 2.0 / original.data.len() as f64;
    Ok(original
        .data
        .iter()
        .zip(&reconstructed.data)
        .map(|(a, b)| scale * (b - a))
        .collect())
}

pub fn adversarial_loss(original: &Image, reconstructed: &Image) -> Result<f64> {
    Ok(1.0 - reconstruction_loss(original, reconstructed)?)
}

pub fn sa_module_loss(original: &Image, reconstructed: &Image) -> Result<f64> {
    reconstruction_loss(original, reconstructed)
}

/// Channel-mean squared difference per spatial location.
pub fn pixel_errors(original: &Image, reconstructed: &Image) -> Result<Vec<f64>> {
    original.check_same_shape(reconstructed)?;
    let hw = original.plane_len();
    let mut e = vec![0.0; hw];
    for c in 0..original.channels {
        let a = &original.data[c * hw..(c + 1) * hw];
        let b = &reconstructed.data[c * hw..(c + 1) * hw];
        for ((acc, x), y) in e.iter_mut().zip(a).zip(b) {
            *acc += (x - y) * (x - y);
        }
    }
    let inv = 1.0 / original.channels as f64;
    e.iter_mut().for_each(|v| *v *= inv);
    Ok(e)
}

/// Whether the truncation gate lets location `p` contribute.
pub fn gate_open(pixel_error: f64, k: f64) -> bool {
    1.0 - pixel_error > k
}

fn check_map(original: &Image, map: &AttentionMap) -> Result<()> {
    if map.height != original.height || map.width != original.width {
        return Err(Error::domain(format!(
            "attention map {}x{} does not match image {}x{}",
            map.height, map.width, original.height, original.width
        )));
    }
    Ok(())
}

/// Value of the attention-weighted, truncated adversarial term.
pub fn truncated_adversarial(
    original: &Image,
    reconstructed: &Image,
    map: &AttentionMap,
    k: f64,
) -> Result<f64> {
    check_map(original, map)?;
    let e = pixel_errors(original, reconstructed)?;
    let sum: f64 = e
        .iter()
        .zip(&map.weights)
        .filter(|(err, _)| gate_open(**err, k))
        .map(|(err, m)| m * (1.0 - err))
        .sum();
    Ok(sum / e.len() as f64)
}

/// Gradient of [`truncated_adversarial`] with respect to the reconstruction.
/// The gate is held constant; gated-off locations get exactly zero.
pub fn truncated_adversarial_grad(
    original: &Image,
    reconstructed: &Image,
    map: &AttentionMap,
    k: f64,
) -> Result<Vec<f64>> {
    check_map(original, map)?;
    let e = pixel_errors(original, reconstructed)?;
    let hw = original.plane_len();
    let scale = 2.0 / (original.channels as f64 * hw as f64);
    let mut grad = vec![0.0; original.data.len()];
    for c in 0..original.channels {
        for p in 0..hw {
            if gate_open(e[p], k) {
                let i = c * hw + p;
                grad[i] = map.weights[p] * scale * (original.data[i] - reconstructed.data[i]);
            }
        }
    }
    Ok(grad)
}

pub fn backbone_loss(
    original: &Image,
    reconstructed: &Image,
    pred: GazeLabel,
    truth: GazeLabel,
    map: &AttentionMap,
    w: &LossWeights,
) -> Result<f64> {
    let adv = truncated_adversarial(original, reconstructed, map, w.k)?;
    Ok(w.alpha * adv + w.beta * gaze_loss(pred, truth))
}

#[derive(Debug, Clone)]
pub struct BackboneLossGrad {
    /// With respect to each reconstructed value, channel-major.
    pub reconstructed: Vec<f64>,
    /// With respect to predicted `(pitch, yaw)`.
    pub pred: [f64; 2],
}

pub fn backbone_loss_grad(
    original: &Image,
    reconstructed: &Image,
    pred: GazeLabel,
    truth: GazeLabel,
    map: &AttentionMap,
    w: &LossWeights,
) -> Result<BackboneLossGrad> {
    let mut rec = truncated_adversarial_grad(original, reconstructed, map, w.k)?;
    rec.iter_mut().for_each(|g| *g *= w.alpha);
    let g = gaze_loss_grad(pred, truth);
    Ok(BackboneLossGrad {
        reconstructed: rec,
        pred: [w.beta * g[0], w.beta * g[1]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(vals: &[f64]) -> Image {
        Image::new(1, 2, 2, vals.to_vec()).unwrap()
    }

    #[test]
    fn gaze_examples() {
        let z = GazeLabel::default();
        let p = GazeLabel { pitch: 0.1, yaw: 0.2 };
        assert_eq!(gaze_loss(p, p), 0.0);
        assert!((gaze_loss(p, z) - 0.3).abs() < 1e-15);
        let batch = gaze_loss_batch(&[p, z], &[z, z]).unwrap();
        // (0.3 + 0) / 2
        assert!((batch - 0.15).abs() < 1e-15);
        assert!(gaze_loss_batch(&[p], &[]).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let zeros = Image::filled(3, 4, 4, 0.0);
        let ones = Image::filled(3, 4, 4, 1.0);
        assert_eq!(reconstruction_loss(&zeros, &zeros).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&zeros, &ones).unwrap(), 1.0);
        assert_eq!(adversarial_loss(&zeros, &zeros).unwrap(), 1.0);
        assert_eq!(adversarial_loss(&zeros, &ones).unwrap(), 0.0);
        assert_eq!(sa_module_loss(&zeros, &ones).unwrap(), 1.0);

        // differences {0, 0.5, 0, 0.5}: squares {0, 0.25, 0, 0.25}, mean 0.125
        let a = img(&[0.2, 0.7, 0.4, 0.9]);
        let b = img(&[0.2, 0.2, 0.4, 0.4]);
        assert!((reconstruction_loss(&a, &b).unwrap() - 0.125).abs() < 1e-15);
        assert!((adversarial_loss(&a, &b).unwrap() - 0.875).abs() < 1e-15);
        assert!((sa_module_loss(&a, &b).unwrap() - 0.125).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let a = Image::filled(3, 4, 4, 0.0);
        let b = Image::filled(3, 4, 5, 0.0);
        assert!(reconstruction_loss(&a, &b).is_err());
        assert!(adversarial_loss(&a, &b).is_err());
        let m = AttentionMap::uniform(5, 5);
        let z = GazeLabel::default();
        assert!(backbone_loss(&a, &a, z, z, &m, &LossWeights::default()).is_err());
    }

    #[test]
    fn backbone_examples() {
        let a = Image::filled(3, 4, 4, 0.3);
        let z = GazeLabel::default();
        let w = LossWeights {
            k: 0.0,
            ..Default::default()
        };
        let m = AttentionMap::uniform(4, 4);
        assert_eq!(backbone_loss(&a, &a, z, z, &m, &w).unwrap(), 1.0);

        // one pixel with squared difference 0.5: 1 - 0.5 = 0.5 is not > 0.75
        let orig = Image::new(1, 1, 1, vec![0.0]).unwrap();
        let rec = Image::new(1, 1, 1, vec![0.5f64.sqrt()]).unwrap();
        let m1 = AttentionMap::uniform(1, 1);
        let w = LossWeights::default();
        assert_eq!(truncated_adversarial(&orig, &rec, &m1, w.k).unwrap(), 0.0);
        assert_eq!(truncated_adversarial_grad(&orig, &rec, &m1, w.k).unwrap(), vec![0.0]);
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.alpha, w.beta, w.k), (1.0, 1.0, 0.75));
        assert!(LossWeights { k: 1.0, ..w }.validate().is_err());
        assert!(LossWeights { alpha: -1.0, ..w }.validate().is_err());
    }

    #[test]
    fn gate_uses_channel_mean() {
        // channel diffs 0.9 and 0: mean squared error 0.405 -> gate closed at k = 0.75
        let orig = Image::new(2, 1, 1, vec![0.0, 0.5]).unwrap();
        let rec = Image::new(2, 1, 1, vec![0.9, 0.5]).unwrap();
        let e = pixel_errors(&orig, &rec).unwrap();
        assert!((e[0] - 0.405).abs() < 1e-12);
        assert!(!gate_open(e[0], 0.75));
        assert!(gate_open(e[0], 0.5));
    }
}
