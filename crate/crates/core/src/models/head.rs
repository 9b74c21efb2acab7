use rand_chacha::ChaCha8Rng;

use crate::layers::{global_avg_pool, global_avg_pool_backward, relu, relu_backward, Linear};
use crate::tensor::{Grads, ParamSet, Tensor};

pub const DEFAULT_HEAD_HIDDEN: usize = 1000;

/// Global average pooling followed by a two-layer MLP ending in `(pitch, yaw)`.
#[derive(Debug, Clone)]
pub struct GazeHead {
    params: ParamSet,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pooled: Tensor,
    hidden: Tensor,
    feat_hw: (usize, usize),
}

impl GazeHead {
    pub fn new(in_channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let fc1 = Linear::new(&mut params, "fc1", in_channels, hidden, 1.0, rng);
        // linear output layer: unit-gain fan-in scaling instead of the ReLU gain
        let fc2 = Linear::new(&mut params, "fc2", hidden, 2, std::f32::consts::FRAC_1_SQRT_2, rng);
        GazeHead { params, fc1, fc2 }
    }

    pub fn in_channels(&self) -> usize {
        self.fc1.in_features
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Returns `[n, 2, 1, 1]` predictions.
    pub fn forward(&self, features: &Tensor) -> (Tensor, HeadTrace) {
        let pooled = global_avg_pool(features);
        let hidden = relu(&self.fc1.forward(&self.params, &pooled));
        let out = self.fc2.forward(&self.params, &hidden);
        (
            out,
            HeadTrace {
                pooled,
                hidden,
                feat_hw: (features.h, features.w),
            },
        )
    }

    pub fn backward(
        &self,
        trace: &HeadTrace,
        grad_out: &Tensor,
        mut grads: Option<&mut Grads>,
        need_input: bool,
    ) -> Option<Tensor> {
        let g = self
            .fc2
            .backward(&self.params, &trace.hidden, grad_out, grads.as_deref_mut(), true)
            .expect("input grad");
        let g = relu_backward(&trace.hidden, &g);
        let g = self.fc1.backward(&self.params, &trace.pooled, &g, grads, need_input)?;
        Some(global_avg_pool_backward(&g, trace.feat_hw.0, trace.feat_hw.1))
    }
}
