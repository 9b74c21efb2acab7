use rand_chacha::ChaCha8Rng;

use super::{FeatureExtractor, Trace};
use crate::layers::{relu, relu_backward, Conv2d};
use crate::tensor::{Grads, ParamSet, Tensor};

/// Two strided 3x3 convolutions (stride 4 overall). Stands in for a foreign
/// gaze-estimation trunk when exercising the SA attachment.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    params: ParamSet,
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ToyExtractor {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let hidden = (channels / 2).max(1);
        let conv1 = Conv2d::new(&mut params, "conv1", 3, hidden, 3, 2, 1, 1.0, rng);
        let conv2 = Conv2d::new(&mut params, "conv2", hidden, channels, 3, 2, 1, 1.0, rng);
        ToyExtractor {
            params,
            conv1,
            conv2,
        }
    }
}

impl FeatureExtractor for ToyExtractor {
    fn kind(&self) -> &str {
        "toy"
    }

    fn out_channels(&self) -> usize {
        self.conv2.out_ch
    }

    fn stride(&self) -> usize {
        4
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward(&self, x: &Tensor) -> (Tensor, Trace) {
        let a = relu(&self.conv1.forward(&self.params, x));
        let y = relu(&self.conv2.forward(&self.params, &a));
        let trace = Trace {
            tensors: vec![x.clone(), a, y.clone()],
        };
        (y, trace)
    }

    fn backward(&self, trace: &Trace, grad_out: &Tensor, grads: &mut Grads) {
        let [x, a, y] = &trace.tensors[..] else {
            panic!("toy extractor trace has three entries");
        };
        let g = relu_backward(y, grad_out);
        let g = self
            .conv2
            .backward(&self.params, a, &g, Some(grads), true)
            .expect("input grad");
        let g = relu_backward(a, &g);
        self.conv1.backward(&self.params, x, &g, Some(grads), false);
    }

    fn clone_box(&self) -> Box<dyn FeatureExtractor> {
        Box::new(self.clone())
    }
}
