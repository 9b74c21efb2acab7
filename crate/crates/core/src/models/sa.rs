use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{relu, relu_backward, sigmoid, sigmoid_backward, upsample_nearest2x, upsample_nearest2x_backward, Conv2d};
use crate::tensor::{Grads, ParamSet, Tensor};

/// Block widths from the feature end to the image end.
pub const DEFAULT_SA_WIDTHS: [usize; 5] = [256, 128, 64, 32, 16];

/// Self-adversarial reconstruction decoder: `N` blocks of (nearest 2x
/// upsample, 3x3 conv, ReLU), then a 1x1 conv to RGB and a sigmoid.
#[derive(Debug, Clone)]
pub struct SaModule {
    params: ParamSet,
    in_channels: usize,
    blocks: Vec<Conv2d>,
    to_rgb: Conv2d,
}

/// Per block: upsampled input and activation; then the output image.
#[derive(Debug, Clone)]
pub struct SaTrace {
    upsampled: Vec<Tensor>,
    activations: Vec<Tensor>,
    output: Tensor,
}

impl SaTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl SaModule {
    /// `widths` lists per-block output channels; when longer than `depth`,
    /// the last `depth` entries (those nearest the image) are used.
    pub fn new(in_channels: usize, depth: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::config("SA-Module needs at least one block"));
        }
        if widths.len() < depth {
            return Err(Error::config(format!(
                "SA-Module depth {depth} needs {depth} block widths, got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::config("SA-Module block widths must be positive"));
        }
        let widths = &widths[widths.len() - depth..];
        let mut params = ParamSet::new();
        let mut blocks = Vec::with_capacity(depth);
        let mut ch = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(Conv2d::new(&mut params, &format!("block{i}.conv"), ch, w, 3, 1, 1, 1.0, rng));
            ch = w;
        }
        let to_rgb = Conv2d::new(&mut params, "to_rgb", ch, 3, 1, 1, 0, 0.5, rng);
        Ok(SaModule {
            params,
            in_channels,
            blocks,
            to_rgb,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_ch).collect()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn forward(&self, features: &Tensor) -> SaTrace {
        let mut upsampled = Vec::with_capacity(self.blocks.len());
        let mut activations = Vec::with_capacity(self.blocks.len());
        let mut cur = features.clone();
        for conv in &self.blocks {
            let up = upsample_nearest2x(&cur);
            cur = relu(&conv.forward(&self.params, &up));
            upsampled.push(up);
            activations.push(cur.clone());
        }
        let output = sigmoid(&self.to_rgb.forward(&self.params, &cur));
        SaTrace {
            upsampled,
            activations,
            output,
        }
    }

    /// Back-propagates `grad_out` (w.r.t. the output image). Parameter
    /// gradients are accumulated only when `grads` is given; the feature
    /// gradient is returned only when `need_input` is set.
    pub fn backward(
        &self,
        trace: &SaTrace,
        grad_out: &Tensor,
        mut grads: Option<&mut Grads>,
        need_input: bool,
    ) -> Option<Tensor> {
        let g = sigmoid_backward(&trace.output, grad_out);
        let last = trace.activations.last().expect("at least one block");
        let mut g = self
            .to_rgb
            .backward(&self.params, last, &g, grads.as_deref_mut(), true)
            .expect("input grad");
        for (i, conv) in self.blocks.iter().enumerate().rev() {
            g = relu_backward(&trace.activations[i], &g);
            let want_input = i > 0 || need_input;
            {
                let gu = conv.backward(&self.params, &trace.upsampled[i], &g, grads.as_deref_mut(), want_input)?;
                g = upsample_nearest2x_backward(&gu)
            }
        }
        Some(g)
    }
}
