use rand_chacha::ChaCha8Rng;

use super::{FeatureExtractor, Trace};
use crate::layers::{max_pool, max_pool_backward, relu, relu_backward, Conv2d};
use crate::tensor::{Grads, ParamSet, Tensor};

/// Shape of a residual network without normalization layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetSpec {
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub max_pool: bool,
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    pub strides: [usize; 4],
}

impl ResNetSpec {
    /// ResNet-18 convolutional trunk: 7x7/2 stem, max pool, 2-2-2-2 basic blocks.
    pub fn resnet18(width: Option<usize>) -> Self {
        let w = width.unwrap_or(64);
        ResNetSpec {
            stem_kernel: 7,
            stem_stride: 2,
            max_pool: true,
            widths: [w, 2 * w, 4 * w, 8 * w],
            blocks: [2, 2, 2, 2],
            strides: [1, 2, 2, 2],
        }
    }

    /// CPU-sized trunk with the same stride-32 contract: 3x3/2 stem and one
    /// strided basic block per stage.
    pub fn desk(width: Option<usize>) -> Self {
        let w = width.unwrap_or(16);
        ResNetSpec {
            stem_kernel: 3,
            stem_stride: 2,
            max_pool: false,
            widths: [w, 2 * w, 4 * w, 8 * w],
            blocks: [1, 1, 1, 1],
            strides: [2, 2, 2, 2],
        }
    }

    pub fn stride(&self) -> usize {
        let pool = if self.max_pool { 2 } else { 1 };
        self.stem_stride * pool * self.strides.iter().product::<usize>()
    }
}

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Option<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct ResNet {
    kind: String,
    spec: ResNetSpec,
    params: ParamSet,
    stem: Conv2d,
    blocks: Vec<BasicBlock>,
}

impl ResNet {
    pub fn new(kind: &str, spec: ResNetSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamSet::new();
        let stem = Conv2d::new(
            &mut params,
            "stem",
            3,
            spec.widths[0],
            spec.stem_kernel,
            spec.stem_stride,
            spec.stem_kernel / 2,
            1.0,
            rng,
        );
        let mut blocks = Vec::new();
        let mut in_ch = spec.widths[0];
        for stage in 0..4 {
            let out_ch = spec.widths[stage];
            for b in 0..spec.blocks[stage] {
                let stride = if b == 0 { spec.strides[stage] } else { 1 };
                let name = format!("layer{}.{b}", stage + 1);
                let conv1 = Conv2d::new(&mut params, &format!("{name}.conv1"), in_ch, out_ch, 3, stride, 1, 1.0, rng);
                // damped residual branch keeps activations bounded without normalization
                let conv2 = Conv2d::new(&mut params, &format!("{name}.conv2"), out_ch, out_ch, 3, 1, 1, 0.5, rng);
                let shortcut = (stride != 1 || in_ch != out_ch).then(|| {
                    Conv2d::new(&mut params, &format!("{name}.downsample"), in_ch, out_ch, 1, stride, 0, 1.0, rng)
                });
                blocks.push(BasicBlock {
                    conv1,
                    conv2,
                    shortcut,
                });
                in_ch = out_ch;
            }
        }
        ResNet {
            kind: kind.to_string(),
            spec,
            params,
            stem,
            blocks,
        }
    }

    pub fn spec(&self) -> &ResNetSpec {
        &self.spec
    }
}

impl FeatureExtractor for ResNet {
    fn kind(&self) -> &str {
        &self.kind
    }

    fn out_channels(&self) -> usize {
        self.spec.widths[3]
    }

    fn stride(&self) -> usize {
        self.spec.stride()
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    // Trace layout: input, stem activation, [pooled], then (a1, out) per block.
    fn forward(&self, x: &Tensor) -> (Tensor, Trace) {
        let mut t = Vec::with_capacity(3 + 2 * self.blocks.len());
        t.push(x.clone());
        let mut cur = relu(&self.stem.forward(&self.params, x));
        if self.spec.max_pool {
            t.push(cur.clone());
            cur = max_pool(&cur);
        }
        for block in &self.blocks {
            let a1 = relu(&block.conv1.forward(&self.params, &cur));
            let mut sum = block.conv2.forward(&self.params, &a1);
            match &block.shortcut {
                Some(sc) => sum.add_assign(&sc.forward(&self.params, &cur)),
                None => sum.add_assign(&cur),
            }
            t.push(cur);
            t.push(a1);
            cur = relu(&sum);
        }
        let out = cur.clone();
        t.push(cur);
        (out, Trace { tensors: t })
    }

    fn backward(&self, trace: &Trace, grad_out: &Tensor, grads: &mut Grads) {
        let t = &trace.tensors;
        let mut g = grad_out.clone();
        let mut idx = t.len() - 1;
        for block in self.blocks.iter().rev() {
            let (y, a1, x_in) = (&t[idx], &t[idx - 1], &t[idx - 2]);
            let g_sum = relu_backward(y, &g);
            let g_a1 = block
                .conv2
                .backward(&self.params, a1, &g_sum, Some(grads), true)
                .expect("input grad");
            let g_a1 = relu_backward(a1, &g_a1);
            let mut gx = block
                .conv1
                .backward(&self.params, x_in, &g_a1, Some(grads), true)
                .expect("input grad");
            match &block.shortcut {
                Some(sc) => gx.add_assign(
                    &sc.backward(&self.params, x_in, &g_sum, Some(grads), true)
                        .expect("input grad"),
                ),
                None => gx.add_assign(&g_sum),
            }
            g = gx;
            idx -= 2;
        }
        // t[idx] is now the first block's input: the stem activation or its pooled form.
        let stem_act = if self.spec.max_pool {
            g = max_pool_backward(&t[1], &g);
            &t[1]
        } else {
            &t[idx]
        };
        let g = relu_backward(stem_act, &g);
        self.stem.backward(&self.params, &t[0], &g, Some(grads), false);
    }

    fn clone_box(&self) -> Box<dyn FeatureExtractor> {
        Box::new(self.clone())
    }
}
