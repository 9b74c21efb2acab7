//! Networks: interchangeable feature extractors behind [`FeatureExtractor`],
//! the gaze head, the SA-Module decoder, and their composition.
//!
//! Extractors are registered by name in a [`BackboneRegistry`] and selected
//! at runtime from the training configuration.

mod bundle;
mod checkpoint;
mod head;
mod resnet;
mod sa;
mod toy;

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::{Grads, ParamSet, Tensor};

pub use bundle::{attach_sa, ForwardOutput, GazeEstimator, ModelBundle, NetworkLoss, ParamGroup, Routing};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use head::{GazeHead, HeadTrace, DEFAULT_HEAD_HIDDEN};
pub use resnet::{ResNet, ResNetSpec};
pub use sa::{SaModule, SaTrace, DEFAULT_SA_WIDTHS};
pub use toy::ToyExtractor;

/// Activations saved by a forward pass, consumed by the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub tensors: Vec<Tensor>,
}

/// A convolutional feature extractor with a fixed power-of-two stride.
pub trait FeatureExtractor: Send + Sync + fmt::Debug {
    /// Registry name this extractor was built under.
    fn kind(&self) -> &str;
    fn out_channels(&self) -> usize;
    /// Total spatial downsampling factor.
    fn stride(&self) -> usize;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn forward(&self, x: &Tensor) -> (Tensor, Trace);
    /// Accumulates parameter gradients for `grad_out` w.r.t. the features.
    fn backward(&self, trace: &Trace, grad_out: &Tensor, grads: &mut Grads);
    fn clone_box(&self) -> Box<dyn FeatureExtractor>;
}

impl Clone for Box<dyn FeatureExtractor> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Options forwarded to extractor constructors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BackboneOptions {
    /// Base channel width; `None` uses the extractor's own default.
    pub width: Option<usize>,
}

pub type BackboneCtor = fn(&BackboneOptions, &mut ChaCha8Rng) -> Box<dyn FeatureExtractor>;

struct RegistryEntry {
    ctor: BackboneCtor,
    description: &'static str,
}

pub struct BackboneRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl BackboneRegistry {
    pub fn empty() -> Self {
        BackboneRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// `resnet18`, `desk-resnet` and `toy`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(
            "resnet18",
            "convolutional part of ResNet-18, 512 channels at stride 32",
            |opts, rng| Box::new(ResNet::new("resnet18", ResNetSpec::resnet18(opts.width), rng)),
        );
        r.register(
            "desk-resnet",
            "four single-block residual stages, 128 channels at stride 32",
            |opts, rng| Box::new(ResNet::new("desk-resnet", ResNetSpec::desk(opts.width), rng)),
        );
        r.register(
            "toy",
            "two strided convolutions, 32 channels at stride 4",
            |opts, rng| Box::new(ToyExtractor::new(opts.width.unwrap_or(32), rng)),
        );
        r
    }

    pub fn register(&mut self, name: &str, description: &'static str, ctor: BackboneCtor) {
        self.entries
            .insert(name.to_string(), RegistryEntry { ctor, description });
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, &'static str)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.description))
    }

    pub fn build(
        &self,
        name: &str,
        opts: &BackboneOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Box<dyn FeatureExtractor>> {
        let entry = self.entries.get(name).ok_or_else(|| {
            let known: Vec<_> = self.entries.keys().cloned().collect();
            Error::config(format!(
                "unknown backbone '{name}' (known: {})",
                known.join(", ")
            ))
        })?;
        Ok((entry.ctor)(opts, rng))
    }
}

/// Number of SA-Module upsampling blocks needed to undo `stride`.
pub fn sa_depth_for_stride(stride: usize) -> Result<usize> {
    (1..=6)
        .find(|&n| 1usize << n == stride)
        .ok_or_else(|| Error::config(format!("extractor stride {stride} is not 2^N for N in 1..=6")))
}

/// Independent initialisation streams per network, so allocating (or not
/// allocating) one network never shifts another's initial weights.
pub fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Builds the three networks described by `cfg`, seeded by `cfg.seed`.
/// With `init_from` set, the backbone weights are copied from that checkpoint.
pub fn build_bundle(cfg: &TrainConfig) -> Result<ModelBundle> {
    build_bundle_with(&BackboneRegistry::builtin(), cfg)
}

pub fn build_bundle_with(registry: &BackboneRegistry, cfg: &TrainConfig) -> Result<ModelBundle> {
    let opts = BackboneOptions {
        width: cfg.backbone_width,
    };
    let backbone = registry.build(&cfg.backbone, &opts, &mut init_rng(cfg.seed, 1))?;
    let estimator = GazeEstimator::new(backbone, cfg.head_hidden, &mut init_rng(cfg.seed, 2));
    let mut bundle = attach_sa(estimator, &cfg.sa_widths, &mut init_rng(cfg.seed, 3))?;
    bundle.check_resolution(cfg.resolution)?;
    if let Some(path) = &cfg.init_from {
        let source = load_checkpoint(std::path::Path::new(path))?;
        let src = source.bundle.backbone().params();
        let dst = bundle.backbone_mut().params_mut();
        let compatible = src.params.len() == dst.params.len()
            && src.params.iter().zip(&dst.params).all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !compatible {
            return Err(Error::config(format!(
                "backbone in {path} does not match '{}'",
                cfg.backbone
            )));
        }
        *dst = src.clone();
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lookup() {
        let reg = BackboneRegistry::builtin();
        let names: Vec<_> = reg.names().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["desk-resnet", "resnet18", "toy"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let toy = reg.build("toy", &BackboneOptions::default(), &mut rng).unwrap();
        assert_eq!((toy.kind(), toy.stride(), toy.out_channels()), ("toy", 4, 32));
        assert!(reg.build("vgg", &BackboneOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn stride_to_depth() {
        assert_eq!(sa_depth_for_stride(32).unwrap(), 5);
        assert_eq!(sa_depth_for_stride(4).unwrap(), 2);
        assert!(sa_depth_for_stride(3).is_err());
        assert!(sa_depth_for_stride(128).is_err());
        assert!(sa_depth_for_stride(1).is_err());
    }
}
