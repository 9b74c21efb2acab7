use rand_chacha::ChaCha8Rng;

use super::{sa_depth_for_stride, FeatureExtractor, GazeHead, HeadTrace, SaModule, SaTrace, Trace};
use crate::error::{Error, Result};
use crate::geometry::GazeLabel;
use crate::tensor::Tensor;

/// Backbone plus gaze head: everything evaluated at inference time.
#[derive(Debug, Clone)]
pub struct GazeEstimator {
    pub backbone: Box<dyn FeatureExtractor>,
    pub head: GazeHead,
}

impl GazeEstimator {
    pub fn new(backbone: Box<dyn FeatureExtractor>, head_hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let head = GazeHead::new(backbone.out_channels(), head_hidden, rng);
        GazeEstimator { backbone, head }
    }

    pub fn param_count(&self) -> usize {
        self.backbone.params().count() + self.head.params().count()
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<GazeLabel>> {
        check_input(self.backbone.as_ref(), images)?;
        let (features, _) = self.backbone.forward(images);
        let (preds, _) = self.head.forward(&features);
        Ok(labels_from_tensor(&preds))
    }
}

pub(crate) fn labels_from_tensor(preds: &Tensor) -> Vec<GazeLabel> {
    preds
        .data
        .chunks(2)
        .map(|p| GazeLabel {
            pitch: p[0] as f64,
            yaw: p[1] as f64,
        })
        .collect()
}

fn check_input(backbone: &dyn FeatureExtractor, images: &Tensor) -> Result<()> {
    let s = backbone.stride();
    if images.c != 3 {
        return Err(Error::config(format!("expected 3-channel images, got {}", images.c)));
    }
    if !images.h.is_multiple_of(s) || !images.w.is_multiple_of(s) || images.h == 0 || images.w == 0 {
        return Err(Error::config(format!(
            "input {}x{} is not divisible by the extractor stride {s}",
            images.h, images.w
        )));
    }
    Ok(())
}

/// Backbone, gaze head and SA-Module. The gaze path and the reconstruction
/// path read the single backbone instance held here.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    backbone: Box<dyn FeatureExtractor>,
    head: GazeHead,
    sa: SaModule,
}

/// Attaches a fresh SA-Module to an estimator's features. The estimator's
/// parameters are moved in untouched.
pub fn attach_sa(estimator: GazeEstimator, sa_widths: &[usize], rng: &mut ChaCha8Rng) -> Result<ModelBundle> {
    let depth = sa_depth_for_stride(estimator.backbone.stride())?;
    let sa = SaModule::new(estimator.backbone.out_channels(), depth, sa_widths, rng)?;
    Ok(ModelBundle {
        backbone: estimator.backbone,
        head: estimator.head,
        sa,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub features: Tensor,
    pub backbone_trace: Trace,
    /// `[n, 2, 1, 1]` raw `(pitch, yaw)` predictions.
    pub predictions: Tensor,
    pub head_trace: HeadTrace,
    /// Absent when the reconstruction path was skipped.
    pub reconstruction: Option<SaTrace>,
}

impl ForwardOutput {
    pub fn labels(&self) -> Vec<GazeLabel> {
        labels_from_tensor(&self.predictions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Head,
    SaModule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkLoss {
    /// Reconstruction loss, optimizing the SA-Module.
    Sa,
    /// Gaze loss, optimizing the head.
    Mlp,
    /// Weighted adversarial plus gaze loss, optimizing the backbone.
    Backbone,
}

/// Which parameter group each network loss may update, and which groups it
/// only flows through as frozen functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub routes: Vec<(NetworkLoss, ParamGroup, Vec<ParamGroup>)>,
}

impl Routing {
    pub fn updates(&self, loss: NetworkLoss) -> ParamGroup {
        self.routes
            .iter()
            .find(|(l, _, _)| *l == loss)
            .map(|(_, g, _)| *g)
            .expect("every network loss has a route")
    }

    pub fn frozen_through(&self, loss: NetworkLoss) -> &[ParamGroup] {
        self.routes
            .iter()
            .find(|(l, _, _)| *l == loss)
            .map(|(_, _, f)| f.as_slice())
            .expect("every network loss has a route")
    }
}

impl ModelBundle {
    pub fn backbone(&self) -> &dyn FeatureExtractor {
        self.backbone.as_ref()
    }

    pub fn backbone_mut(&mut self) -> &mut dyn FeatureExtractor {
        self.backbone.as_mut()
    }

    /// Backbone seen by the gaze path.
    pub fn gaze_path_backbone(&self) -> &dyn FeatureExtractor {
        self.backbone.as_ref()
    }

    /// Backbone seen by the reconstruction path.
    pub fn reconstruction_path_backbone(&self) -> &dyn FeatureExtractor {
        self.backbone.as_ref()
    }

    pub fn head(&self) -> &GazeHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut GazeHead {
        &mut self.head
    }

    pub fn sa(&self) -> &SaModule {
        &self.sa
    }

    pub fn sa_mut(&mut self) -> &mut SaModule {
        &mut self.sa
    }

    /// Replaces the SA-Module, e.g. with a fresh probe decoder.
    pub fn replace_sa(&mut self, sa: SaModule) -> Result<()> {
        if sa.in_channels() != self.backbone.out_channels()
            || 1usize << sa.depth() != self.backbone.stride()
        {
            return Err(Error::config("SA-Module does not fit the backbone"));
        }
        self.sa = sa;
        Ok(())
    }

    pub fn inference_param_count(&self) -> usize {
        self.backbone.params().count() + self.head.params().count()
    }

    pub fn total_param_count(&self) -> usize {
        self.inference_param_count() + self.sa.params().count()
    }

    /// Drops the SA-Module, keeping what gaze inference needs.
    pub fn into_estimator(self) -> GazeEstimator {
        GazeEstimator {
            backbone: self.backbone,
            head: self.head,
        }
    }

    pub fn estimator(&self) -> GazeEstimator {
        GazeEstimator {
            backbone: self.backbone.clone(),
            head: self.head.clone(),
        }
    }

    pub fn check_resolution(&self, resolution: usize) -> Result<()> {
        let s = self.backbone.stride();
        if resolution == 0 || !resolution.is_multiple_of(s) {
            return Err(Error::config(format!(
                "resolution {resolution} is not divisible by the extractor stride {s}"
            )));
        }
        Ok(())
    }

    /// One shared backbone pass feeding the head and, optionally, the SA-Module.
    pub fn forward(&self, images: &Tensor, reconstruct: bool) -> Result<ForwardOutput> {
        check_input(self.backbone.as_ref(), images)?;
        let (features, backbone_trace) = self.backbone.forward(images);
        let (predictions, head_trace) = self.head.forward(&features);
        let reconstruction = reconstruct.then(|| self.sa.forward(&features));
        Ok(ForwardOutput {
            features,
            backbone_trace,
            predictions,
            head_trace,
            reconstruction,
        })
    }

    /// Gaze predictions only; never evaluates the SA-Module.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<GazeLabel>> {
        check_input(self.backbone.as_ref(), images)?;
        let (features, _) = self.backbone.forward(images);
        let (preds, _) = self.head.forward(&features);
        Ok(labels_from_tensor(&preds))
    }

    pub fn stop_gradient_boundaries(&self) -> Routing {
        use ParamGroup::{Head, SaModule};
        Routing {
            routes: vec![
                // features entering the SA-Module are constants for L_SA
                (NetworkLoss::Sa, SaModule, vec![]),
                (NetworkLoss::Mlp, Head, vec![]),
                // L_adv flows back through a frozen SA-Module, L_gaze through a frozen head
                (NetworkLoss::Backbone, ParamGroup::Backbone, vec![SaModule, Head]),
            ],
        }
    }
}
