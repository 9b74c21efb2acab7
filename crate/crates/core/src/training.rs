//! The self-adversarial training loop.
//!
//! Every step runs one shared forward pass and computes three routed updates
//! against the pre-step parameters, applied in the order SA-Module, head,
//! backbone:
//!
//! * SA-Module  <- `L_rec` (features treated as constants)
//! * head       <- `L_gaze`
//! * backbone   <- `alpha * truncated, attention-weighted L_adv + beta * L_gaze`,
//!   flowing through the frozen SA-Module and head.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::AttentionMap;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::GazeLabel;
use crate::losses::{
    gaze_loss_batch, gaze_loss_grad, reconstruction_loss, reconstruction_loss_grad,
    truncated_adversarial, truncated_adversarial_grad, LossReport,
};
use crate::manifest::{Manifest, Sample};
use crate::models::{build_bundle, save_checkpoint, Checkpoint, ModelBundle, NetworkLoss, ParamGroup};
use crate::optim::Adam;
use crate::pixels::Image;
use crate::tensor::Tensor;

/// A training batch: network input plus the per-sample targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub originals: Vec<Image>,
    pub labels: Vec<GazeLabel>,
    pub maps: Vec<AttentionMap>,
}

impl Batch {
    /// `sigma_sq` is the variance at the images' resolution; `None` gives `M = 1`.
    /// Eye centres are required whenever a variance is given.
    pub fn from_samples(samples: &[&Sample], sigma_sq: Option<f64>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::domain("empty batch"))?;
        let (h, w) = (first.image.height, first.image.width);
        let mut images = Tensor::zeros(samples.len(), 3, h, w);
        let mut maps = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.image.channels != 3 || s.image.height != h || s.image.width != w {
                return Err(Error::domain("batch images differ in shape"));
            }
            for (dst, src) in images.sample_mut(i).iter_mut().zip(&s.image.data) {
                *dst = *src as f32;
            }
            let map = match sigma_sq {
                Some(var) => {
                    let eyes = s.eye_centers.ok_or_else(|| {
                        Error::config(format!(
                            "sample '{}' has no eye centres but the attention map is enabled",
                            s.record.image
                        ))
                    })?;
                    AttentionMap::build(h, w, &eyes, var)?
                }
                None => AttentionMap::uniform(h, w),
            };
            maps.push(map);
        }
        Ok(Batch {
            images,
            originals: samples.iter().map(|s| s.image.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            maps,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Which parameter groups a step may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveUpdates {
    pub sa: bool,
    pub head: bool,
    pub backbone: bool,
}

impl ActiveUpdates {
    pub const ALL: ActiveUpdates = ActiveUpdates {
        sa: true,
        head: true,
        backbone: true,
    };

    pub fn only(group: ParamGroup) -> Self {
        ActiveUpdates {
            sa: group == ParamGroup::SaModule,
            head: group == ParamGroup::Head,
            backbone: group == ParamGroup::Backbone,
        }
    }

    fn allows(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::SaModule => self.sa,
            ParamGroup::Head => self.head,
            ParamGroup::Backbone => self.backbone,
        }
    }
}

/// Owns a bundle and one Adam optimiser per network.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    opt_backbone: Adam,
    opt_head: Adam,
    opt_sa: Adam,
    step: u64,
}

fn to_f32_tensor(n: usize, c: usize, h: usize, w: usize, data: impl Iterator<Item = f64>) -> Tensor {
    Tensor::from_vec(n, c, h, w, data.map(|v| v as f32).collect())
}

impl Trainer {
    pub fn new(config: TrainConfig, bundle: ModelBundle) -> Result<Self> {
        config.validate()?;
        bundle.check_resolution(config.resolution)?;
        let adam = |ps, lr| Adam::new(ps, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
        Ok(Trainer {
            opt_backbone: adam(bundle.backbone().params(), config.lr_backbone),
            opt_head: adam(bundle.head().params(), config.lr_head),
            opt_sa: adam(bundle.sa().params(), config.lr_sa),
            config,
            bundle,
            step: 0,
        })
    }

    pub fn from_config(config: TrainConfig) -> Result<Self> {
        let bundle = build_bundle(&config)?;
        Self::new(config, bundle)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Sets the step counter, e.g. when resuming from a checkpoint.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        self.train_step_routed(batch, ActiveUpdates::ALL)
    }

    /// One step with only the groups in `active` updated.
    pub fn train_step_routed(&mut self, batch: &Batch, active: ActiveUpdates) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let res = self.config.resolution;
        if batch.images.h != res || batch.images.w != res {
            return Err(Error::config(format!(
                "batch images are {}x{}, configured resolution is {res}",
                batch.images.h, batch.images.w
            )));
        }
        let cfg = &self.config;
        let routing = self.bundle.stop_gradient_boundaries();
        let reconstruct = !cfg.baseline;
        let out = self.bundle.forward(&batch.images, reconstruct)?;
        let b = batch.len();
        let inv_b = 1.0 / b as f64;

        // gaze path
        let preds = out.labels();
        let gaze = gaze_loss_batch(&preds, &batch.labels)?;
        let dpred = to_f32_tensor(
            b,
            2,
            1,
            1,
            preds
                .iter()
                .zip(&batch.labels)
                .flat_map(|(p, t)| gaze_loss_grad(*p, *t))
                .map(|g| g * inv_b),
        );

        // reconstruction path
        let mut report = LossReport {
            step: self.step + 1,
            gaze_loss: gaze,
            mlp_loss: gaze,
            ..Default::default()
        };
        let mut rec_grad = None;
        let mut adv_grad = None;
        if let Some(sa_trace) = &out.reconstruction {
            let recon = sa_trace.output();
            let (c, h, w) = (recon.c, recon.h, recon.w);
            let mut g_rec = Vec::with_capacity(recon.data.len());
            let mut g_adv = Vec::with_capacity(recon.data.len());
            let (mut rec_sum, mut adv_sum) = (0.0, 0.0);
            for (i, (orig, map)) in batch.originals.iter().zip(&batch.maps).enumerate() {
                let r = Image::new(c, h, w, recon.sample(i).iter().map(|&v| v as f64).collect())?;
                rec_sum += reconstruction_loss(orig, &r)?;
                adv_sum += truncated_adversarial(orig, &r, map, cfg.k)?;
                g_rec.extend(reconstruction_loss_grad(orig, &r)?.into_iter().map(|g| g * inv_b));
                if cfg.alpha > 0.0 {
                    g_adv.extend(
                        truncated_adversarial_grad(orig, &r, map, cfg.k)?
                            .into_iter()
                            .map(|g| g * cfg.alpha * inv_b),
                    );
                }
            }
            report.rec_loss = rec_sum * inv_b;
            report.sa_loss = report.rec_loss;
            report.adv_loss = 1.0 - report.rec_loss;
            report.adv_truncated = adv_sum * inv_b;
            rec_grad = Some(to_f32_tensor(b, c, h, w, g_rec.into_iter()));
            if cfg.alpha > 0.0 {
                adv_grad = Some(to_f32_tensor(b, c, h, w, g_adv.into_iter()));
            }
        }
        report.backbone_loss = cfg.alpha * report.adv_truncated + cfg.beta * gaze;
        if cfg.baseline {
            report.backbone_loss = cfg.beta * gaze;
        }
        if !(report.gaze_loss.is_finite() && report.rec_loss.is_finite() && report.adv_truncated.is_finite()) {
            return Err(Error::Divergence(format!("non-finite loss at step {}", report.step)));
        }

        // gradients, all against pre-step parameters
        let sa_group = routing.updates(NetworkLoss::Sa);
        let head_group = routing.updates(NetworkLoss::Mlp);
        let backbone_group = routing.updates(NetworkLoss::Backbone);
        let update_sa = active.allows(sa_group) && rec_grad.is_some();
        let update_head = active.allows(head_group);
        let update_backbone = active.allows(backbone_group);

        let mut sa_grads = self.bundle.sa().params().zero_grads();
        if update_sa {
            let trace = out.reconstruction.as_ref().expect("reconstruction ran");
            self.bundle.sa().backward(trace, rec_grad.as_ref().unwrap(), Some(&mut sa_grads), false);
        }

        let mut head_grads = self.bundle.head().params().zero_grads();
        let need_gaze_feature_grad = update_backbone && cfg.beta > 0.0;
        let gaze_feat = self.bundle.head().backward(
            &out.head_trace,
            &dpred,
            update_head.then_some(&mut head_grads),
            need_gaze_feature_grad,
        );

        let mut backbone_grads = self.bundle.backbone().params().zero_grads();
        if update_backbone {
            let mut g_feat = match gaze_feat {
                Some(mut g) => {
                    g.scale(cfg.beta as f32);
                    g
                }
                None => out.features.zeros_like(),
            };
            if let (Some(g_adv), Some(trace)) = (&adv_grad, &out.reconstruction) {
                let g = self
                    .bundle
                    .sa()
                    .backward(trace, g_adv, None, true)
                    .expect("feature gradient");
                g_feat.add_assign(&g);
            }
            self.bundle
                .backbone()
                .backward(&out.backbone_trace, &g_feat, &mut backbone_grads);
        }

        for (name, ok) in [
            ("SA-Module", sa_grads.is_finite()),
            ("head", head_grads.is_finite()),
            ("backbone", backbone_grads.is_finite()),
        ] {
            if !ok {
                return Err(Error::Divergence(format!(
                    "non-finite {name} gradient at step {}",
                    report.step
                )));
            }
        }

        if update_sa {
            self.opt_sa.step(self.bundle.sa_mut().params_mut(), &sa_grads);
        }
        if update_head {
            self.opt_head.step(self.bundle.head_mut().params_mut(), &head_grads);
        }
        if update_backbone {
            self.opt_backbone
                .step(self.bundle.backbone_mut().params_mut(), &backbone_grads);
        }
        self.step += 1;
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            seed: self.config.seed,
            step: self.step,
            bundle: self.bundle.clone(),
        }
    }
}

/// Seed-determined batch order: reshuffled each epoch, independent of the
/// model so that different training modes see identical batches.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xba7c);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        BatchSampler {
            rng,
            order,
            cursor: 0,
            batch_size: batch_size.min(len.max(1)),
        }
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        while out.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Runs `steps` steps over `samples`, calling `on_report` after each one.
pub fn run_steps(
    trainer: &mut Trainer,
    samples: &[Sample],
    steps: usize,
    mut on_report: impl FnMut(&Trainer, &LossReport) -> Result<()>,
) -> Result<Option<LossReport>> {
    if samples.is_empty() {
        return Err(Error::domain("no training samples"));
    }
    let sigma = if trainer.config.baseline {
        None
    } else {
        trainer.config.sigma_sq
    };
    let mut sampler = BatchSampler::new(samples.len(), trainer.config.batch_size, trainer.config.seed);
    let mut last = None;
    for _ in 0..steps {
        let idx = sampler.next_indices();
        let refs: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let batch = Batch::from_samples(&refs, sigma)?;
        let report = trainer.train_step(&batch)?;
        on_report(trainer, &report)?;
        last = Some(report);
    }
    Ok(last)
}

/// Line-delimited JSON writer for loss reports.
pub struct TrainLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TrainLog {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record).expect("log records serialize");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) => problems.push(format!("line {}: {e}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::Ingestion {
            path: path.to_path_buf(),
            problems,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub final_report: Option<LossReport>,
    pub trainer: Trainer,
}

fn resize_check(samples: &[Sample], resolution: usize) -> Result<()> {
    for s in samples {
        if s.image.height != resolution || s.image.width != resolution {
            return Err(Error::config(format!(
                "image '{}' is {}x{}, configured resolution is {resolution}",
                s.record.image, s.image.height, s.image.width
            )));
        }
    }
    Ok(())
}

/// Trains on `samples` with `config`, writing into `out_dir`:
/// `train_log.jsonl`, `config.txt`, `checkpoint.safetensors` and, with
/// `checkpoint_every > 0`, `checkpoints/step_NNNNNN.safetensors`.
pub fn train_on(config: &TrainConfig, samples: &[Sample], out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    resize_check(samples, config.resolution)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("config.txt"), config.to_text()).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::from_config(config.clone())?;
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = TrainLog::create(&log_path)?;
    let steps = config.steps;
    let final_report = run_steps(&mut trainer, samples, steps, |t, r| {
        let s = r.step as usize;
        if (t.config.log_every > 0 && s.is_multiple_of(t.config.log_every)) || s == steps {
            log.append(r)?;
        }
        if t.config.checkpoint_every > 0 && s.is_multiple_of(t.config.checkpoint_every) && s != steps {
            let p = out_dir.join("checkpoints").join(format!("step_{s:06}.safetensors"));
            save_checkpoint(&t.checkpoint(), &p)?;
        }
        Ok(())
    })?;
    log.finish()?;
    let checkpoint_path = out_dir.join("checkpoint.safetensors");
    save_checkpoint(&trainer.checkpoint(), &checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint_path,
        log_path,
        final_report,
        trainer,
    })
}

pub fn train(config: &TrainConfig, manifest: &Manifest, out_dir: &Path) -> Result<TrainOutcome> {
    let samples = manifest.load_all()?;
    train_on(config, &samples, out_dir)
}

/// Keeps at most `per_identity` samples of each identity, in manifest order.
/// Records without an identity form one group.
pub fn few_shot_subset(samples: Vec<Sample>, per_identity: usize) -> Vec<Sample> {
    let mut counts = std::collections::HashMap::new();
    samples
        .into_iter()
        .filter(|s| {
            let c = counts.entry(s.record.identity_seed).or_insert(0usize);
            *c += 1;
            *c <= per_identity
        })
        .collect()
}

/// Continues training `ckpt` on a few target samples with the same routing.
/// Zero steps returns the checkpoint unchanged.
pub fn finetune(ckpt: &Checkpoint, target: Vec<Sample>, steps: usize, per_identity: usize) -> Result<Checkpoint> {
    let subset = few_shot_subset(target, per_identity);
    if subset.is_empty() {
        return Err(Error::domain("fine-tuning target set is empty"));
    }
    if steps == 0 {
        return Ok(ckpt.clone());
    }
    resize_check(&subset, ckpt.config.resolution)?;
    let mut trainer = Trainer::new(ckpt.config.clone(), ckpt.bundle.clone())?;
    trainer.set_step(ckpt.step);
    run_steps(&mut trainer, &subset, steps, |_, _| Ok(()))?;
    Ok(trainer.checkpoint())
}
