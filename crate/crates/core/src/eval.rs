//! Cross-domain evaluation and the analyses built on it: illumination
//! buckets, purification leakage probes and hyperparameter sweeps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::geometry::{label_error, GazeLabel};
use crate::losses::{reconstruction_loss, reconstruction_loss_grad};
use crate::manifest::{write_image, Manifest, ManifestRecord, Sample};
use crate::models::{init_rng, sa_depth_for_stride, Checkpoint, FeatureExtractor, GazeEstimator, SaModule};
use crate::optim::Adam;
use crate::pixels::Image;
use crate::tensor::Tensor;
use crate::training::{train_on, BatchSampler, TrainLog, Trainer};

/// Images per inference batch.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub index: usize,
    pub image: String,
    pub predicted: GazeLabel,
    pub truth: GazeLabel,
    pub error_deg: f64,
    /// Mean pixel intensity of the evaluated image.
    pub mean_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Identifies the evaluated manifest; see [`manifest_fingerprint`].
    pub manifest_fingerprint: u64,
    pub samples: Vec<SampleError>,
    pub mean_error: f64,
}

impl EvalReport {
    pub fn errors(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.error_deg).collect()
    }

    /// Writes one JSON line per sample.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut log = TrainLog::create(path)?;
        for s in &self.samples {
            log.append(s)?;
        }
        log.finish()
    }
}

/// FNV-1a over image paths and labels.
pub fn manifest_fingerprint(records: &[ManifestRecord]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for r in records {
        eat(r.image.as_bytes());
        eat(&r.pitch.to_bits().to_le_bytes());
        eat(&r.yaw.to_bits().to_le_bytes());
    }
    h
}

/// Bilinear resampling with pixel centres aligned (`align_corners = false`).
pub fn resize_bilinear(image: &Image, height: usize, width: usize) -> Image {
    if image.height == height && image.width == width {
        return image.clone();
    }
    let mut out = Image::filled(image.channels, height, width, 0.0);
    let sy = image.height as f64 / height as f64;
    let sx = image.width as f64 / width as f64;
    let coord = |o: usize, s: f64, n: usize| {
        let p = ((o as f64 + 0.5) * s - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        (i0, (i0 + 1).min(n - 1), p - i0 as f64)
    };
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sy, image.height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, sx, image.width);
            for c in 0..image.channels {
                let top = image.at(c, y0, x0) * (1.0 - fx) + image.at(c, y0, x1) * fx;
                let bot = image.at(c, y1, x0) * (1.0 - fx) + image.at(c, y1, x1) * fx;
                out.data[(c * height + y) * width + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn to_tensor(images: &[&Image], resolution: usize) -> Tensor {
    let mut t = Tensor::zeros(images.len(), 3, resolution, resolution);
    for (i, img) in images.iter().enumerate() {
        let resized;
        let img = if img.height != resolution || img.width != resolution {
            resized = resize_bilinear(img, resolution, resolution);
            &resized
        } else {
            *img
        };
        for (d, s) in t.sample_mut(i).iter_mut().zip(&img.data) {
            *d = *s as f32;
        }
    }
    t
}

/// Gaze inference over `samples`; images of another size are bilinearly
/// resized to `resolution`. Only the backbone and head are involved.
pub fn evaluate(estimator: &GazeEstimator, samples: &[Sample], resolution: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::domain("nothing to evaluate"));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (chunk_idx, chunk) in samples.chunks(EVAL_CHUNK).enumerate() {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let preds = estimator.predict(&to_tensor(&images, resolution))?;
        for (j, (s, p)) in chunk.iter().zip(preds).enumerate() {
            let error_deg = label_error(p, s.label)?;
            out.push(SampleError {
                index: chunk_idx * EVAL_CHUNK + j,
                image: s.record.image.clone(),
                predicted: p,
                truth: s.label,
                error_deg,
                mean_intensity: s.image.mean(),
            });
        }
    }
    let records: Vec<ManifestRecord> = samples.iter().map(|s| s.record.clone()).collect();
    let mean_error = out.iter().map(|s| s.error_deg).sum::<f64>() / out.len() as f64;
    Ok(EvalReport {
        manifest_fingerprint: manifest_fingerprint(&records),
        samples: out,
        mean_error,
    })
}

pub fn evaluate_checkpoint(ckpt: &Checkpoint, manifest: &Manifest) -> Result<EvalReport> {
    let samples = manifest.load_all()?;
    evaluate(&ckpt.bundle.estimator(), &samples, ckpt.config.resolution)
}

pub const BUCKET_COUNT: usize = 51;
pub const MIN_BUCKET_SIZE: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: usize,
    /// Bucket centre on the [0, 1] intensity axis.
    pub intensity: f64,
    pub count: usize,
    pub error_a: f64,
    pub error_b: f64,
    /// `error_a - error_b`; positive when `b` is better.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub rows: Vec<BucketRow>,
    pub total_images: usize,
    pub dropped_images: usize,
}

impl BucketTable {
    /// The retained row with the largest improvement.
    pub fn best(&self) -> Option<&BucketRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.improvement.total_cmp(&b.improvement))
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("bucket  intensity  count  error_a  error_b  improvement\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6}  {:>9.4}  {:>5}  {:>7.3}  {:>7.3}  {:>11.3}",
                r.bucket, r.intensity, r.count, r.error_a, r.error_b, r.improvement
            );
        }
        let _ = writeln!(s, "dropped {} of {} images", self.dropped_images, self.total_images);
        s
    }
}

pub fn bucket_index(intensity: f64) -> usize {
    ((intensity.clamp(0.0, 1.0) * BUCKET_COUNT as f64) as usize).min(BUCKET_COUNT - 1)
}

/// Groups images into equal-width mean-intensity buckets and compares two
/// reports of the same manifest.
pub fn illumination_buckets(a: &EvalReport, b: &EvalReport, manifest: &Manifest) -> Result<BucketTable> {
    let fp = manifest_fingerprint(&manifest.records);
    if a.manifest_fingerprint != fp || b.manifest_fingerprint != fp {
        return Err(Error::domain("reports were not evaluated on this manifest"));
    }
    if a.samples.len() != b.samples.len() {
        return Err(Error::domain("reports differ in length"));
    }
    let mut sums = vec![(0usize, 0.0, 0.0); BUCKET_COUNT];
    for (sa, sb) in a.samples.iter().zip(&b.samples) {
        let rec = &manifest.records[sa.index];
        let intensity = rec.mean_intensity.unwrap_or(sa.mean_intensity);
        let slot = &mut sums[bucket_index(intensity)];
        slot.0 += 1;
        slot.1 += sa.error_deg;
        slot.2 += sb.error_deg;
    }
    let mut rows = Vec::new();
    let mut dropped = 0;
    for (i, (count, ea, eb)) in sums.into_iter().enumerate() {
        if count == 0 {
            continue;
        }
        if count < MIN_BUCKET_SIZE {
            dropped += count;
            continue;
        }
        let (ea, eb) = (ea / count as f64, eb / count as f64);
        rows.push(BucketRow {
            bucket: i,
            intensity: (i as f64 + 0.5) / BUCKET_COUNT as f64,
            count,
            error_a: ea,
            error_b: eb,
            improvement: ea - eb,
        });
    }
    Ok(BucketTable {
        rows,
        total_images: a.samples.len(),
        dropped_images: dropped,
    })
}

/// Linear-probe scores in `[0, 1]`; `None` when the manifest lacks the factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeakageScores {
    pub illumination: Option<f64>,
    pub identity: Option<f64>,
}

/// Side of the thumbnail used for identity statistics.
const THUMB: usize = 8;

fn thumbnail_stats(img: &Image) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * THUMB * THUMB);
    let mean = img.mean().max(1e-6);
    for c in 0..img.channels {
        for ty in 0..THUMB {
            for tx in 0..THUMB {
                let (y0, y1) = (ty * img.height / THUMB, ((ty + 1) * img.height / THUMB).max(ty * img.height / THUMB + 1));
                let (x0, x1) = (tx * img.width / THUMB, ((tx + 1) * img.width / THUMB).max(tx * img.width / THUMB + 1));
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += img.at(c, y, x);
                    }
                }
                out.push(s / ((y1 - y0) * (x1 - x0)) as f64 / mean);
            }
        }
    }
    out
}

/// Coefficient of determination of the least-squares line `y ~ a + b x`.
pub fn r_squared_linear(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

/// Fraction of feature variance explained by group means, pooled over
/// features. Equals the R² of least squares on group indicators.
pub fn between_group_fraction(features: &[Vec<f64>], groups: &[u64]) -> f64 {
    use std::collections::BTreeMap;
    if features.len() < 2 {
        return 0.0;
    }
    let dim = features[0].len();
    let n = features.len() as f64;
    let mut grand = vec![0.0; dim];
    for f in features {
        for (g, v) in grand.iter_mut().zip(f) {
            *g += v / n;
        }
    }
    let mut by_group: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for (f, g) in features.iter().zip(groups) {
        let e = by_group.entry(*g).or_insert_with(|| (0.0, vec![0.0; dim]));
        e.0 += 1.0;
        for (s, v) in e.1.iter_mut().zip(f) {
            *s += v;
        }
    }
    let total: f64 = features
        .iter()
        .flat_map(|f| f.iter().zip(&grand).map(|(v, m)| (v - m) * (v - m)))
        .sum();
    if total <= 0.0 {
        return 0.0;
    }
    let between: f64 = by_group
        .values()
        .flat_map(|(count, sum)| sum.iter().zip(&grand).map(move |(s, m)| count * (s / count - m).powi(2)))
        .sum();
    (between / total).clamp(0.0, 1.0)
}

/// Illumination: R² of illumination on reconstruction mean intensity.
/// Identity: between-identity variance fraction of intensity-normalised
/// reconstruction thumbnails.
pub fn leakage_scores(reconstructions: &[Image], records: &[ManifestRecord]) -> LeakageScores {
    let illumination = records
        .iter()
        .map(|r| r.illumination)
        .collect::<Option<Vec<f64>>>()
        .map(|y| {
            let x: Vec<f64> = reconstructions.iter().map(Image::mean).collect();
            r_squared_linear(&x, &y)
        });
    let identity = records
        .iter()
        .map(|r| r.identity_seed)
        .collect::<Option<Vec<u64>>>()
        .map(|ids| {
            let feats: Vec<Vec<f64>> = reconstructions.iter().map(thumbnail_stats).collect();
            between_group_fraction(&feats, &ids)
        });
    LeakageScores { illumination, identity }
}

fn features_of(backbone: &dyn FeatureExtractor, samples: &[Sample], resolution: usize) -> Vec<Tensor> {
    samples
        .chunks(EVAL_CHUNK)
        .map(|chunk| {
            let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
            backbone.forward(&to_tensor(&images, resolution)).0
        })
        .collect()
}

fn gather(chunks: &[Tensor], indices: &[usize]) -> Tensor {
    let first = &chunks[0];
    let mut out = Tensor::zeros(indices.len(), first.c, first.h, first.w);
    for (dst, &i) in indices.iter().enumerate() {
        let src = chunks[i / EVAL_CHUNK].sample(i % EVAL_CHUNK);
        out.sample_mut(dst).copy_from_slice(src);
    }
    out
}

fn tensor_images(t: &Tensor) -> Result<Vec<Image>> {
    (0..t.n)
        .map(|i| Image::new(t.c, t.h, t.w, t.sample(i).iter().map(|&v| v as f64).collect()))
        .collect()
}

fn reconstruct_all(sa: &SaModule, features: &[Tensor]) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for f in features {
        out.extend(tensor_images(sa.forward(f).output())?);
    }
    Ok(out)
}

fn resized_originals(samples: &[Sample], resolution: usize) -> Vec<Image> {
    samples.iter().map(|s| resize_bilinear(&s.image, resolution, resolution)).collect()
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub sa: SaModule,
    /// Mean reconstruction loss over the last logged steps.
    pub final_rec_loss: f64,
    /// Set when training diverged; `sa` then holds the last finite state.
    pub failure: Option<String>,
}

/// Trains a fresh SA-Module to reconstruct `samples` from the features of a
/// frozen `backbone`, with the optimiser settings of `config`.
pub fn train_probe(
    backbone: &dyn FeatureExtractor,
    samples: &[Sample],
    config: &TrainConfig,
    steps: usize,
) -> Result<ProbeOutcome> {
    if samples.is_empty() {
        return Err(Error::domain("empty probe set"));
    }
    let res = config.resolution;
    let depth = sa_depth_for_stride(backbone.stride())?;
    let mut rng = init_rng(config.seed, 4);
    let mut sa = SaModule::new(backbone.out_channels(), depth, &config.sa_widths, &mut rng)?;
    let mut opt = Adam::new(sa.params(), config.lr_sa, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let features = features_of(backbone, samples, res);
    let originals = resized_originals(samples, res);
    let mut sampler = BatchSampler::new(samples.len(), config.batch_size, config.seed);
    let mut recent = Vec::new();
    for step in 0..steps {
        let idx = sampler.next_indices();
        let feats = gather(&features, &idx);
        let trace = sa.forward(&feats);
        let recon = tensor_images(trace.output())?;
        let inv_b = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(trace.output().data.len());
        for (r, &i) in recon.iter().zip(&idx) {
            loss += reconstruction_loss(&originals[i], r)? * inv_b;
            grad.extend(reconstruction_loss_grad(&originals[i], r)?.into_iter().map(|g| (g * inv_b) as f32));
        }
        let out = trace.output();
        let g = Tensor::from_vec(out.n, out.c, out.h, out.w, grad);
        let mut grads = sa.params().zero_grads();
        sa.backward(&trace, &g, Some(&mut grads), false);
        if !loss.is_finite() || !grads.is_finite() {
            return Ok(ProbeOutcome {
                sa,
                final_rec_loss: loss,
                failure: Some(format!("probe diverged at step {}", step + 1)),
            });
        }
        opt.step(sa.params_mut(), &grads);
        recent.push(loss);
        if recent.len() > 10 {
            recent.remove(0);
        }
    }
    let final_rec_loss = if recent.is_empty() {
        f64::NAN
    } else {
        recent.iter().sum::<f64>() / recent.len() as f64
    };
    Ok(ProbeOutcome {
        sa,
        final_rec_loss,
        failure: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualizationReport {
    pub purified: LeakageScores,
    pub baseline_probe: LeakageScores,
    pub purified_rec_loss: f64,
    pub probe_rec_loss: f64,
    pub probe_failure: Option<String>,
}

/// Columns shown in the dumped grids.
const GRID_COLUMNS: usize = 8;

/// Rows of images, left to right, separated by a one-pixel white gutter.
pub fn image_grid(rows: &[&[Image]]) -> Result<Image> {
    let first = rows
        .iter()
        .find_map(|r| r.first())
        .ok_or_else(|| Error::domain("empty grid"))?;
    let (h, w) = (first.height, first.width);
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + 1) + 1, cols * (w + 1) + 1);
    let mut grid = Image::filled(3, gh, gw, 1.0);
    for (ri, row) in rows.iter().enumerate() {
        for (ci, img) in row.iter().enumerate() {
            if img.height != h || img.width != w || img.channels != 3 {
                return Err(Error::domain("grid images differ in shape"));
            }
            for c in 0..3 {
                for y in 0..h {
                    let dst = (c * gh + ri * (h + 1) + 1 + y) * gw + ci * (w + 1) + 1;
                    let src = (c * h + y) * w;
                    grid.data[dst..dst + w].copy_from_slice(&img.data[src..src + w]);
                }
            }
        }
    }
    Ok(grid)
}

/// Reconstructs `samples` with the purified model's own SA-Module and with a
/// probe trained on the frozen baseline backbone, writes
/// `purification_grid.png` (originals, purified, probe) and `leakage.json`
/// into `out_dir`, and scores both reconstructions.
pub fn visualize_purification(
    purified: &Checkpoint,
    baseline: &Checkpoint,
    samples: &[Sample],
    probe_steps: usize,
    out_dir: Option<&Path>,
) -> Result<VisualizationReport> {
    let res = purified.config.resolution;
    if baseline.config.resolution != res {
        return Err(Error::config(format!(
            "checkpoints differ in resolution ({res} vs {})",
            baseline.config.resolution
        )));
    }
    if samples.is_empty() {
        return Err(Error::domain("empty probe set"));
    }
    let records: Vec<ManifestRecord> = samples.iter().map(|s| s.record.clone()).collect();
    let originals = resized_originals(samples, res);

    let own_features = features_of(purified.bundle.backbone(), samples, res);
    let own = reconstruct_all(purified.bundle.sa(), &own_features)?;
    let purified_rec_loss = mean_rec_loss(&originals, &own)?;

    let probe_cfg = TrainConfig {
        sa_widths: purified.config.sa_widths.clone(),
        ..baseline.config.clone()
    };
    let probe = train_probe(baseline.bundle.backbone(), samples, &probe_cfg, probe_steps)?;
    let base_features = features_of(baseline.bundle.backbone(), samples, res);
    let probed = reconstruct_all(&probe.sa, &base_features)?;

    let report = VisualizationReport {
        purified: leakage_scores(&own, &records),
        baseline_probe: leakage_scores(&probed, &records),
        purified_rec_loss,
        probe_rec_loss: mean_rec_loss(&originals, &probed)?,
        probe_failure: probe.failure,
    };
    if let Some(dir) = out_dir {
        let n = GRID_COLUMNS.min(samples.len());
        let grid = image_grid(&[&originals[..n], &own[..n], &probed[..n]])?;
        write_image(&dir.join("purification_grid.png"), &grid)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(dir.join("leakage.json"), json + "\n").map_err(|e| Error::io(dir, e))?;
    }
    Ok(report)
}

fn mean_rec_loss(originals: &[Image], recon: &[Image]) -> Result<f64> {
    let mut s = 0.0;
    for (a, b) in originals.iter().zip(recon) {
        s += reconstruction_loss(a, b)?;
    }
    Ok(s / originals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    SigmaSq,
    K,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_sq" | "sigma" => Ok(SweepParam::SigmaSq),
            "k" => Ok(SweepParam::K),
            other => Err(Error::config(format!("unknown sweep parameter '{other}' (sigma_sq, k)"))),
        }
    }
}

/// A sweep value; `Off` disables the attention map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SweepValue {
    Value(f64),
    Off,
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Value(v) => write!(f, "{v}"),
            SweepValue::Off => f.write_str("off"),
        }
    }
}

pub fn parse_sweep_values(text: &str) -> Result<Vec<SweepValue>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "off" | "none" => Ok(SweepValue::Off),
            v => v
                .parse()
                .map(SweepValue::Value)
                .map_err(|_| Error::config(format!("bad sweep value '{v}'"))),
        })
        .collect()
}

impl SweepParam {
    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &TrainConfig, value: SweepValue) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match (self, value) {
            (SweepParam::SigmaSq, SweepValue::Value(v)) => cfg.sigma_sq = Some(v),
            (SweepParam::SigmaSq, SweepValue::Off) => cfg.sigma_sq = None,
            (SweepParam::K, SweepValue::Value(v)) => cfg.k = v,
            (SweepParam::K, SweepValue::Off) => return Err(Error::config("k has no 'off' value; use 0")),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub value: String,
    pub seed: u64,
    pub target_error: f64,
    /// Checksum over all trained parameters.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub mean_error: f64,
    /// Population standard deviation over seeds.
    pub spread: f64,
    pub seed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRun>,
}

impl SweepTable {
    pub fn summary(&self) -> String {
        let mut s = String::from("value  mean_error  spread  seeds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:>5}  {:>10.4}  {:>6.4}  {:>5}", r.value, r.mean_error, r.spread, r.seed_count);
        }
        s
    }

    /// Plain numeric columns: row index, mean error, spread.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("# index value mean_error spread\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", r.value, r.mean_error, r.spread);
        }
        s
    }
}

pub fn bundle_checksum(trainer: &Trainer) -> u64 {
    let b = &trainer.bundle;
    [b.backbone().params().checksum(), b.head().params().checksum(), b.sa().params().checksum()]
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, c| (h ^ c).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Trains one model per `(value, seed)` on `source` and evaluates it on
/// `target`. With `out_dir`, each run's artefacts go to
/// `runs/<param>_<value>_seed<seed>/` and the table to `sweep.jsonl`,
/// `sweep.txt` and `sweep_plot.dat`.
pub fn ablation_sweep(
    param: SweepParam,
    values: &[SweepValue],
    base: &TrainConfig,
    seeds: &[u64],
    source: &[Sample],
    target: &[Sample],
    out_dir: &Path,
) -> Result<SweepTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one value and one seed"));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let tag = match param {
        SweepParam::SigmaSq => "sigma_sq",
        SweepParam::K => "k",
    };
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (value, cfg) in values.iter().zip(configs) {
        let mut errors = Vec::new();
        for &seed in seeds {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let run_dir = out_dir.join("runs").join(format!("{tag}_{value}_seed{seed}"));
            let outcome = train_on(&run_cfg, source, &run_dir)?;
            let report = evaluate(&outcome.trainer.bundle.estimator(), target, run_cfg.resolution)?;
            errors.push(report.mean_error);
            runs.push(SweepRun {
                value: value.to_string(),
                seed,
                target_error: report.mean_error,
                checksum: bundle_checksum(&outcome.trainer),
            });
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let spread = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
        rows.push(SweepRow {
            value: value.to_string(),
            mean_error: mean,
            spread,
            seed_count: errors.len(),
        });
    }
    let table = SweepTable { param, rows, runs };
    let mut log = TrainLog::create(&out_dir.join("sweep.jsonl"))?;
    for r in &table.rows {
        log.append(r)?;
    }
    log.finish()?;
    std::fs::write(out_dir.join("sweep.txt"), table.summary()).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("sweep_plot.dat"), table.plot_data()).map_err(|e| Error::io(out_dir, e))?;
    Ok(table)
}
