//! Deterministic synthetic face renderer with controllable nuisance factors.
//!
//! A face is an ellipse on a flat background with two eyes. Gaze moves the
//! iris disks inside their sclera circles; everything else is nuisance:
//! identity (skin albedo and tint, iris colour, face and eye geometry jitter),
//! a global illumination gain, an optional off-face distractor bar, and
//! additive Gaussian noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazeLabel;
use crate::manifest::{write_image, Manifest, ManifestRecord, Sample};
use crate::pixels::Image;

/// Sclera radius as a fraction of the image side.
const SCLERA_RADIUS: f64 = 0.09;
/// Iris radius as a fraction of the sclera radius.
const IRIS_RATIO: f64 = 0.4;
/// Iris travel per unit of gaze-vector displacement, in units of free play
/// `(sclera - iris)`. Gazes further than `asin(1 / IRIS_TRAVEL)` off-axis
/// would push the iris out of the eye and are rejected.
const IRIS_TRAVEL: f64 = 1.5;
const BACKGROUND: [f64; 3] = [0.42, 0.45, 0.5];
const SCLERA: [f64; 3] = [0.95, 0.94, 0.92];
const DISTRACTOR: [f64; 3] = [0.12, 0.12, 0.14];

/// Identity-dependent appearance, derived from an identity seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub seed: u64,
    pub skin: [f64; 3],
    pub iris: [f64; 3],
    /// Face centre offset `(row, col)` and radii scale, as image fractions.
    pub face_offset: (f64, f64),
    pub face_scale: f64,
    /// Half distance between eyes and eye height, as image fractions.
    pub eye_half_gap: f64,
    pub eye_row: f64,
}

impl Identity {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d3e_7a11_5eed_0000);
        let albedo = rng.gen_range(0.45..0.85);
        let skin = [
            albedo,
            albedo * rng.gen_range(0.78..0.9),
            albedo * rng.gen_range(0.62..0.8),
        ];
        let iris_level = rng.gen_range(0.08..0.3);
        let iris = [
            iris_level * rng.gen_range(0.8..1.2),
            iris_level * rng.gen_range(0.8..1.2),
            iris_level * rng.gen_range(0.8..1.4),
        ];
        Identity {
            seed,
            skin,
            iris,
            face_offset: (rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02)),
            face_scale: rng.gen_range(0.94..1.06),
            eye_half_gap: rng.gen_range(0.15..0.17),
            eye_row: rng.gen_range(0.40..0.44),
        }
    }

    /// Eye centres `(row, col)` in pixels at `resolution`; left is the lower column.
    pub fn eye_centers(&self, resolution: usize) -> [(f64, f64); 2] {
        let r = resolution as f64;
        let row = (self.eye_row + self.face_offset.0) * r;
        let mid = (0.5 + self.face_offset.1) * r;
        [
            (row, mid - self.eye_half_gap * r),
            (row, mid + self.eye_half_gap * r),
        ]
    }
}

/// Nuisance values for a single render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceValues {
    pub illumination: f64,
    pub distractor: bool,
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for NuisanceValues {
    fn default() -> Self {
        NuisanceValues {
            illumination: 1.0,
            distractor: false,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageSample {
    pub image: Image,
    pub label: GazeLabel,
    pub eye_centers: [(f64, f64); 2],
    pub identity_seed: u64,
    pub nuisance: NuisanceValues,
}

/// Iris displacement `(drow, dcol)` in pixels for a gaze, or a domain error
/// when the iris would leave the sclera.
pub fn iris_offset(label: GazeLabel, resolution: usize) -> Result<(f64, f64)> {
    label.validate()?;
    let sclera = SCLERA_RADIUS * resolution as f64;
    let play = sclera * (1.0 - IRIS_RATIO);
    let travel = IRIS_TRAVEL * play;
    // image-plane components of the gaze vector: rows grow downward, so
    // looking up (positive pitch) moves the iris to smaller rows
    let drow = -travel * label.pitch.sin();
    let dcol = -travel * label.pitch.cos() * label.yaw.sin();
    if label.pitch.cos() * label.yaw.cos() <= 0.0 || (drow * drow + dcol * dcol).sqrt() > play {
        return Err(Error::domain(format!(
            "gaze ({:.3}, {:.3}) moves the iris outside the eye",
            label.pitch, label.yaw
        )));
    }
    Ok((drow, dcol))
}

/// Antialiased disk coverage at distance `d` from the centre of a disk of radius `r`.
fn coverage(d: f64, r: f64) -> f64 {
    (r - d + 0.5).clamp(0.0, 1.0)
}

pub fn render_sample(
    identity_seed: u64,
    label: GazeLabel,
    nuisance: NuisanceValues,
    resolution: usize,
) -> Result<ImageSample> {
    if resolution < 8 {
        return Err(Error::domain(format!("resolution {resolution} too small to render")));
    }
    if !(nuisance.illumination > 0.0 && nuisance.illumination.is_finite()) {
        return Err(Error::domain("illumination must be positive"));
    }
    if !(nuisance.noise_sigma >= 0.0) {
        return Err(Error::domain("noise_sigma must be non-negative"));
    }
    let (drow, dcol) = iris_offset(label, resolution)?;
    let id = Identity::from_seed(identity_seed);
    let r = resolution as f64;
    let eyes = id.eye_centers(resolution);
    let sclera_r = SCLERA_RADIUS * r;
    let iris_r = sclera_r * IRIS_RATIO;
    let face_c = ((0.52 + id.face_offset.0) * r, (0.5 + id.face_offset.1) * r);
    let face_radii = (0.44 * r * id.face_scale, 0.36 * r * id.face_scale);

    let hw = resolution * resolution;
    let mut data = vec![0.0; 3 * hw];
    for row in 0..resolution {
        for col in 0..resolution {
            let (y, x) = (row as f64, col as f64);
            let mut px = BACKGROUND;
            if nuisance.distractor {
                // fixed bar along the lower-left border, outside the face
                let in_bar = y >= 0.82 * r && x < 0.22 * r;
                if in_bar {
                    px = DISTRACTOR;
                }
            }
            let (ey, ex) = ((y - face_c.0) / face_radii.0, (x - face_c.1) / face_radii.1);
            let rho = (ey * ey + ex * ex).sqrt();
            // edge width about one pixel in normalised radius
            let face_cov = ((1.0 - rho) * face_radii.1 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - face_cov) + id.skin[c] * face_cov;
            }
            for &(cy, cx) in &eyes {
                let d_sclera = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt();
                let s_cov = coverage(d_sclera, sclera_r);
                if s_cov <= 0.0 {
                    continue;
                }
                let d_iris = ((y - cy - drow).powi(2) + (x - cx - dcol).powi(2)).sqrt();
                let i_cov = coverage(d_iris, iris_r).min(s_cov);
                for c in 0..3 {
                    let eye = SCLERA[c] * (1.0 - i_cov) + id.iris[c] * i_cov;
                    px[c] = px[c] * (1.0 - s_cov) + eye * s_cov;
                }
            }
            for c in 0..3 {
                data[c * hw + row * resolution + col] = px[c] * nuisance.illumination;
            }
        }
    }
    if nuisance.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(nuisance.noise_seed);
        let normal = Normal::new(0.0, nuisance.noise_sigma).expect("finite sigma");
        for v in data.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(ImageSample {
        image: Image::new(3, resolution, resolution, data)?,
        label,
        eye_centers: eyes,
        identity_seed,
        nuisance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    /// Illumination gains are drawn uniformly from this range.
    pub illumination: (f64, f64),
    pub identity_pool: Vec<u64>,
    /// When set, half of the samples (at random) carry the distractor bar.
    pub distractor: bool,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub nuisance: NuisanceSpec,
    pub pitch_range: (f64, f64),
    pub yaw_range: (f64, f64),
    pub resolution: usize,
    pub sample_count: usize,
    pub seed: u64,
}

pub const BENCHMARK_GAZE_RANGE: (f64, f64) = (-0.4, 0.4);

impl DomainSpec {
    /// Brightly lit source domain of the synthetic benchmark.
    pub fn source(sample_count: usize, seed: u64) -> Self {
        DomainSpec {
            nuisance: NuisanceSpec {
                illumination: (0.65, 1.0),
                identity_pool: (0..40).collect(),
                distractor: true,
                noise_sigma: 0.02,
            },
            pitch_range: BENCHMARK_GAZE_RANGE,
            yaw_range: BENCHMARK_GAZE_RANGE,
            resolution: 64,
            sample_count,
            seed,
        }
    }

    /// Dark target domain with unseen identities; gaze range matches the source.
    pub fn target(sample_count: usize, seed: u64) -> Self {
        DomainSpec {
            nuisance: NuisanceSpec {
                illumination: (0.2, 0.45),
                identity_pool: (1000..1010).collect(),
                distractor: true,
                noise_sigma: 0.02,
            },
            ..Self::source(sample_count, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.nuisance.illumination;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::domain("illumination range must be positive and ordered"));
        }
        if self.nuisance.identity_pool.is_empty() {
            return Err(Error::domain("identity pool is empty"));
        }
        for (lo, hi) in [self.pitch_range, self.yaw_range] {
            if hi < lo {
                return Err(Error::domain("gaze range must be ordered"));
            }
        }
        GazeLabel::new(self.pitch_range.0, self.yaw_range.0)?;
        GazeLabel::new(self.pitch_range.1, self.yaw_range.1)?;
        Ok(())
    }

    /// Draws the label and nuisances of sample `index`; depends only on
    /// `(seed, index)`, so samples can be produced in any order.
    pub fn draw(&self, index: usize) -> (u64, GazeLabel, NuisanceValues) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        };
        let label = GazeLabel {
            pitch: uniform(&mut rng, self.pitch_range),
            yaw: uniform(&mut rng, self.yaw_range),
        };
        let pool = &self.nuisance.identity_pool;
        let identity = pool[rng.gen_range(0..pool.len())];
        let nuisance = NuisanceValues {
            illumination: uniform(&mut rng, self.nuisance.illumination),
            distractor: self.nuisance.distractor && rng.gen_bool(0.5),
            noise_sigma: self.nuisance.noise_sigma,
            noise_seed: rng.gen(),
        };
        (identity, label, nuisance)
    }

    pub fn render(&self, index: usize) -> Result<ImageSample> {
        let (identity, label, nuisance) = self.draw(index);
        render_sample(identity, label, nuisance, self.resolution)
    }
}

pub fn record_for(sample: &ImageSample, image_path: String) -> ManifestRecord {
    ManifestRecord {
        image: image_path,
        pitch: sample.label.pitch,
        yaw: sample.label.yaw,
        eye_center_left: Some(sample.eye_centers[0]),
        eye_center_right: Some(sample.eye_centers[1]),
        illumination: Some(sample.nuisance.illumination),
        identity_seed: Some(sample.identity_seed),
        distractor: Some(sample.nuisance.distractor),
        mean_intensity: Some(sample.image.mean()),
    }
}

/// Sample `index` of `spec` exactly as it reads back from an 8-bit PNG,
/// with its manifest record pointing at `images/NNNNNN.png`.
pub fn quantized_sample(spec: &DomainSpec, index: usize) -> Result<Sample> {
    let sample = spec.render(index)?;
    let image = Image::from_rgb8(spec.resolution, spec.resolution, &sample.image.to_rgb8())?;
    let mut record = record_for(&sample, format!("images/{index:06}.png"));
    record.mean_intensity = Some(image.mean());
    Ok(Sample {
        label: sample.label,
        eye_centers: Some(sample.eye_centers),
        record,
        image,
    })
}

/// All samples of `spec` in memory, identical to what [`generate_domain`]
/// writes and [`Manifest::load_all`] reads back.
pub fn domain_samples(spec: &DomainSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.sample_count).map(|i| quantized_sample(spec, i)).collect()
}

/// Renders every sample of `spec` into `out_dir/images/` and writes
/// `out_dir/manifest.jsonl` and `out_dir/domain.json`.
pub fn generate_domain(spec: &DomainSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(spec.sample_count);
    for i in 0..spec.sample_count {
        let sample = quantized_sample(spec, i)?;
        write_image(&out_dir.join(&sample.record.image), &sample.image)?;
        records.push(sample.record);
    }
    let manifest = Manifest::new(out_dir, records);
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    let spec_json = serde_json::to_string_pretty(spec).expect("spec serializes");
    std::fs::write(out_dir.join("domain.json"), spec_json + "\n").map_err(|e| Error::io(out_dir, e))?;
    Ok(manifest)
}
