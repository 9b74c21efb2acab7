//! Line-delimited dataset manifests.
//!
//! Each line is one JSON record:
//!
//! ```text
//! {"image":"images/000000.png","pitch":0.1,"yaw":-0.2,
//!  "eye_center_left":[26.9,21.8],"eye_center_right":[26.9,42.2],
//!  "illumination":0.8,"identity_seed":3,"distractor":false}
//! ```
//!
//! Image paths are relative to the manifest's directory. Nuisance fields are
//! optional so externally rectified datasets can use the same schema.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GazeLabel;
use crate::pixels::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub pitch: f64,
    pub yaw: f64,
    /// `(row, col)` in pixels.
    pub eye_center_left: Option<(f64, f64)>,
    pub eye_center_right: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illumination: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distractor: Option<bool>,
    /// Mean pixel intensity of the stored image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_intensity: Option<f64>,
}

impl ManifestRecord {
    pub fn label(&self) -> GazeLabel {
        GazeLabel {
            pitch: self.pitch,
            yaw: self.yaw,
        }
    }

    pub fn eye_centers(&self) -> Option<[(f64, f64); 2]> {
        Some([self.eye_center_left?, self.eye_center_right?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// A decoded record.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Image,
    pub label: GazeLabel,
    pub eye_centers: Option<[(f64, f64); 2]>,
    pub record: ManifestRecord,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Manifest {
            root: root.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Reads and validates a manifest; every malformed record is reported.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut problems = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestRecord>(&line) {
                Ok(rec) => {
                    if let Err(e) = validate_record(&rec) {
                        problems.push(format!("line {}: {e}", i + 1));
                    }
                    records.push(rec);
                }
                Err(e) => problems.push(format!("line {}: {e}", i + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                problems,
            });
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Manifest { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for rec in &self.records {
            let line = serde_json::to_string(rec).expect("manifest records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn image_path(&self, rec: &ManifestRecord) -> PathBuf {
        self.root.join(&rec.image)
    }

    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let rec = &self.records[index];
        let image = read_image(&self.image_path(rec))?;
        Ok(Sample {
            image,
            label: rec.label(),
            eye_centers: rec.eye_centers(),
            record: rec.clone(),
        })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }
}

fn validate_record(rec: &ManifestRecord) -> Result<()> {
    if rec.image.trim().is_empty() {
        return Err(Error::domain("empty image path"));
    }
    rec.label().validate()?;
    for (name, eye) in [("left", rec.eye_center_left), ("right", rec.eye_center_right)] {
        if let Some((r, c)) = eye {
            if !(r.is_finite() && c.is_finite() && r >= 0.0 && c >= 0.0) {
                return Err(Error::domain(format!("invalid {name} eye centre ({r}, {c})")));
            }
        }
    }
    if let Some(l) = rec.illumination {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::domain(format!("illumination must be positive, got {l}")));
        }
    }
    Ok(())
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_rgb8(h as usize, w as usize, img.as_raw())
}

/// Stores an image as a lossless 8-bit PNG.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer(
        path,
        &image.to_rgb8(),
        image.width as u32,
        image.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
