//! Eye-centred attention maps that weight the adversarial reconstruction term.

use std::path::Path;

use crate::error::{Error, Result};

/// Variance in squared pixels of the training image.
pub const DEFAULT_SIGMA_SQ: f64 = 20.0;

/// Per-pixel weights in `[0, 1]`, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
    /// `None` for the constant all-ones map.
    pub sigma_sq: Option<f64>,
    pub eye_centers: Vec<(f64, f64)>,
}

impl AttentionMap {
    /// Pointwise maximum of unit-peak isotropic Gaussians, one per eye centre.
    pub fn build(
        height: usize,
        width: usize,
        eye_centers: &[(f64, f64)],
        sigma_sq: f64,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::domain("attention map needs a non-empty grid"));
        }
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(Error::domain(format!("sigma_sq must be positive, got {sigma_sq}")));
        }
        if eye_centers.is_empty() {
            return Err(Error::domain("attention map needs at least one eye centre"));
        }
        for &(r, c) in eye_centers {
            let inside = r >= 0.0 && c >= 0.0 && r <= (height - 1) as f64 && c <= (width - 1) as f64;
            if !inside {
                return Err(Error::domain(format!(
                    "eye centre ({r}, {c}) outside {height}x{width} image"
                )));
            }
        }
        let inv = 1.0 / (2.0 * sigma_sq);
        let mut weights = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                let nearest = eye_centers
                    .iter()
                    .map(|&(r, c)| {
                        let (dr, dc) = (row as f64 - r, col as f64 - c);
                        dr * dr + dc * dc
                    })
                    .fold(f64::INFINITY, f64::min);
                weights.push((-nearest * inv).exp());
            }
        }
        Ok(AttentionMap {
            height,
            width,
            weights,
            sigma_sq: Some(sigma_sq),
            eye_centers: eye_centers.to_vec(),
        })
    }

    /// The constant map `M = 1`, which disables local weighting.
    pub fn uniform(height: usize, width: usize) -> Self {
        AttentionMap {
            height,
            width,
            weights: vec![1.0; height * width],
            sigma_sq: None,
            eye_centers: Vec::new(),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Writes the map as an 8-bit grayscale PNG (weight 1 is white).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self
            .weights
            .iter()
            .map(|w| (w.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(
            path,
            &pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
