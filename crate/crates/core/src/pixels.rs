use crate::error::{Error, Result};

/// Planar (channel-major) image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::domain(format!(
                "image buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "shape mismatch: {}x{}x{} vs {}x{}x{}",
                self.channels, self.height, self.width, other.channels, other.height, other.width
            )))
        }
    }

    /// Interleaved 8-bit RGB (or gray for one channel), rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let hw = self.plane_len();
        let mut out = Vec::with_capacity(hw * 3);
        for p in 0..hw {
            for c in 0..3 {
                let src = if self.channels == 1 { 0 } else { c };
                let v = self.data[src * hw + p];
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        let hw = height * width;
        if rgb.len() != hw * 3 {
            return Err(Error::domain("rgb buffer size mismatch"));
        }
        let mut data = vec![0.0; hw * 3];
        for p in 0..hw {
            for c in 0..3 {
                data[c * hw + p] = rgb[p * 3 + c] as f64 / 255.0;
            }
        }
        Ok(Image {
            channels: 3,
            height,
            width,
            data,
        })
    }
}
