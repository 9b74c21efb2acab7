//! Gaze direction representations and the angular-error metric.
//!
//! Convention: normalized camera space, camera looking down `+z` toward the
//! subject, so a subject looking straight into the camera has gaze `(0, 0, -1)`.
//! Positive pitch looks up (`-y`), positive yaw looks toward `-x`:
//!
//! ```text
//! x = -cos(pitch) * sin(yaw)
//! y = -sin(pitch)
//! z = -cos(pitch) * cos(yaw)
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaze direction as `(pitch, yaw)` in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GazeLabel {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeLabel {
    /// Checked constructor: pitch in `[-pi/2, pi/2]`, yaw in `[-pi, pi]`.
    pub fn new(pitch: f64, yaw: f64) -> Result<Self> {
        let label = GazeLabel { pitch, yaw };
        label.validate()?;
        Ok(label)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.pitch.is_finite() || !self.yaw.is_finite() {
            return Err(Error::domain(format!("non-finite gaze label {self:?}")));
        }
        if self.pitch.abs() > FRAC_PI_2 {
            return Err(Error::domain(format!(
                "pitch {} outside [-pi/2, pi/2]",
                self.pitch
            )));
        }
        if self.yaw.abs() > PI {
            return Err(Error::domain(format!("yaw {} outside [-pi, pi]", self.yaw)));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Result<GazeVector> {
        pitchyaw_to_vector(*self)
    }
}

/// A 3D gaze direction. Constructed through [`pitchyaw_to_vector`] it has unit
/// norm; [`angular_error`] accepts any non-zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        GazeVector { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    fn checked_norm(&self) -> Result<f64> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::domain(format!("degenerate gaze vector {self:?}")));
        }
        Ok(n)
    }
}

pub fn pitchyaw_to_vector(label: GazeLabel) -> Result<GazeVector> {
    label.validate()?;
    let (sp, cp) = label.pitch.sin_cos();
    let (sy, cy) = label.yaw.sin_cos();
    Ok(GazeVector {
        x: -cp * sy,
        y: -sp,
        z: -cp * cy,
    })
}

pub fn vector_to_pitchyaw(v: GazeVector) -> Result<GazeLabel> {
    let n = v.checked_norm()?;
    let (x, y, z) = (v.x / n, v.y / n, v.z / n);
    // atan2 on the horizontal magnitude stays accurate near the poles where asin does not.
    let pitch = (-y).atan2((x * x + z * z).sqrt());
    // yaw is undefined at the poles; report 0 there
    let yaw = if x == 0.0 && z == 0.0 { 0.0 } else { (-x).atan2(-z) };
    Ok(GazeLabel { pitch, yaw })
}

/// Angle between two gaze directions in degrees, in `[0, 180]`.
pub fn angular_error(a: GazeVector, b: GazeVector) -> Result<f64> {
    let na = a.checked_norm()?;
    let nb = b.checked_norm()?;
    let cos = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Angular error between two labels, in degrees.
pub fn label_error(pred: GazeLabel, truth: GazeLabel) -> Result<f64> {
    angular_error(pitchyaw_to_vector(pred)?, pitchyaw_to_vector(truth)?)
}
