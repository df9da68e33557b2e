use serde::{Deserialize, Serialize};

use crate::dataset::TextureClass;
use crate::error::{Error, Result};
use crate::geometry::{ContactPatch, RigidTransform};
use crate::image::ImprintImage;

/// Planner output: fingertip pose (object → fingertip frame) and score `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspCandidate {
    pub pose: RigidTransform,
    pub score: f64,
}

/// Sensor grid and fingertip window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensor {
    pub rows: usize,
    pub cols: usize,
    pub window_w: f64,
    pub window_h: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            window_w: 20.0,
            window_h: 20.0,
        }
    }
}

/// One frame of a grasp sequence. `feedback_u` is the measured aperture,
/// equal to the command in the quasi-static plant.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspRecord {
    pub object_id: String,
    pub object_index: usize,
    pub grasp_index: usize,
    pub frame_index: usize,
    pub patch: ContactPatch,
    pub command_u: f64,
    pub feedback_u: f64,
    pub imprint_current: ImprintImage,
    pub imprint_optimal: ImprintImage,
}

impl GraspRecord {
    pub fn validate(&self, index: usize, sensor: &Sensor, aperture_max: f64) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord { index, reason };
        for (name, img) in [("imprint_current", &self.imprint_current), ("imprint_optimal", &self.imprint_optimal)] {
            if img.dims() != (sensor.rows, sensor.cols) {
                return Err(bad(format!("{name} is {:?}, grid is {}x{}", img.dims(), sensor.rows, sensor.cols)));
            }
            if !img.in_unit_range() {
                return Err(bad(format!("{name} has values outside [0, 1]")));
            }
        }
        if self.patch.grid() != (sensor.rows, sensor.cols) {
            return Err(bad("depth map does not match the sensor grid".into()));
        }
        for (name, u) in [("command_u", self.command_u), ("feedback_u", self.feedback_u)] {
            if !(0.0..=aperture_max).contains(&u) {
                return Err(bad(format!("{name} = {u} outside [0, {aperture_max}]")));
            }
        }
        self.patch.validate().map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectEntry {
    pub id: String,
    pub mass_kg: f64,
    pub texture: TextureClass,
    pub friction_mu: f64,
}

/// Contents of `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub sensor: Sensor,
    pub aperture_max: f64,
    pub record_count: usize,
    pub frames_per_grasp: usize,
    pub objects: Vec<ObjectEntry>,
    /// Byte offset of every record frame inside `records.bin`.
    pub offsets: Vec<u64>,
}

impl DatasetManifest {
    pub fn object(&self, index: usize) -> Result<&ObjectEntry> {
        self.objects
            .get(index)
            .ok_or_else(|| Error::Format(format!("record references unknown object {index}")))
    }

    pub fn max_mass(&self) -> f64 {
        self.objects.iter().map(|o| o.mass_kg).fold(0.0, f64::max)
    }
}
