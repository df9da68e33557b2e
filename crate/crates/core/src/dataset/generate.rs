use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::FORMAT_VERSION;
use crate::dataset::io::write_dataset;
use crate::dataset::{
    random_candidate, synthesize_candidates, synthesize_object, ClassParams, DatasetManifest, GraspCandidate,
    GraspRecord, ObjectEntry, ObjectSpec, Sensor, TextureClass,
};
use crate::error::{Error, Result};
use crate::geometry::{extract_contact_patch, ContactPatch};
use crate::image::ImprintImage;
use crate::numerics::Rng;
use crate::plant::{Material, Plant, PlantConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub objects: usize,
    pub grasps_per_object: usize,
    pub frames_per_grasp: usize,
    pub sensor: Sensor,
    /// Slab below the top of the window kept as contact surface, mm.
    pub contact_depth: f64,
    pub size_range: (f64, f64),
    pub exponent_range: (f64, f64),
    pub mass_range: (f64, f64),
    pub surface_points: usize,
    /// Friction coefficient per texture class (smooth, fine, coarse, ridged).
    pub friction_mu: [f64; 4],
    /// Surface displacement amplitude per texture class, mm.
    pub surface_texture_mm: [f64; 4],
    /// The sweep continues past the optimal aperture by this fraction of
    /// the first-contact-to-optimum travel.
    pub overshoot: f64,
    /// Random candidates tried per requested grasp before giving up.
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            objects: 8,
            grasps_per_object: 5,
            frames_per_grasp: 10,
            sensor: Sensor::default(),
            contact_depth: 5.0,
            size_range: (22.0, 35.0),
            exponent_range: (0.3, 1.0),
            mass_range: (0.1, 0.4),
            surface_points: 20_000,
            friction_mu: [0.3, 0.5, 0.8, 1.0],
            surface_texture_mm: [0.0, 0.03, 0.08, 0.15],
            overshoot: 0.5,
            max_attempts: 40,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dataset: {m}")));
        if self.grasps_per_object == 0 || self.frames_per_grasp == 0 {
            return bad("grasps_per_object and frames_per_grasp must be at least 1");
        }
        if self.sensor.rows < 8 || self.sensor.cols < 8 {
            return bad("sensor grid must be at least 8x8");
        }
        if !(self.sensor.window_w > 0.0 && self.sensor.window_h > 0.0 && self.contact_depth > 0.0) {
            return bad("window and contact_depth must be positive");
        }
        if self.friction_mu.iter().any(|&m| !(m > 0.1 && m <= 1.5)) {
            return bad("friction_mu must lie in (0.1, 1.5]");
        }
        if !(self.overshoot >= 0.0) {
            return bad("overshoot must be non-negative");
        }
        Ok(())
    }

    pub fn class_params(&self, texture: TextureClass) -> ClassParams {
        ClassParams {
            texture,
            size_range: self.size_range,
            exponent_range: self.exponent_range,
            texture_amplitude: self.surface_texture_mm[texture.index()],
            mass_range: self.mass_range,
            friction_mu: self.friction_mu[texture.index()],
            surface_points: self.surface_points,
        }
    }

    /// Texture class of the `i`-th synthesized object (classes cycle).
    pub fn texture_of(i: usize) -> TextureClass {
        TextureClass::ALL[i % TextureClass::ALL.len()]
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    /// Manifest with empty `offsets` (filled in when written).
    pub manifest: DatasetManifest,
    pub records: Vec<GraspRecord>,
}

fn quantize_patch(p: &ContactPatch) -> ContactPatch {
    let q = |v: f64| v as f32 as f64;
    ContactPatch {
        points: p.points.iter().map(|pt| pt.map(q)).collect(),
        window_w: q(p.window_w),
        window_h: q(p.window_h),
        center_z: q(p.center_z),
        depth_map: crate::geometry::DepthMap {
            rows: p.depth_map.rows,
            cols: p.depth_map.cols,
            data: p.depth_map.data.iter().map(|&v| q(v)).collect(),
        },
    }
}

/// Aperture sweep for one grasp: from first contact to past the optimum.
pub(crate) fn sweep_apertures(u_contact: f64, u_star: f64, frames: usize, overshoot: f64) -> Vec<f64> {
    let u_end = u_star - overshoot * (u_contact - u_star);
    if frames == 1 {
        return vec![u_contact];
    }
    (0..frames)
        .map(|k| u_contact - (u_contact - u_end) * k as f64 / (frames - 1) as f64)
        .collect()
}

/// Renders the frames of one grasp, or `None` if the grasp is infeasible
/// for the plant (no contact, optimum not reachable, force limit).
fn grasp_frames(
    object: &ObjectSpec,
    candidate: &GraspCandidate,
    config: &DatasetConfig,
    plant_cfg: &PlantConfig,
) -> Result<Option<(ContactPatch, Vec<(f64, ImprintImage)>, ImprintImage)>> {
    let s = &config.sensor;
    let patch = match extract_contact_patch(
        &object.points,
        &candidate.pose,
        s.window_w,
        s.window_h,
        (s.rows, s.cols),
        config.contact_depth,
    ) {
        Ok(p) => quantize_patch(&p),
        Err(Error::InsufficientContact { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let material = Material {
        texture: object.texture,
        friction_mu: object.friction_mu,
    };
    let plant = Plant::new(patch, material, object.mass_kg, plant_cfg.clone());
    let u_contact = plant.contact_aperture();
    if !(u_contact > 0.0 && u_contact <= plant_cfg.aperture_max) {
        return Ok(None);
    }
    let u_star = match plant.optimal_aperture() {
        Ok(u) => u,
        Err(Error::NotBracketed { .. } | Error::ForceLimit { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let apertures = sweep_apertures(u_contact, u_star, config.frames_per_grasp, config.overshoot);
    let mut frames = Vec::with_capacity(apertures.len());
    for u in apertures {
        let u = u as f32 as f64;
        if !(0.0..=plant_cfg.aperture_max).contains(&u) {
            return Ok(None);
        }
        match plant.contact_force(u) {
            Ok(_) => {}
            Err(Error::ForceLimit { .. }) => return Ok(None),
            Err(e) => return Err(e),
        }
        frames.push((u, plant.render_clean(u).quantized()));
    }
    let optimal = plant.render_clean(u_star).quantized();
    Ok(Some((plant.patch, frames, optimal)))
}

/// Builds every record in memory. Imprints are rendered noise-free; sensor
/// noise is applied only in closed-loop episodes.
pub fn synthesize_records(config: &DatasetConfig, plant_cfg: &PlantConfig, seed: u64) -> Result<GeneratedDataset> {
    config.validate()?;
    plant_cfg.validate()?;
    let root = Rng::new(seed);
    let mut objects = Vec::with_capacity(config.objects);
    let mut records = Vec::new();
    for o in 0..config.objects {
        let texture = DatasetConfig::texture_of(o);
        let mut object = synthesize_object(&mut root.fork(2 * o as u64), &config.class_params(texture))?;
        object.mass_kg = object.mass_kg as f32 as f64;
        let mut cand_rng = root.fork(2 * o as u64 + 1);
        let mut pending = synthesize_candidates(&object, &mut cand_rng, 1, &config.sensor, config.contact_depth)?;
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < config.grasps_per_object {
            let candidate = match pending.pop() {
                Some(c) => c,
                None => random_candidate(&object, &mut cand_rng),
            };
            attempts += 1;
            if attempts > config.max_attempts * config.grasps_per_object {
                return Err(Error::InvalidArgument(format!(
                    "object {o}: only {accepted} feasible grasps after {} attempts",
                    attempts - 1
                )));
            }
            let Some((patch, frames, optimal)) = grasp_frames(&object, &candidate, config, plant_cfg)? else {
                continue;
            };
            for (frame_index, (u, image)) in frames.into_iter().enumerate() {
                records.push(GraspRecord {
                    object_id: object.id.clone(),
                    object_index: o,
                    grasp_index: accepted,
                    frame_index,
                    patch: patch.clone(),
                    command_u: u,
                    feedback_u: u,
                    imprint_current: image,
                    imprint_optimal: optimal.clone(),
                });
            }
            accepted += 1;
        }
        objects.push(ObjectEntry {
            id: object.id.clone(),
            mass_kg: object.mass_kg,
            texture,
            friction_mu: object.friction_mu,
        });
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed,
        sensor: config.sensor,
        aperture_max: plant_cfg.aperture_max,
        record_count: records.len(),
        frames_per_grasp: config.frames_per_grasp,
        objects,
        offsets: Vec::new(),
    };
    Ok(GeneratedDataset { manifest, records })
}

/// Synthesizes the dataset and writes `manifest.toml` + `records.bin`.
pub fn generate_dataset(config: &DatasetConfig, plant_cfg: &PlantConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let generated = synthesize_records(config, plant_cfg, seed)?;
    write_dataset(out, generated.manifest, &generated.records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            objects: 2,
            grasps_per_object: 3,
            frames_per_grasp: 10,
            surface_points: 12_000,
            ..Default::default()
        }
    }

    #[test]
    fn record_count_and_fixed_goal_per_grasp() {
        let g = synthesize_records(&small(), &PlantConfig::default(), 7).unwrap();
        assert_eq!(g.records.len(), 60);
        assert_eq!(g.manifest.record_count, 60);
        for chunk in g.records.chunks(10) {
            assert!(chunk.iter().all(|r| r.imprint_optimal == chunk[0].imprint_optimal));
            assert!(chunk.iter().all(|r| r.grasp_index == chunk[0].grasp_index));
        }
    }

    #[test]
    fn sweeps_close_monotonically() {
        let g = synthesize_records(&small(), &PlantConfig::default(), 8).unwrap();
        for chunk in g.records.chunks(10) {
            for w in chunk.windows(2) {
                assert!(w[1].feedback_u <= w[0].feedback_u);
                assert!(w[1].imprint_current.mean() >= w[0].imprint_current.mean());
            }
            // First frame is first contact: a baseline image.
            assert!(chunk[0].imprint_current.pixels().iter().all(|&v| (v - 0.1).abs() < 1e-6));
        }
        let s = g.manifest.sensor;
        for (i, r) in g.records.iter().enumerate() {
            r.validate(i, &s, g.manifest.aperture_max).unwrap();
        }
    }

    #[test]
    fn sweep_spans_optimum() {
        let u = sweep_apertures(50.0, 48.0, 5, 0.5);
        assert_eq!(u, vec![50.0, 49.25, 48.5, 47.75, 47.0]);
        assert_eq!(sweep_apertures(50.0, 48.0, 1, 0.5), vec![50.0]);
    }
}
