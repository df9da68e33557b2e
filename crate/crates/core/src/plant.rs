//! Quasi-static linear-elastic gel plant.
//!
//! A jaw opened to aperture `u` places the gel surface at
//! `z_s(u) = center_z + u/2` in the fingertip frame, so closing the jaw lowers
//! the gel into the object. Per-cell penetration is
//! `p = max(0, depth(x, y) − z_s(u))` and the normal force is
//! `k · Σ p · cell_area`. Both jaws see the same patch; the object slips when
//! the two-finger friction `2·μ·F` cannot carry its weight.

use serde::{Deserialize, Serialize};

use crate::dataset::TextureClass;
use crate::error::{Error, Result};
use crate::geometry::ContactPatch;
use crate::image::ImprintImage;
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Gel stiffness per texture class (smooth, fine, coarse, ridged), N/mm³.
    pub stiffness_k: [f64; 4],
    /// Image intensity per mm of penetration.
    pub imprint_gain: f64,
    pub baseline_intensity: f64,
    /// Peak texture modulation per class, intensity units.
    pub texture_amplitude: [f64; 4],
    /// Penetration at which texture modulation saturates, mm.
    pub texture_saturation: f64,
    pub gravity_g: f64,
    pub safety_s: f64,
    pub aperture_max: f64,
    pub force_max: f64,
    pub sensor_noise_sigma: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            stiffness_k: [0.04, 0.035, 0.03, 0.025],
            imprint_gain: 1.0,
            baseline_intensity: 0.1,
            texture_amplitude: [0.0, 0.05, 0.08, 0.1],
            texture_saturation: 0.3,
            gravity_g: 9.81,
            safety_s: 1.05,
            aperture_max: 120.0,
            force_max: 60.0,
            sensor_noise_sigma: 0.002,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("plant: {m}")));
        if self.stiffness_k.iter().any(|&k| !(k > 0.0)) {
            return bad("stiffness_k must be positive".into());
        }
        if !(0.0..1.0).contains(&self.baseline_intensity) {
            return bad("baseline_intensity must be in [0, 1)".into());
        }
        if !(self.safety_s >= 1.0) {
            return bad("safety_s must be at least 1".into());
        }
        if !(self.aperture_max > 0.0 && self.force_max > 0.0 && self.gravity_g > 0.0) {
            return bad("aperture_max, force_max and gravity_g must be positive".into());
        }
        if !(self.imprint_gain > 0.0 && self.texture_saturation > 0.0) || self.sensor_noise_sigma < 0.0 {
            return bad("imprint_gain, texture_saturation must be positive and noise non-negative".into());
        }
        if self.texture_amplitude.iter().any(|&a| a < 0.0) {
            return bad("texture_amplitude must be non-negative".into());
        }
        Ok(())
    }

    pub fn stiffness(&self, texture: TextureClass) -> f64 {
        self.stiffness_k[texture.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub texture: TextureClass,
    pub friction_mu: f64,
}

fn check_aperture(u: f64, config: &PlantConfig) -> Result<()> {
    if !(0.0..=config.aperture_max).contains(&u) {
        return Err(Error::InvalidArgument(format!("aperture {u} outside [0, {}]", config.aperture_max)));
    }
    Ok(())
}

/// Per-cell penetration depth at aperture `u`, mm.
pub fn penetration(patch: &ContactPatch, aperture_u: f64) -> Vec<f64> {
    let z_surface = patch.center_z + 0.5 * aperture_u;
    patch.depth_map.data.iter().map(|&z| (z - z_surface).max(0.0)).collect()
}

/// Force without the safety limit.
pub fn raw_contact_force(patch: &ContactPatch, aperture_u: f64, config: &PlantConfig, material: &Material) -> f64 {
    let total: f64 = penetration(patch, aperture_u).iter().sum();
    config.stiffness(material.texture) * total * patch.cell_area()
}

pub fn contact_force(patch: &ContactPatch, aperture_u: f64, config: &PlantConfig, material: &Material) -> Result<f64> {
    check_aperture(aperture_u, config)?;
    let force = raw_contact_force(patch, aperture_u, config, material);
    if force > config.force_max {
        return Err(Error::ForceLimit {
            force,
            limit: config.force_max,
        });
    }
    Ok(force)
}

fn texture_pattern(texture: TextureClass, r: usize, c: usize) -> f64 {
    use std::f64::consts::TAU;
    let (r, c) = (r as f64, c as f64);
    match texture {
        TextureClass::Smooth => 0.0,
        TextureClass::FineGrain => 0.5 + 0.5 * (TAU * c / 3.0).sin() * (TAU * r / 3.0).sin(),
        TextureClass::CoarseGrain => 0.5 + 0.5 * (TAU * c / 8.0).sin() * (TAU * r / 8.0).sin(),
        TextureClass::Ridged => 0.5 + 0.5 * (TAU * (c + r) / 6.0).sin(),
    }
}

/// Pressure-proxy image. Sensor noise is drawn from `rng` only when
/// `sensor_noise_sigma > 0`.
pub fn render_imprint(
    patch: &ContactPatch,
    aperture_u: f64,
    config: &PlantConfig,
    material: &Material,
    rng: &mut Rng,
) -> ImprintImage {
    render_with_noise(patch, aperture_u, config, material, config.sensor_noise_sigma, rng)
}

pub(crate) fn render_with_noise(
    patch: &ContactPatch,
    aperture_u: f64,
    config: &PlantConfig,
    material: &Material,
    sigma: f64,
    rng: &mut Rng,
) -> ImprintImage {
    let (rows, cols) = patch.grid();
    let pen = penetration(patch, aperture_u);
    let amp = config.texture_amplitude[material.texture.index()];
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let p = pen[r * cols + c];
            let texture = amp * texture_pattern(material.texture, r, c) * (p / config.texture_saturation).tanh();
            let mut v = (config.baseline_intensity + config.imprint_gain * p + texture).clamp(0.0, 1.0);
            if sigma > 0.0 {
                v = (v + sigma * rng.normal()).clamp(0.0, 1.0);
            }
            data.push(v);
        }
    }
    ImprintImage::new(rows, cols, data).expect("grid-sized image")
}

/// Force at which the two-finger friction grip exactly carries the weight.
pub fn slip_force(mass_kg: f64, friction_mu: f64, config: &PlantConfig) -> f64 {
    mass_kg * config.gravity_g / (2.0 * friction_mu)
}

/// `F* = safety · m · g / (2 μ)`.
pub fn optimal_force(mass_kg: f64, friction_mu: f64, config: &PlantConfig) -> Result<f64> {
    if !(mass_kg >= 0.0) || !(friction_mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mass {mass_kg} must be non-negative and friction {friction_mu} positive"
        )));
    }
    let f = config.safety_s * slip_force(mass_kg, friction_mu, config);
    if f > config.force_max {
        return Err(Error::ForceLimit {
            force: f,
            limit: config.force_max,
        });
    }
    Ok(f)
}

/// Aperture whose contact force equals `F*`, by bisection to 1e-9 mm.
pub fn optimal_aperture(patch: &ContactPatch, mass_kg: f64, material: &Material, config: &PlantConfig) -> Result<f64> {
    let target = optimal_force(mass_kg, material.friction_mu, config)?;
    let mut hi = patch.contact_aperture().min(config.aperture_max);
    let mut lo = 0.0;
    let (f_lo, f_hi) = (
        raw_contact_force(patch, lo, config, material),
        raw_contact_force(patch, hi.max(0.0), config, material),
    );
    if hi <= 0.0 || f_lo < target || f_hi > target {
        return Err(Error::NotBracketed {
            target,
            low: f_hi,
            high: f_lo,
        });
    }
    for _ in 0..200 {
        if hi - lo <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if raw_contact_force(patch, mid, config, material) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub aperture_u: f64,
    pub normal_force: f64,
    pub slipping: bool,
    pub imprint: ImprintImage,
    /// Set when the last step's aperture was clamped to the travel range.
    pub clamped: bool,
}

/// Plant bound to one grasp: patch, material and object mass.
#[derive(Debug, Clone)]
pub struct Plant {
    pub patch: ContactPatch,
    pub material: Material,
    pub mass_kg: f64,
    pub config: PlantConfig,
}

impl Plant {
    pub fn new(patch: ContactPatch, material: Material, mass_kg: f64, config: PlantConfig) -> Self {
        Self {
            patch,
            material,
            mass_kg,
            config,
        }
    }

    pub fn contact_force(&self, u: f64) -> Result<f64> {
        contact_force(&self.patch, u, &self.config, &self.material)
    }

    pub fn render(&self, u: f64, rng: &mut Rng) -> ImprintImage {
        render_imprint(&self.patch, u, &self.config, &self.material, rng)
    }

    /// Noise-free rendering.
    pub fn render_clean(&self, u: f64) -> ImprintImage {
        render_with_noise(&self.patch, u, &self.config, &self.material, 0.0, &mut Rng::new(0))
    }

    pub fn optimal_force(&self) -> Result<f64> {
        optimal_force(self.mass_kg, self.material.friction_mu, &self.config)
    }

    pub fn slip_force(&self) -> f64 {
        slip_force(self.mass_kg, self.material.friction_mu, &self.config)
    }

    pub fn optimal_aperture(&self) -> Result<f64> {
        optimal_aperture(&self.patch, self.mass_kg, &self.material, &self.config)
    }

    pub fn contact_aperture(&self) -> f64 {
        self.patch.contact_aperture()
    }

    pub fn is_slipping(&self, force: f64) -> bool {
        2.0 * self.material.friction_mu * force < self.mass_kg * self.config.gravity_g
    }

    pub fn state_at(&self, u: f64, rng: &mut Rng) -> Result<PlantState> {
        let force = self.contact_force(u)?;
        Ok(PlantState {
            aperture_u: u,
            normal_force: force,
            slipping: self.is_slipping(force),
            imprint: self.render(u, rng),
            clamped: false,
        })
    }

    /// Applies an aperture increment. Out-of-range apertures are clamped and
    /// flagged; exceeding `force_max` is an error.
    pub fn step(&self, state: &PlantState, delta_u: f64, rng: &mut Rng) -> Result<PlantState> {
        let wanted = state.aperture_u + delta_u;
        let u = wanted.clamp(0.0, self.config.aperture_max);
        let mut next = self.state_at(u, rng)?;
        next.clamped = u != wanted;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{extract_patch, DepthMap, Point3, RigidTransform};

    fn flat_patch(height: f64) -> ContactPatch {
        let n = 32;
        ContactPatch {
            points: vec![[0.0, 0.0, height]; 12],
            window_w: 20.0,
            window_h: 20.0,
            center_z: -20.0,
            depth_map: DepthMap {
                rows: n,
                cols: n,
                data: vec![height; n * n],
            },
        }
    }

    fn dome_patch() -> ContactPatch {
        let mut pts: Vec<Point3> = Vec::new();
        for i in 0..60 {
            for j in 0..60 {
                let x = -10.0 + 20.0 * i as f64 / 59.0;
                let y = -10.0 + 20.0 * j as f64 / 59.0;
                pts.push([x, y, -(x * x + y * y) / 60.0]);
            }
        }
        pts.push([0.0, 0.0, -50.0]);
        extract_patch(&pts, &RigidTransform::IDENTITY, 20.0, 20.0, (32, 32)).unwrap()
    }

    const SMOOTH: Material = Material {
        texture: TextureClass::Smooth,
        friction_mu: 0.5,
    };

    #[test]
    fn open_aperture_has_no_force() {
        let p = flat_patch(0.0);
        let cfg = PlantConfig::default();
        assert_eq!(contact_force(&p, 41.0, &cfg, &SMOOTH).unwrap(), 0.0);
    }

    #[test]
    fn uniform_penetration_closed_form() {
        let p = flat_patch(0.0);
        let cfg = PlantConfig::default();
        // Gel at center_z + u/2 = -0.1 → uniform 0.1 mm over 400 mm².
        let f = contact_force(&p, 39.8, &cfg, &SMOOTH).unwrap();
        let expect = cfg.stiffness_k[0] * 0.1 * 400.0;
        assert!((f - expect).abs() <= 1e-9 * expect, "{f} vs {expect}");
    }

    #[test]
    fn force_non_decreasing_as_aperture_closes() {
        let p = dome_patch();
        let cfg = PlantConfig::default();
        let top = p.contact_aperture();
        let mut prev = 0.0;
        for k in 0..100 {
            let u = top + 0.5 - k as f64 * 0.05;
            let f = contact_force(&p, u, &cfg, &SMOOTH).unwrap();
            assert!(f >= prev);
            prev = f;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn force_limit_and_range_errors() {
        let p = flat_patch(0.0);
        let cfg = PlantConfig::default();
        assert!(matches!(contact_force(&p, 0.0, &cfg, &SMOOTH), Err(Error::ForceLimit { .. })));
        assert!(contact_force(&p, -1.0, &cfg, &SMOOTH).is_err());
        assert!(contact_force(&p, cfg.aperture_max + 1.0, &cfg, &SMOOTH).is_err());
    }

    #[test]
    fn zero_force_image_is_baseline() {
        let p = dome_patch();
        let cfg = PlantConfig {
            sensor_noise_sigma: 0.0,
            ..Default::default()
        };
        let img = render_imprint(&p, p.contact_aperture() + 1.0, &cfg, &SMOOTH, &mut Rng::new(0));
        assert!(img.pixels().iter().all(|&v| v == cfg.baseline_intensity));
    }

    #[test]
    fn deeper_cell_is_brighter() {
        let mut p = flat_patch(0.0);
        p.depth_map.data[100] = 0.2;
        let cfg = PlantConfig {
            sensor_noise_sigma: 0.0,
            ..Default::default()
        };
        let img = render_imprint(&p, 39.9, &cfg, &SMOOTH, &mut Rng::new(0));
        assert!(img.pixels()[100] > img.pixels()[101]);
    }

    #[test]
    fn renders_are_reproducible() {
        let p = dome_patch();
        let cfg = PlantConfig::default();
        let mat = Material {
            texture: TextureClass::Ridged,
            friction_mu: 1.0,
        };
        let u = p.contact_aperture() - 1.0;
        let a = render_imprint(&p, u, &cfg, &mat, &mut Rng::new(4));
        let b = render_imprint(&p, u, &cfg, &mat, &mut Rng::new(4));
        assert_eq!(a, b);
        assert!(a.in_unit_range());
    }

    #[test]
    fn optimal_force_values() {
        let cfg = PlantConfig {
            safety_s: 1.0,
            ..Default::default()
        };
        assert!((optimal_force(0.1, 0.5, &cfg).unwrap() - 0.981).abs() < 1e-12);
        let f1 = optimal_force(0.3, 0.4, &cfg).unwrap();
        let f2 = optimal_force(0.3, 0.8, &cfg).unwrap();
        assert!((f1 - 2.0 * f2).abs() < 1e-12);
        assert_eq!(optimal_force(0.0, 0.5, &cfg).unwrap(), 0.0);
        assert!(optimal_force(1000.0, 0.1, &cfg).is_err());
    }

    #[test]
    fn optimal_aperture_hits_target_force() {
        let p = dome_patch();
        let cfg = PlantConfig::default();
        let u = optimal_aperture(&p, 0.2, &SMOOTH, &cfg).unwrap();
        let f = contact_force(&p, u, &cfg, &SMOOTH).unwrap();
        let target = optimal_force(0.2, 0.5, &cfg).unwrap();
        assert!((f - target).abs() <= 1e-4);
        assert_eq!(u, optimal_aperture(&p, 0.2, &SMOOTH, &cfg).unwrap());

        let mut stiff = cfg.clone();
        stiff.stiffness_k[0] *= 2.0;
        assert!(optimal_aperture(&p, 0.2, &SMOOTH, &stiff).unwrap() > u);
    }

    #[test]
    fn step_semantics() {
        let p = dome_patch();
        let cfg = PlantConfig::default();
        let plant = Plant::new(p, SMOOTH, 0.2, cfg);
        let u_star = plant.optimal_aperture().unwrap();
        let mut rng = Rng::new(1);
        let at = plant.state_at(u_star, &mut rng).unwrap();
        assert!(!at.slipping);
        let same = plant.step(&at, 0.0, &mut rng).unwrap();
        assert_eq!(same.aperture_u, at.aperture_u);
        assert_eq!(same.normal_force, at.normal_force);
        let open = plant.step(&at, 10.0, &mut rng).unwrap();
        assert!(open.slipping && open.normal_force == 0.0);
        let clamped = plant.step(&open, 1e6, &mut rng).unwrap();
        assert!(clamped.clamped && clamped.aperture_u == plant.config.aperture_max);
    }
}
