use crate::dataset::{ClassParams, GraspCandidate, ObjectSpec, Sensor, TextureClass};
use crate::error::{Error, Result};
use crate::geometry::transform::normalize;
use crate::geometry::{extract_contact_patch, plane_fit, Point3, RigidTransform, Scene};
use crate::numerics::Rng;

use super::object::synthesize_object;

/// Heuristic planner confidence: jaws closing along a principal axis of the
/// object are rewarded, plus a little jitter.
fn heuristic_score(normal: Point3, rng: &mut Rng) -> f64 {
    let align = normal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lo = 1.0 / 3f64.sqrt();
    (0.45 + 0.45 * (align - lo) / (1.0 - lo) + 0.1 * rng.uniform()).clamp(0.0, 1.0)
}

/// Candidate centered on whichever of the six principal-axis surface points
/// has the smallest plane-fit residual over its contact patch.
pub fn flattest_candidate(object: &ObjectSpec, sensor: &Sensor, contact_depth: f64, rng: &mut Rng) -> Result<GraspCandidate> {
    let sq = object.superquadric();
    let mut best: Option<(f64, RigidTransform, Point3)> = None;
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let mut dir = [0.0; 3];
            dir[axis] = sign;
            let contact = sq.radial_point(dir);
            let normal = sq.normal(contact);
            let pose = RigidTransform::fingertip_at(contact, normal, 0.0);
            let patch = match extract_contact_patch(
                &object.points,
                &pose,
                sensor.window_w,
                sensor.window_h,
                (sensor.rows, sensor.cols),
                contact_depth,
            ) {
                Ok(p) => p,
                Err(Error::InsufficientContact { .. }) => continue,
                Err(e) => return Err(e),
            };
            let (_, _, rough) = plane_fit(&patch.points);
            if best.as_ref().is_none_or(|(r, _, _)| rough < *r) {
                best = Some((rough, pose, normal));
            }
        }
    }
    let (_, pose, normal) = best.ok_or(Error::InsufficientContact {
        points: 0,
        required: crate::geometry::MIN_CONTACT_POINTS,
    })?;
    Ok(GraspCandidate {
        pose,
        score: heuristic_score(normal, rng),
    })
}

/// Candidate at a uniformly chosen surface sample with a random yaw.
pub fn random_candidate(object: &ObjectSpec, rng: &mut Rng) -> GraspCandidate {
    let i = rng.below(object.points.len());
    let yaw = rng.uniform_range(0.0, std::f64::consts::TAU);
    let pose = RigidTransform::fingertip_at(object.points[i], object.normals[i], yaw);
    GraspCandidate {
        pose,
        score: heuristic_score(object.normals[i], rng),
    }
}

/// `n` candidates; the first is centered on the flattest region.
pub fn synthesize_candidates(
    object: &ObjectSpec,
    rng: &mut Rng,
    n: usize,
    sensor: &Sensor,
    contact_depth: f64,
) -> Result<Vec<GraspCandidate>> {
    if n == 0 {
        return Err(Error::InvalidArgument("candidate count must be at least 1".into()));
    }
    let mut out = vec![flattest_candidate(object, sensor, contact_depth, rng)?];
    out.extend((1..n).map(|_| random_candidate(object, rng)));
    Ok(out)
}

/// Scene with one candidate on a flat face and the rest on edges or corners
/// of a box-like object.
#[derive(Debug, Clone)]
pub struct RankingScene {
    pub scene: Scene,
    pub flat_index: usize,
}

pub fn synthesize_ranking_scene(rng: &mut Rng, sensor: &Sensor, sharp_count: usize) -> Result<RankingScene> {
    let params = ClassParams {
        texture: TextureClass::Smooth,
        size_range: (25.0, 35.0),
        exponent_range: (0.2, 0.3),
        texture_amplitude: 0.0,
        mass_range: (0.2, 0.2),
        friction_mu: 0.5,
        surface_points: 20_000,
    };
    let object = synthesize_object(rng, &params)?;
    let sq = object.superquadric();
    let mut candidates = Vec::with_capacity(sharp_count + 1);

    let mut face = [0.0; 3];
    face[rng.below(3)] = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
    let contact = sq.radial_point(face);
    candidates.push(RigidTransform::fingertip_at(contact, sq.normal(contact), rng.uniform_range(0.0, 1.0)));

    for _ in 0..sharp_count {
        let mut dir = [0.0; 3];
        let corner = rng.uniform() < 0.5;
        let skip = rng.below(3);
        for (k, d) in dir.iter_mut().enumerate() {
            if corner || k != skip {
                *d = if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
            }
        }
        let contact = sq.radial_point(normalize(dir));
        let normal = sq.normal(contact);
        candidates.push(RigidTransform::fingertip_at(contact, normal, rng.uniform_range(0.0, 1.0)));
    }

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    rng.shuffle(&mut order);
    let flat_index = order.iter().position(|&i| i == 0).unwrap();
    let candidates = order
        .into_iter()
        .map(|i| GraspCandidate {
            pose: candidates[i],
            score: rng.uniform_range(0.6, 0.95),
        })
        .collect();
    Ok(RankingScene {
        scene: Scene {
            window_w: sensor.window_w,
            window_h: sensor.window_h,
            points: object.points,
            candidates,
        },
        flat_index,
    })
}
