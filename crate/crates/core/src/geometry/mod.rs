//! Contact-patch extraction and physics-inspired pose ranking.

pub(crate) mod normals;
mod patch;
mod patch_metrics;
mod rank;
mod scene;
pub(crate) mod transform;

pub use normals::{estimate_normals_curvature, SurfaceEstimate, DEFAULT_NEIGHBORS};
pub use patch::{extract_contact_patch, extract_patch, ContactPatch, DepthMap, MIN_CONTACT_POINTS};
pub use patch_metrics::{patch_metrics, plane_fit, PatchMetrics};
pub use rank::{
    combined_cost, geometric_cost, mismatch_rate, normalize_metrics, rank_candidates, CandidateInput, RankWeights,
    RankedCandidate,
};
pub use scene::{evaluate_scene, read_scene, write_scene, Scene, SceneInputs};
pub use transform::{Point3, RigidTransform};
