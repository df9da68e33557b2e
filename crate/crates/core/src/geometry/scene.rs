//! Plain-text scene files for `rank-poses`.
//!
//! ```text
//! # comment
//! window <w_mm> <h_mm>
//! p <x> <y> <z>                     (one line per object point, mm)
//! c <r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz> <score>
//! ```
//!
//! Poses map object coordinates into the fingertip frame.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::GraspCandidate;
use crate::error::{Error, Result};
use crate::geometry::{
    estimate_normals_curvature, extract_contact_patch, patch_metrics, CandidateInput, Point3, RigidTransform,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub window_w: f64,
    pub window_h: f64,
    pub points: Vec<Point3>,
    pub candidates: Vec<GraspCandidate>,
}

impl Scene {
    pub fn parse(text: &str) -> Result<Scene> {
        let mut window = None;
        let mut points = Vec::new();
        let mut candidates = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let kind = fields.next().unwrap();
            let nums: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("scene line {}: {e}", lineno + 1)))?;
            let want = |n: usize| -> Result<()> {
                if nums.len() != n {
                    return Err(Error::Format(format!(
                        "scene line {}: `{kind}` expects {n} numbers, got {}",
                        lineno + 1,
                        nums.len()
                    )));
                }
                Ok(())
            };
            match kind {
                "window" => {
                    want(2)?;
                    window = Some((nums[0], nums[1]));
                }
                "p" => {
                    want(3)?;
                    points.push([nums[0], nums[1], nums[2]]);
                }
                "c" => {
                    want(13)?;
                    let pose = RigidTransform::from_row_major(&nums[..12])?;
                    let score = nums[12];
                    if !(0.0..=1.0).contains(&score) {
                        return Err(Error::Format(format!("scene line {}: score {score} outside [0, 1]", lineno + 1)));
                    }
                    candidates.push(GraspCandidate { pose, score });
                }
                other => return Err(Error::Format(format!("scene line {}: unknown record `{other}`", lineno + 1))),
            }
        }
        let (window_w, window_h) = window.ok_or_else(|| Error::Format("scene has no `window` line".into()))?;
        Ok(Scene {
            window_w,
            window_h,
            points,
            candidates,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# phytac scene\n");
        writeln!(s, "window {} {}", self.window_w, self.window_h).unwrap();
        for p in &self.points {
            writeln!(s, "p {} {} {}", p[0], p[1], p[2]).unwrap();
        }
        for c in &self.candidates {
            let v = c.pose.to_row_major();
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(s, "c {} {}", joined.join(" "), c.score).unwrap();
        }
        s
    }
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::parse(&text)
}

pub fn write_scene(path: &Path, scene: &Scene) -> Result<()> {
    std::fs::write(path, scene.to_text()).map_err(|e| Error::io(path, e))
}

/// Patch metrics of every candidate that yields a usable contact patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInputs {
    pub inputs: Vec<CandidateInput>,
    /// Position in the scene of each entry of `inputs`.
    pub source: Vec<usize>,
    /// Candidates dropped and why.
    pub skipped: Vec<(usize, String)>,
}

pub fn evaluate_scene(scene: &Scene, grid: (usize, usize), contact_depth: f64, neighbors: usize) -> Result<SceneInputs> {
    let mut out = SceneInputs {
        inputs: Vec::new(),
        source: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, c) in scene.candidates.iter().enumerate() {
        let metrics = extract_contact_patch(&scene.points, &c.pose, scene.window_w, scene.window_h, grid, contact_depth)
            .and_then(|patch| {
                let surface = estimate_normals_curvature(&patch, neighbors)?;
                patch_metrics(&patch, &surface)
            });
        match metrics {
            Ok(raw) => {
                out.inputs.push(CandidateInput {
                    candidate: c.clone(),
                    raw,
                });
                out.source.push(i);
            }
            Err(e @ (Error::InsufficientContact { .. } | Error::InvalidArgument(_))) => out.skipped.push((i, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
