use crate::error::{Error, Result};
use crate::geometry::normals::covariance_eigen;
use crate::geometry::transform::{dot, norm};
use crate::geometry::{ContactPatch, Point3, SurfaceEstimate};

/// Raw contact descriptors of one patch (before normalization across a
/// candidate set).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMetrics {
    /// RMS orthogonal residual of the least-squares plane, mm.
    pub s_rough: f64,
    /// Normal consistency in `[0, 1]`.
    pub c_n: f64,
    /// Curvature dispersion (coefficient of variation); larger is less uniform.
    pub u_c: f64,
}

/// Least-squares plane through `points`: returns (centroid, unit normal,
/// RMS orthogonal residual).
pub fn plane_fit(points: &[Point3]) -> (Point3, Point3, f64) {
    let (values, vectors, mean) = covariance_eigen(points);
    (mean, vectors[0], values[0].sqrt())
}

pub fn patch_metrics(patch: &ContactPatch, surface: &SurfaceEstimate) -> Result<PatchMetrics> {
    let n = patch.points.len();
    if surface.normals.len() != n || surface.curvatures.len() != n {
        return Err(Error::dims("patch_metrics", n, surface.normals.len()));
    }
    let (_, _, s_rough) = plane_fit(&patch.points);

    let mut mean_normal = [0.0; 3];
    for nrm in &surface.normals {
        for k in 0..3 {
            mean_normal[k] += nrm[k];
        }
    }
    let len = norm(mean_normal);
    let c_n = if len > 0.0 {
        let unit = mean_normal.map(|v| v / len);
        surface.normals.iter().map(|&ni| dot(ni, unit).max(0.0)).sum::<f64>() / n as f64
    } else {
        0.0
    };

    let mean_c = surface.curvatures.iter().sum::<f64>() / n as f64;
    let u_c = if mean_c <= 1e-12 {
        0.0
    } else {
        let var = surface.curvatures.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n as f64;
        var.sqrt() / mean_c
    };

    Ok(PatchMetrics {
        s_rough,
        c_n: c_n.clamp(0.0, 1.0),
        u_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{estimate_normals_curvature, extract_patch, RigidTransform};

    fn plane(n: usize) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([-9.0 + 18.0 * i as f64 / (n - 1) as f64, -9.0 + 18.0 * j as f64 / (n - 1) as f64, 0.0]);
            }
        }
        pts
    }

    fn metrics_of(pts: &[Point3]) -> PatchMetrics {
        let patch = extract_patch(pts, &RigidTransform::IDENTITY, 20.0, 20.0, (16, 16)).unwrap();
        let est = estimate_normals_curvature(&patch, 12).unwrap();
        patch_metrics(&patch, &est).unwrap()
    }

    #[test]
    fn exact_plane_is_ideal() {
        let m = metrics_of(&plane(20));
        assert!(m.s_rough <= 1e-9);
        assert!(m.c_n >= 1.0 - 1e-9);
        assert!(m.u_c <= 1e-6);
    }

    #[test]
    fn opposing_slopes_give_cos45() {
        // Roof: z = -|x| has normals at ±45° from +z.
        let pts: Vec<Point3> = plane(30).into_iter().map(|p| [p[0], p[1], -p[0].abs()]).collect();
        let m = metrics_of(&pts);
        assert!((m.c_n - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.05, "c_n = {}", m.c_n);
    }

    #[test]
    fn single_spike_roughness() {
        let mut pts = plane(10);
        pts[44][2] = 1.0;
        let (_, _, rms) = plane_fit(&pts);
        let expect = (1.0f64 / 100.0).sqrt();
        assert!((rms / expect - 1.0).abs() <= 0.2, "rms = {rms}");
    }
}
