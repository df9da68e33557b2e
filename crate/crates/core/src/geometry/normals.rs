use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::transform::normalize;
use crate::geometry::{ContactPatch, Point3};

pub const DEFAULT_NEIGHBORS: usize = 12;

/// Per-point local surface estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceEstimate {
    pub normals: Vec<Point3>,
    /// Surface variation `λ0 / (λ0 + λ1 + λ2)` of the local covariance.
    pub curvatures: Vec<f64>,
    /// Points whose neighbourhood had zero spread (normal forced to +z).
    pub degenerate: Vec<bool>,
}

/// Eigen-decomposition of the covariance of `points`, eigenvalues ascending.
pub(crate) fn covariance_eigen(points: &[Point3]) -> ([f64; 3], [Point3; 3], Point3) {
    let n = points.len() as f64;
    let mut mean = [0.0; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = Vector3::new(p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vectors = order.map(|i| {
        let v = eig.eigenvectors.column(i);
        [v[0], v[1], v[2]]
    });
    (values, vectors, mean)
}

/// Local plane fit over each point and its `k` nearest neighbours. Normals
/// are the smallest-variance direction, oriented toward the sensor (+z).
pub fn estimate_normals_curvature(patch: &ContactPatch, k: usize) -> Result<SurfaceEstimate> {
    let pts = &patch.points;
    if k < 4 {
        return Err(Error::InvalidArgument(format!("neighbour count k = {k} must be at least 4")));
    }
    if pts.len() < k + 1 {
        return Err(Error::InvalidArgument(format!(
            "patch has {} points, need at least k + 1 = {}",
            pts.len(),
            k + 1
        )));
    }
    let mut normals = Vec::with_capacity(pts.len());
    let mut curvatures = Vec::with_capacity(pts.len());
    let mut degenerate = Vec::with_capacity(pts.len());
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(pts.len());
    let mut hood: Vec<Point3> = Vec::with_capacity(k + 1);
    for p in pts {
        dists.clear();
        dists.extend(pts.iter().enumerate().map(|(j, q)| {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            (d, j)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        dists.select_nth_unstable_by(k, cmp);
        hood.clear();
        hood.extend(dists[..=k].iter().map(|&(_, j)| pts[j]));
        let (values, vectors, mean) = covariance_eigen(&hood);
        let total = values[0] + values[1] + values[2];
        let magnitude = mean.iter().map(|v| v * v).sum::<f64>();
        if total <= 1e-24 * (1.0 + magnitude) {
            normals.push([0.0, 0.0, 1.0]);
            curvatures.push(0.0);
            degenerate.push(true);
            continue;
        }
        let mut n = normalize(vectors[0]);
        if n[2] < 0.0 {
            n = [-n[0], -n[1], -n[2]];
        }
        normals.push(n);
        curvatures.push(values[0] / total);
        degenerate.push(false);
    }
    Ok(SurfaceEstimate {
        normals,
        curvatures,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{extract_patch, RigidTransform};

    fn plane_patch() -> ContactPatch {
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                pts.push([i as f64 - 7.0, j as f64 * 0.9 - 6.3, 0.0]);
            }
        }
        extract_patch(&pts, &RigidTransform::IDENTITY, 20.0, 20.0, (16, 16)).unwrap()
    }

    #[test]
    fn plane_normals_point_up() {
        let est = estimate_normals_curvature(&plane_patch(), 12).unwrap();
        for (n, c) in est.normals.iter().zip(&est.curvatures) {
            assert!((n[2] - 1.0).abs() < 1e-12 && n[0].abs() < 1e-9 && n[1].abs() < 1e-9);
            assert!(*c <= 1e-9);
        }
    }

    #[test]
    fn sphere_cap_curvature_is_uniform() {
        // Fibonacci sampling of a sphere of radius 30; keep the cap facing +z.
        let r = 30.0;
        let n = 40_000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Point3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let rad = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                [r * rad * th.cos(), r * rad * th.sin(), r * y]
            })
            .map(|p| [p[0], p[2], p[1] - r])
            .filter(|p| p[2] > -10.0)
            .collect();
        let patch = extract_patch(&pts, &RigidTransform::IDENTITY, 16.0, 16.0, (16, 16)).unwrap();
        let est = estimate_normals_curvature(&patch, 12).unwrap();
        // The crop edge truncates neighbourhoods; judge the sphere itself.
        let inner: Vec<f64> = patch
            .points
            .iter()
            .zip(&est.curvatures)
            .filter(|(p, _)| p[0].abs() < 6.0 && p[1].abs() < 6.0)
            .map(|(_, c)| *c)
            .collect();
        assert!(inner.len() > 200);
        let m = inner.iter().sum::<f64>() / inner.len() as f64;
        let sd = (inner.iter().map(|c| (c - m).powi(2)).sum::<f64>() / inner.len() as f64).sqrt();
        assert!(m > 0.0);
        assert!(sd / m <= 0.1, "cv = {}", sd / m);
    }

    #[test]
    fn deterministic() {
        let p = plane_patch();
        assert_eq!(estimate_normals_curvature(&p, 8).unwrap(), estimate_normals_curvature(&p, 8).unwrap());
    }

    #[test]
    fn coincident_points_are_flagged() {
        let pts = vec![[1.0, 1.0, 0.0]; 20];
        let patch = extract_patch(&pts, &RigidTransform::IDENTITY, 20.0, 20.0, (4, 4)).unwrap();
        let est = estimate_normals_curvature(&patch, 5).unwrap();
        assert!(est.degenerate.iter().all(|&d| d));
        assert!(est.normals.iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn rejects_small_k_and_small_patch() {
        let p = plane_patch();
        assert!(estimate_normals_curvature(&p, 3).is_err());
        assert!(estimate_normals_curvature(&p, p.points.len()).is_err());
    }
}
