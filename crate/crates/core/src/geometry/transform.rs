use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Point3) -> Point3 {
    let n = norm(a);
    if n == 0.0 {
        return a;
    }
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Rigid transform `p ↦ R p + t` (object/camera frame → fingertip frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        translation: [0.0; 3],
    };

    pub fn translation(t: Point3) -> Self {
        Self {
            translation: t,
            ..Self::IDENTITY
        }
    }

    /// Rotation of `angle` radians about a unit `axis` (Rodrigues).
    pub fn axis_angle(axis: Point3, angle: f64) -> Self {
        let [x, y, z] = normalize(axis);
        let (s, c) = angle.sin_cos();
        let k = 1.0 - c;
        Self {
            rotation: [
                [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
                [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
                [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
            ],
            translation: [0.0; 3],
        }
    }

    /// Fingertip frame whose origin sits at `contact` with +z along the
    /// outward surface normal, rotated by `yaw` about that normal.
    pub fn fingertip_at(contact: Point3, outward_normal: Point3, yaw: f64) -> Self {
        let n = normalize(outward_normal);
        let helper = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let t1 = normalize(cross(helper, n));
        let t2 = cross(n, t1);
        let (s, c) = yaw.sin_cos();
        let x = [c * t1[0] + s * t2[0], c * t1[1] + s * t2[1], c * t1[2] + s * t2[2]];
        let y = cross(n, x);
        let rotation = [x, y, n];
        let rc = [dot(x, contact), dot(y, contact), dot(n, contact)];
        Self {
            rotation,
            translation: [-rc[0], -rc[1], -rc[2]],
        }
    }

    /// Parses 12 reals: the 3x4 matrix `[R | t]` in row-major order.
    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::dims("RigidTransform::from_row_major", 12, v.len()));
        }
        let t = Self {
            rotation: [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
            translation: [v[3], v[7], v[11]],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        let r = &self.rotation;
        [
            dot(r[0], p) + self.translation[0],
            dot(r[1], p) + self.translation[1],
            dot(r[2], p) + self.translation[2],
        ]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.rotation[i][k] * other.rotation[k][j]).sum();
            }
        }
        let moved = self.apply(other.translation);
        RigidTransform {
            rotation,
            translation: moved,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = &self.rotation;
        let rt = [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]];
        let t = self.translation;
        let mt = [-dot(rt[0], t), -dot(rt[1], t), -dot(rt[2], t)];
        RigidTransform {
            rotation: rt,
            translation: mt,
        }
    }

    /// Checks `‖RᵀR − I‖∞ ≤ 1e-9` and `det R = +1`.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        let det = dot(r[0], cross(r[1], r[2]));
        if worst > 1e-9 || (det - 1.0).abs() > 1e-9 || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pose rotation not orthonormal (deviation {worst:.2e}, det {det:.6})"
            )));
        }
        Ok(())
    }
}
