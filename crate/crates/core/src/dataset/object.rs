use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureClass {
    Smooth,
    FineGrain,
    CoarseGrain,
    Ridged,
}

impl TextureClass {
    pub const COUNT: usize = 4;
    pub const ALL: [TextureClass; Self::COUNT] = [
        TextureClass::Smooth,
        TextureClass::FineGrain,
        TextureClass::CoarseGrain,
        TextureClass::Ridged,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TextureClass::Smooth => "smooth",
            TextureClass::FineGrain => "fine_grain",
            TextureClass::CoarseGrain => "coarse_grain",
            TextureClass::Ridged => "ridged",
        }
    }

    /// Surface displacement pattern in `[-1, 1]` at an object-frame point.
    fn displacement(self, p: Point3) -> f64 {
        use std::f64::consts::TAU;
        match self {
            TextureClass::Smooth => 0.0,
            TextureClass::FineGrain => (TAU * p[0] / 1.5).sin() * (TAU * p[1] / 1.5).sin() * (TAU * p[2] / 1.5).sin(),
            TextureClass::CoarseGrain => (TAU * p[0] / 4.0).sin() * (TAU * p[1] / 4.0).sin() * (TAU * p[2] / 4.0).sin(),
            TextureClass::Ridged => (TAU * (p[0] + p[1] + p[2]) / 3.0).sin(),
        }
    }
}

impl std::fmt::Display for TextureClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of the superquadric object family for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassParams {
    pub texture: TextureClass,
    /// Semi-axis range, mm.
    pub size_range: (f64, f64),
    /// Shape exponent range; 1 is an ellipsoid, small values are box-like.
    pub exponent_range: (f64, f64),
    /// Surface displacement amplitude, mm.
    pub texture_amplitude: f64,
    pub mass_range: (f64, f64),
    pub friction_mu: f64,
    pub surface_points: usize,
}

impl ClassParams {
    pub fn sphere(radius: f64) -> Self {
        Self {
            texture: TextureClass::Smooth,
            size_range: (radius, radius),
            exponent_range: (1.0, 1.0),
            texture_amplitude: 0.0,
            mass_range: (0.2, 0.2),
            friction_mu: 0.3,
            surface_points: 20_000,
        }
    }

    pub fn box_like(half_extent: f64) -> Self {
        Self {
            exponent_range: (0.2, 0.2),
            ..Self::sphere(half_extent)
        }
    }
}

/// Point-sampled closed surface in the object frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub id: String,
    pub points: Vec<Point3>,
    /// Outward unit normals of the undisplaced surface.
    pub normals: Vec<Point3>,
    pub mass_kg: f64,
    pub texture: TextureClass,
    pub friction_mu: f64,
    pub semi_axes: [f64; 3],
    pub exponents: [f64; 2],
}

/// Superquadric `((|x/a|^(2/e2) + |y/b|^(2/e2))^(e2/e1) + |z/c|^(2/e1)) = 1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Superquadric {
    pub axes: [f64; 3],
    pub e1: f64,
    pub e2: f64,
}

impl Superquadric {
    fn inside_outside(&self, p: Point3) -> f64 {
        let [a, b, c] = self.axes;
        let g = (p[0] / a).abs().powf(2.0 / self.e2) + (p[1] / b).abs().powf(2.0 / self.e2);
        g.powf(self.e2 / self.e1) + (p[2] / c).abs().powf(2.0 / self.e1)
    }

    /// Surface point along the ray from the origin through `dir`.
    pub fn radial_point(&self, dir: Point3) -> Point3 {
        let t = self.inside_outside(dir).powf(-self.e1 / 2.0);
        [t * dir[0], t * dir[1], t * dir[2]]
    }

    /// Outward unit normal (normalized gradient of the inside-outside function).
    pub fn normal(&self, p: Point3) -> Point3 {
        let [a, b, c] = self.axes;
        let (e1, e2) = (self.e1, self.e2);
        let g = (p[0] / a).abs().powf(2.0 / e2) + (p[1] / b).abs().powf(2.0 / e2);
        let outer = if g > 0.0 { g.powf(e2 / e1 - 1.0) } else { 0.0 };
        let d = |v: f64, s: f64, e: f64| -> f64 {
            if v == 0.0 {
                0.0
            } else {
                (v / s).abs().powf(2.0 / e - 1.0) * v.signum() / s
            }
        };
        let grad = [outer * d(p[0], a, e2), outer * d(p[1], b, e2), d(p[2], c, e1)];
        let n = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
        if n == 0.0 {
            return [0.0, 0.0, 1.0];
        }
        grad.map(|v| v / n)
    }
}

/// Fibonacci-sphere directions, near-uniform on the unit sphere.
pub(crate) fn fibonacci_directions(n: usize) -> impl Iterator<Item = Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n).map(move |i| {
        let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
        let r = (1.0 - z * z).sqrt();
        let th = golden * i as f64;
        [r * th.cos(), r * th.sin(), z]
    })
}

pub fn synthesize_object(rng: &mut Rng, params: &ClassParams) -> Result<ObjectSpec> {
    let (lo, hi) = params.size_range;
    let (elo, ehi) = params.exponent_range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!("degenerate size range {:?}", params.size_range)));
    }
    if !(elo > 0.0 && ehi >= elo && ehi <= 2.0) {
        return Err(Error::InvalidArgument(format!("invalid exponent range {:?}", params.exponent_range)));
    }
    if !(params.mass_range.0 > 0.0 && params.mass_range.1 >= params.mass_range.0) {
        return Err(Error::InvalidArgument(format!("invalid mass range {:?}", params.mass_range)));
    }
    if !(params.friction_mu > 0.0) || params.surface_points == 0 {
        return Err(Error::InvalidArgument("friction and point count must be positive".into()));
    }
    let axes = [rng.uniform_range(lo, hi), rng.uniform_range(lo, hi), rng.uniform_range(lo, hi)];
    let sq = Superquadric {
        axes,
        e1: rng.uniform_range(elo, ehi),
        e2: rng.uniform_range(elo, ehi),
    };
    let mass_kg = rng.uniform_range(params.mass_range.0, params.mass_range.1);
    let phase = [rng.uniform_range(0.0, 10.0), rng.uniform_range(0.0, 10.0), rng.uniform_range(0.0, 10.0)];
    let mut points = Vec::with_capacity(params.surface_points);
    let mut normals = Vec::with_capacity(params.surface_points);
    for dir in fibonacci_directions(params.surface_points) {
        let p = sq.radial_point(dir);
        let n = sq.normal(p);
        let shifted = [p[0] + phase[0], p[1] + phase[1], p[2] + phase[2]];
        let disp = params.texture_amplitude * params.texture.displacement(shifted);
        points.push([p[0] + disp * n[0], p[1] + disp * n[1], p[2] + disp * n[2]]);
        normals.push(n);
    }
    Ok(ObjectSpec {
        id: format!("obj-{:016x}", rng.next_u64()),
        points,
        normals,
        mass_kg,
        texture: params.texture,
        friction_mu: params.friction_mu,
        semi_axes: axes,
        exponents: [sq.e1, sq.e2],
    })
}

impl ObjectSpec {
    pub(crate) fn superquadric(&self) -> Superquadric {
        Superquadric {
            axes: self.semi_axes,
            e1: self.exponents[0],
            e2: self.exponents[1],
        }
    }
}

/// Reads a flat point cloud: one `x y z` triple per line, `#` comments.
pub fn load_point_cloud_text(path: &Path) -> Result<Vec<Point3>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.len() != 3 {
            return Err(Error::Format(format!("{}:{}: expected 3 coordinates", path.display(), i + 1)));
        }
        pts.push([v[0], v[1], v[2]]);
    }
    Ok(pts)
}
