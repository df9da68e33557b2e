use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::image::ImprintImage;

/// Fewer surviving points than this is reported as insufficient contact.
pub const MIN_CONTACT_POINTS: usize = 10;

/// Surface height `z` (fingertip frame, mm) rasterized over the sensor grid.
/// Row `r` spans `y`, column `c` spans `x`, both from `-extent/2` upward.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Object surface points in the fingertip frame cropped to the sensor
/// window, with their depth raster.
///
/// `center_z` is the fingertip-frame height of the grasp center: the midpoint
/// of the object's extent along the closing axis. The gel surface of a jaw
/// opened to aperture `u` sits at `center_z + u / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPatch {
    pub points: Vec<Point3>,
    pub window_w: f64,
    pub window_h: f64,
    pub center_z: f64,
    pub depth_map: DepthMap,
}

impl ContactPatch {
    pub fn grid(&self) -> (usize, usize) {
        (self.depth_map.rows, self.depth_map.cols)
    }

    pub fn cell_area(&self) -> f64 {
        (self.window_w / self.depth_map.cols as f64) * (self.window_h / self.depth_map.rows as f64)
    }

    /// Aperture at which the gel first touches the surface.
    pub fn contact_aperture(&self) -> f64 {
        2.0 * (self.depth_map.max() - self.center_z)
    }

    /// Depth raster as an image in `[0, 1]`: 1 at the highest cell, falling
    /// linearly to 0 at `range` mm below it.
    pub fn depth_image(&self, range: f64) -> ImprintImage {
        let top = self.depth_map.max();
        let data = self
            .depth_map
            .data
            .iter()
            .map(|&z| (1.0 - (top - z) / range).clamp(0.0, 1.0))
            .collect();
        ImprintImage::new(self.depth_map.rows, self.depth_map.cols, data).expect("grid-sized raster")
    }

    pub fn validate(&self) -> Result<()> {
        let (hw, hh) = (self.window_w / 2.0, self.window_h / 2.0);
        if let Some(p) = self.points.iter().find(|p| p[0].abs() > hw || p[1].abs() > hh) {
            return Err(Error::InvalidArgument(format!("patch point {p:?} outside window")));
        }
        if self.depth_map.data.len() != self.depth_map.rows * self.depth_map.cols {
            return Err(Error::dims("ContactPatch", self.depth_map.rows * self.depth_map.cols, self.depth_map.data.len()));
        }
        if !self.depth_map.data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite depth".into()));
        }
        Ok(())
    }
}

/// `{ p = T p_c : |x| ≤ w/2, |y| ≤ h/2 }` with its depth raster.
pub fn extract_patch(
    object_points: &[Point3],
    pose: &RigidTransform,
    w: f64,
    h: f64,
    grid: (usize, usize),
) -> Result<ContactPatch> {
    extract_contact_patch(object_points, pose, w, h, grid, f64::INFINITY)
}

/// Like [`extract_patch`] but additionally drops window points lying more
/// than `contact_depth` mm below the highest one, so surfaces facing away
/// from the sensor do not enter the patch.
pub fn extract_contact_patch(
    object_points: &[Point3],
    pose: &RigidTransform,
    w: f64,
    h: f64,
    grid: (usize, usize),
    contact_depth: f64,
) -> Result<ContactPatch> {
    pose.validate()?;
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidArgument(format!("window must be positive, got {w} x {h}")));
    }
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::InvalidArgument("empty sensor grid".into()));
    }
    let (hw, hh) = (w / 2.0, h / 2.0);
    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    let mut points = Vec::new();
    for &pc in object_points {
        let p = pose.apply(pc);
        z_lo = z_lo.min(p[2]);
        z_hi = z_hi.max(p[2]);
        if p[0].abs() <= hw && p[1].abs() <= hh {
            points.push(p);
        }
    }
    if contact_depth.is_finite() && !points.is_empty() {
        let top = points.iter().map(|p| p[2]).fold(f64::NEG_INFINITY, f64::max);
        points.retain(|p| p[2] >= top - contact_depth);
    }
    if points.len() < MIN_CONTACT_POINTS {
        return Err(Error::InsufficientContact {
            points: points.len(),
            required: MIN_CONTACT_POINTS,
        });
    }
    let depth_map = rasterize(&points, w, h, grid);
    Ok(ContactPatch {
        points,
        window_w: w,
        window_h: h,
        center_z: 0.5 * (z_lo + z_hi),
        depth_map,
    })
}

/// Highest point per cell, then empty cells filled by the average of their
/// filled 8-neighbours, sweep by sweep, until none remain.
fn rasterize(points: &[Point3], w: f64, h: f64, (rows, cols): (usize, usize)) -> DepthMap {
    let mut cells: Vec<Option<f64>> = vec![None; rows * cols];
    for p in points {
        let c = (((p[0] + w / 2.0) / w * cols as f64) as usize).min(cols - 1);
        let r = (((p[1] + h / 2.0) / h * rows as f64) as usize).min(rows - 1);
        let slot = &mut cells[r * cols + c];
        *slot = Some(slot.map_or(p[2], |z| z.max(p[2])));
    }
    while cells.iter().any(Option::is_none) {
        let prev = cells.clone();
        for r in 0..rows {
            for c in 0..cols {
                if prev[r * cols + c].is_some() {
                    continue;
                }
                let (mut sum, mut n) = (0.0, 0usize);
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                        if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                            continue;
                        }
                        if let Some(z) = prev[rr as usize * cols + cc as usize] {
                            sum += z;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    cells[r * cols + c] = Some(sum / n as f64);
                }
            }
        }
    }
    DepthMap {
        rows,
        cols,
        data: cells.into_iter().map(|z| z.unwrap()).collect(),
    }
}
