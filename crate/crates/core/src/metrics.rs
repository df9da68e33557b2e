//! Image-quality metrics and grasp-outcome classification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImprintImage;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
}

fn check_pair(x: &ImprintImage, y: &ImprintImage) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::dims(
            "image metric",
            format!("{}x{}", x.rows(), x.cols()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    Ok(())
}

pub fn mae(x: &ImprintImage, y: &ImprintImage) -> Result<f64> {
    check_pair(x, y)?;
    let s: f64 = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b).abs()).sum();
    Ok(s / x.pixels().len() as f64)
}

fn mse(x: &ImprintImage, y: &ImprintImage) -> Result<f64> {
    check_pair(x, y)?;
    let s: f64 = x.pixels().iter().zip(y.pixels()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / x.pixels().len() as f64)
}

pub fn rmse(x: &ImprintImage, y: &ImprintImage) -> Result<f64> {
    Ok(mse(x, y)?.sqrt())
}

/// `10 log10(peak² / MSE)`; identical images give `+∞`.
pub fn psnr(x: &ImprintImage, y: &ImprintImage, peak: f64) -> Result<f64> {
    let e = mse(x, y)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Mean SSIM over 8×8 windows at stride 4 (dynamic range 1).
pub fn ssim(x: &ImprintImage, y: &ImprintImage) -> Result<f64> {
    check_pair(x, y)?;
    let (rows, cols) = x.dims();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {rows}x{cols}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in (0..=rows - SSIM_WINDOW).step_by(SSIM_STRIDE) {
        for c0 in (0..=cols - SSIM_WINDOW).step_by(SSIM_STRIDE) {
            let (mut sx, mut sy) = (0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    sx += x.get(r, c);
                    sy += y.get(r, c);
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let (dx, dy) = (x.get(r, c) - mx, y.get(r, c) - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cov += dx * dy;
                }
            }
            let (vx, vy, cov) = (vx / n, vy / n, cov / n);
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn image_metrics(x: &ImprintImage, y: &ImprintImage) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        mae: mae(x, y)?,
        rmse: rmse(x, y)?,
        psnr_db: psnr(x, y, 1.0)?,
        ssim: ssim(x, y)?,
    })
}

/// PSNR as written to CSV: infinite values become [`PSNR_CAP_DB`].
pub fn psnr_for_report(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

/// Grasp states of an episode. Constructed only through [`classify_outcome`],
/// which enforces `fosg ⇒ stg ⇒ sug`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraspOutcome {
    pub sug: bool,
    pub stg: bool,
    pub fosg: bool,
}

/// What the classifier needs from a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub final_force: f64,
    /// Slip predicate at the final frame.
    pub final_slipping: bool,
    /// Any slip after the hold was declared (or over the post-hold check).
    pub slipped_after_hold: bool,
    pub held: bool,
    /// Analytic slip-boundary force of the grasped object.
    pub slip_force: f64,
}

/// SuG: force > 0 at the end and no slip at the final frame. StG: SuG and no
/// slip after the hold. FOSG: StG and final force in `[F*, (1 + tol) F*]`.
pub fn classify_outcome(ep: &EpisodeSummary, tol_f: f64) -> GraspOutcome {
    let sug = ep.final_force > 0.0 && !ep.final_slipping;
    let stg = sug && ep.held && !ep.slipped_after_hold;
    let fosg = stg && ep.final_force >= ep.slip_force && ep.final_force <= (1.0 + tol_f) * ep.slip_force;
    GraspOutcome { sug, stg, fosg }
}
