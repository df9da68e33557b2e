//! Latent-space LQR grasp servo.
//!
//! The state is the scaled latent error `e = (z_c − z_g) / s`. Linear
//! dynamics `e' = A e + B Δu + d` are identified by recursive least squares,
//! the gain comes from the discrete algebraic Riccati equation on `(A, B)`
//! (the offset `d` is left to feedback), and a sliding-window threshold on
//! `‖e‖₂` declares the hold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::codec::CodecParams;
use crate::error::{Error, Result};
use crate::numerics::{matmul, solve_linear, spectral_radius, Matrix, Rng};
use crate::plant::{Plant, PlantState};

pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoConfig {
    pub q_weight: f64,
    pub r_weight: f64,
    /// RLS forgetting factor used online.
    pub forgetting: f64,
    /// Initial RLS covariance `δ I`.
    pub rls_init_cov: f64,
    /// Frames between Riccati re-solves.
    pub resynth_every: usize,
    /// Per-frame actuator limit on `|Δu|` (mm).
    pub max_step_mm: f64,
    pub frame_budget: usize,
    pub delta_in: f64,
    pub window_frames: usize,
    /// Episodes start this far (mm) outside first contact.
    pub start_margin_mm: f64,
    /// Frames held after the stop to check for slip.
    pub post_hold_frames: usize,
    pub online_identification: bool,
    /// Standard deviation of the random initial `B` entries.
    pub b_init_scale: f64,
}

impl Default for ServoConfig {
    fn default() -> Self {
        ServoConfig {
            q_weight: 1.0,
            r_weight: 1.0,
            forgetting: 0.98,
            rls_init_cov: 1e4,
            resynth_every: 5,
            max_step_mm: 0.3,
            frame_budget: 150,
            delta_in: 0.15,
            window_frames: 10,
            start_margin_mm: 1.0,
            post_hold_frames: 5,
            online_identification: true,
            b_init_scale: 1e-3,
        }
    }
}

impl ServoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("control.{m}")));
        if !(self.q_weight > 0.0 && self.r_weight > 0.0) {
            return bad("q_weight and r_weight must be positive");
        }
        if !(self.forgetting > 0.0 && self.forgetting <= 1.0) {
            return bad("forgetting must be in (0, 1]");
        }
        if !(self.rls_init_cov > 0.0 && self.rls_init_cov.is_finite()) {
            return bad("rls_init_cov must be positive");
        }
        if self.resynth_every == 0 || self.window_frames == 0 {
            return bad("resynth_every and window_frames must be at least 1");
        }
        if !(self.max_step_mm > 0.0 && self.delta_in > 0.0 && self.start_margin_mm >= 0.0 && self.b_init_scale >= 0.0) {
            return bad("max_step_mm and delta_in must be positive, start_margin_mm and b_init_scale non-negative");
        }
        Ok(())
    }
}

/// Per-dimension latent spread used to normalize the error.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleVector {
    values: Vec<f64>,
}

impl ScaleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= SCALE_FLOOR)) {
            return Err(Error::InvalidArgument(format!("scale entries must be finite and >= {SCALE_FLOOR}")));
        }
        Ok(ScaleVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Population standard deviation per dimension, floored at [`SCALE_FLOOR`].
pub fn fit_scale(latents: &[Vec<f64>]) -> Result<ScaleVector> {
    if latents.len() < 2 {
        return Err(Error::InvalidArgument(format!("fit_scale needs at least 2 latents, got {}", latents.len())));
    }
    let m = latents[0].len();
    if m == 0 || latents.iter().any(|z| z.len() != m) {
        return Err(Error::dims("fit_scale latent", m, latents.iter().map(Vec::len).find(|&l| l != m).unwrap_or(0)));
    }
    let n = latents.len() as f64;
    let values = (0..m)
        .map(|j| {
            let mean = latents.iter().map(|z| z[j]).sum::<f64>() / n;
            let var = latents.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n;
            var.sqrt().max(SCALE_FLOOR)
        })
        .collect();
    Ok(ScaleVector { values })
}

/// `e[i] = (z_c[i] − z_g[i]) / s[i]`.
pub fn latent_error(z_c: &[f64], z_g: &[f64], scale: &ScaleVector) -> Result<Vec<f64>> {
    if z_c.len() != z_g.len() || z_c.len() != scale.len() {
        return Err(Error::dims(
            "latent_error",
            scale.len(),
            if z_c.len() != scale.len() { z_c.len() } else { z_g.len() },
        ));
    }
    Ok(z_c.iter().zip(z_g).zip(&scale.values).map(|((c, g), s)| (c - g) / s).collect())
}

pub fn error_norm(e: &[f64]) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// RLS estimate of `e' = A e + B Δu + d`, stored row-wise as `Θ = [A B d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsEstimate {
    m: usize,
    theta: Matrix,
    covariance: Matrix,
    init_cov: f64,
    pub forgetting: f64,
    pub samples: usize,
    /// Number of covariance resets after loss of positive definiteness.
    pub resets: usize,
}

impl DynamicsEstimate {
    /// `A = 0.9 I`, `B ~ N(0, b_scale²)`, `d = 0`, covariance `init_cov · I`.
    pub fn new(m: usize, forgetting: f64, init_cov: f64, b_scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut theta = Matrix::zeros(m, m + 2);
        for i in 0..m {
            theta.row_mut(i)[i] = 0.9;
            theta.row_mut(i)[m] = b_scale * rng.normal();
        }
        Self::from_theta(theta, forgetting, init_cov)
    }

    /// Estimate starting from a given `Θ = [A B d]` (`m × (m + 2)`).
    pub fn from_theta(theta: Matrix, forgetting: f64, init_cov: f64) -> Result<Self> {
        let m = theta.rows();
        if m == 0 || theta.cols() != m + 2 {
            return Err(Error::dims("dynamics parameters", format!("m x (m+2) with m={m}"), format!("{}x{}", m, theta.cols())));
        }
        if !(forgetting > 0.0 && forgetting <= 1.0 && init_cov > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "forgetting {forgetting} must be in (0, 1] and covariance {init_cov} positive"
            )));
        }
        Ok(DynamicsEstimate {
            m,
            theta,
            covariance: Matrix::identity(m + 2).scale(init_cov),
            init_cov,
            forgetting,
            samples: 0,
            resets: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn a(&self) -> Matrix {
        let m = self.m;
        let data = (0..m).flat_map(|i| self.theta.row(i)[..m].to_vec()).collect();
        Matrix::from_vec(m, m, data).expect("sized")
    }

    pub fn b(&self) -> Matrix {
        Matrix::column(&(0..self.m).map(|i| self.theta.row(i)[self.m]).collect::<Vec<_>>())
    }

    pub fn d(&self) -> Matrix {
        Matrix::column(&(0..self.m).map(|i| self.theta.row(i)[self.m + 1]).collect::<Vec<_>>())
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Restarts the covariance at `init_cov · I`, keeping `Θ`.
    pub fn reset_covariance(&mut self) {
        self.covariance = Matrix::identity(self.m + 2).scale(self.init_cov);
        self.resets += 1;
    }

    /// One RLS update with regressor `[e_prev; Δu; 1]`. Returns `true` when
    /// the covariance lost positive definiteness and was reset.
    pub fn rls_update(&mut self, e_prev: &[f64], du_prev: f64, e_next: &[f64]) -> Result<bool> {
        let m = self.m;
        if e_prev.len() != m || e_next.len() != m {
            return Err(Error::dims("rls_update", m, if e_prev.len() != m { e_prev.len() } else { e_next.len() }));
        }
        if !(du_prev.is_finite() && e_prev.iter().chain(e_next).all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("rls_update inputs must be finite".into()));
        }
        let n = m + 2;
        let mut phi = e_prev.to_vec();
        phi.push(du_prev);
        phi.push(1.0);
        let p = &self.covariance;
        let p_phi: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p[(i, j)] * phi[j]).sum()).collect();
        let denom = self.forgetting + phi.iter().zip(&p_phi).map(|(a, b)| a * b).sum::<f64>();
        let gain: Vec<f64> = p_phi.iter().map(|v| v / denom).collect();
        for i in 0..m {
            let row = self.theta.row_mut(i);
            let pred: f64 = row.iter().zip(&phi).map(|(a, b)| a * b).sum();
            let resid = e_next[i] - pred;
            for (t, g) in row.iter_mut().zip(&gain) {
                *t += g * resid;
            }
        }
        let mut next = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                next.row_mut(i)[j] = (p[(i, j)] - gain[i] * p_phi[j]) / self.forgetting;
            }
        }
        self.covariance = next.symmetrized();
        self.samples += 1;
        let healthy = self.covariance.is_finite() && (0..n).all(|i| self.covariance[(i, i)] > 0.0);
        if !healthy {
            self.reset_covariance();
            return Ok(true);
        }
        Ok(false)
    }
}

/// Riccati solution and feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrGain {
    pub p: Matrix,
    /// `1 × m` for the scalar aperture input.
    pub k: Matrix,
    pub iterations: usize,
    pub closed_loop_radius: f64,
}

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 200;

/// One Riccati map `Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` and the gain.
fn riccati_map(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    let at = a.transpose();
    let pa = matmul(p, a)?;
    let pb = matmul(p, b)?;
    let s = r.add(&matmul(&b.transpose(), &pb)?)?;
    let k = solve_linear(&s, &matmul(&pb.transpose(), a)?)?;
    let next = q.add(&matmul(&at, &pa)?)?.sub(&matmul(&matmul(&at, &pb)?, &k)?)?;
    Ok((next.symmetrized(), k))
}

fn gain_for(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let pb = matmul(p, b)?;
    let s = r.add(&matmul(&b.transpose(), &pb)?)?;
    solve_linear(&s, &matmul(&pb.transpose(), a)?)
}

/// `X = Σₖ (Aᵀ)ᵏ C Aᵏ` for `ρ(A) < 1` by squaring: the solution of
/// `X − AᵀXA = C`.
fn solve_stein(a: &Matrix, c: &Matrix) -> Result<Matrix> {
    let mut x = c.clone();
    let mut ak = a.clone();
    for _ in 0..60 {
        let step = matmul(&matmul(&ak.transpose(), &x)?, &ak)?;
        x = x.add(&step)?;
        ak = matmul(&ak, &ak)?;
        if step.norm_inf() <= f64::EPSILON * x.norm_inf() || ak.norm_inf() <= f64::EPSILON {
            break;
        }
    }
    Ok(x.symmetrized())
}

/// Up to three Newton corrections `X − A_clᵀ X A_cl = Ric(P) − P`, kept
/// while the residual shrinks.
fn newton_polish(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, mut p: Matrix) -> Result<Matrix> {
    let mut residual = riccati_residual(a, b, q, r, &p)?;
    for _ in 0..3 {
        let (next, k) = riccati_map(a, b, q, r, &p)?;
        let closed = a.sub(&matmul(b, &k)?)?;
        if !(spectral_radius(&closed)? < 1.0) {
            break;
        }
        let candidate = p.add(&solve_stein(&closed, &next.sub(&p)?)?)?.symmetrized();
        let next_residual = riccati_residual(a, b, q, r, &candidate)?;
        if !(next_residual < residual) {
            break;
        }
        p = candidate;
        residual = next_residual;
    }
    Ok(p)
}

/// Structure-preserving doubling from `(A, B R⁻¹ Bᵀ, Q)` until
/// `‖ΔP‖∞ ≤ 1e-12 · max(1, ‖P‖∞)`, followed by a Riccati-map step and
/// Newton refinement.
pub fn solve_dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrGain> {
    let m = a.rows();
    if a.cols() != m || b.rows() != m || q.shape() != (m, m) || r.shape() != (b.cols(), b.cols()) {
        return Err(Error::dims(
            "solve_dare",
            format!("A {m}x{m}, B {m}xk, Q {m}x{m}, R kxk"),
            format!("A {:?}, B {:?}, Q {:?}, R {:?}", a.shape(), b.shape(), q.shape(), r.shape()),
        ));
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Unstabilizable("non-finite model".into()));
    }
    let eye = Matrix::identity(m);
    let r_inv_bt = solve_linear(r, &b.transpose())?;
    let mut ak = a.clone();
    let mut g = matmul(b, &r_inv_bt)?.symmetrized();
    let mut h = q.clone();
    for it in 1..=DARE_MAX_ITER {
        let w = eye.add(&matmul(&g, &h)?)?;
        let w_a = solve_linear(&w, &ak)?;
        let w_g = solve_linear(&w, &g)?;
        let akt = ak.transpose();
        let g_next = g.add(&matmul(&matmul(&ak, &w_g)?, &akt)?)?.symmetrized();
        let h_next = h.add(&matmul(&matmul(&akt, &h)?, &w_a)?)?.symmetrized();
        let a_next = matmul(&ak, &w_a)?;
        if !(h_next.is_finite() && g_next.is_finite() && a_next.is_finite()) {
            return Err(Error::Unstabilizable(format!("doubling iterate diverged at iteration {it}")));
        }
        let delta = h_next.sub(&h)?.norm_inf();
        h = h_next;
        g = g_next;
        ak = a_next;
        if delta <= DARE_TOL * h.norm_inf().max(1.0) {
            let (p, _) = riccati_map(a, b, q, r, &h)?;
            let p = newton_polish(a, b, q, r, p)?;
            let k = gain_for(a, b, r, &p)?;
            let closed = a.sub(&matmul(b, &k)?)?;
            let radius = spectral_radius(&closed)?;
            if radius >= 1.0 {
                return Err(Error::Unstabilizable(format!("closed-loop spectral radius {radius:.6} >= 1")));
            }
            return Ok(LqrGain {
                p,
                k,
                iterations: it,
                closed_loop_radius: radius,
            });
        }
    }
    Err(Error::Unstabilizable(format!("Riccati doubling did not converge in {DARE_MAX_ITER} iterations")))
}

/// `‖P − (Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA)‖∞`.
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let (next, _) = riccati_map(a, b, q, r, p)?;
    Ok(next.sub(p)?.norm_inf())
}

/// `Δu = −K e`, clamped to `±limit`. The flag reports clamping.
pub fn control_step(gain: &LqrGain, e: &[f64], limit: f64) -> Result<(f64, bool)> {
    if gain.k.cols() != e.len() {
        return Err(Error::dims("control_step", gain.k.cols(), e.len()));
    }
    let raw = -gain.k.row(0).iter().zip(e).map(|(k, v)| k * v).sum::<f64>();
    if raw.abs() > limit {
        Ok((limit.copysign(raw), true))
    } else {
        Ok((raw, false))
    }
}

/// Sliding window over the last `window_frames` error norms.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldMonitor {
    pub delta_in: f64,
    pub window_frames: usize,
    recent: VecDeque<f64>,
}

impl HoldMonitor {
    pub fn new(delta_in: f64, window_frames: usize) -> Result<Self> {
        if !(delta_in > 0.0) || window_frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "hold threshold {delta_in} must be positive and window {window_frames} at least 1"
            )));
        }
        Ok(HoldMonitor {
            delta_in,
            window_frames,
            recent: VecDeque::with_capacity(window_frames),
        })
    }

    /// Pushes `d_c`; holds once the window is full, every entry is within
    /// the threshold, and the safety conditions are met.
    pub fn update(&mut self, d_c: f64, safety_ok: bool) -> bool {
        if self.recent.len() == self.window_frames {
            self.recent.pop_front();
        }
        self.recent.push_back(d_c);
        self.recent.len() == self.window_frames && self.recent.iter().all(|&d| d <= self.delta_in) && safety_ok
    }
}

/// One latent transition observed in recorded data.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub e_prev: Vec<f64>,
    pub du: f64,
    pub e_next: Vec<f64>,
}

/// Offline identification over recorded transitions (no forgetting), starting
/// from the default initial model.
pub fn identify_offline(transitions: &[Transition], m: usize, config: &ServoConfig, rng: &mut Rng) -> Result<DynamicsEstimate> {
    let mut est = DynamicsEstimate::new(m, 1.0, config.rls_init_cov, config.b_init_scale, rng)?;
    for t in transitions {
        est.rls_update(&t.e_prev, t.du, &t.e_next)?;
    }
    est.forgetting = config.forgetting;
    Ok(est)
}

fn synthesize(est: &DynamicsEstimate, config: &ServoConfig) -> Result<LqrGain> {
    let m = est.dim();
    let q = Matrix::identity(m).scale(config.q_weight);
    let r = Matrix::from_rows(&[&[config.r_weight]]);
    solve_dare(&est.a(), &est.b(), &q, &r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServoFrame {
    pub frame: usize,
    pub aperture: f64,
    pub force: f64,
    pub d_c: f64,
    pub hold: bool,
    pub slipping: bool,
    pub delta_u: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServoTrace {
    pub frames: Vec<ServoFrame>,
    pub hold_frame: Option<usize>,
    /// Frames after the hold with the aperture locked.
    pub post_hold: Vec<ServoFrame>,
    pub failed_safety: bool,
    pub resyntheses: usize,
    pub gain_fallbacks: usize,
    pub rls_resets: usize,
    pub final_force: f64,
    pub final_slipping: bool,
}

impl ServoTrace {
    pub fn timed_out(&self) -> bool {
        self.hold_frame.is_none() && !self.failed_safety
    }

    pub fn slipped_after_hold(&self) -> bool {
        self.hold_frame.is_some() && self.post_hold.iter().any(|f| f.slipping)
    }
}

fn frame_of(f: usize, s: &PlantState, d_c: f64, hold: bool) -> ServoFrame {
    ServoFrame {
        frame: f,
        aperture: s.aperture_u,
        force: s.normal_force,
        d_c,
        hold,
        slipping: s.slipping,
        delta_u: 0.0,
        clamped: s.clamped,
    }
}

/// Closed-loop episode against `plant` toward the goal latent `z_goal`.
#[allow(clippy::too_many_arguments)]
pub fn run_servo(
    plant: &Plant,
    codec: &CodecParams,
    z_goal: &[f64],
    scale: &ScaleVector,
    warm_start: Option<&DynamicsEstimate>,
    config: &ServoConfig,
    start_aperture: f64,
    rng: &mut Rng,
) -> Result<ServoTrace> {
    config.validate()?;
    let m = codec.latent_dim();
    if z_goal.len() != m || scale.len() != m {
        return Err(Error::dims("run_servo goal", m, if z_goal.len() != m { z_goal.len() } else { scale.len() }));
    }
    let mut est = match warm_start {
        Some(w) if w.dim() == m => w.clone(),
        Some(w) => return Err(Error::dims("run_servo warm start", m, w.dim())),
        None => DynamicsEstimate::new(m, config.forgetting, config.rls_init_cov, config.b_init_scale, &mut rng.fork(1))?,
    };
    let mut gain_fallbacks = 0;
    let mut gain = match synthesize(&est, config) {
        Ok(g) => g,
        Err(_) => {
            // Conservative stable model with the current input direction.
            gain_fallbacks += 1;
            let mut theta = Matrix::zeros(m, m + 2);
            for i in 0..m {
                theta.row_mut(i)[i] = 0.9;
                theta.row_mut(i)[m] = est.b().as_slice()[i];
            }
            synthesize(&DynamicsEstimate::from_theta(theta, 1.0, 1.0)?, config)?
        }
    };
    let mut noise = rng.fork(2);
    let mut monitor = HoldMonitor::new(config.delta_in, config.window_frames)?;
    let mut trace = ServoTrace {
        frames: Vec::new(),
        hold_frame: None,
        post_hold: Vec::new(),
        failed_safety: false,
        resyntheses: 0,
        gain_fallbacks,
        rls_resets: 0,
        final_force: 0.0,
        final_slipping: true,
    };
    let mut state = match plant.state_at(start_aperture.clamp(0.0, plant.config.aperture_max), &mut noise) {
        Ok(s) => s,
        Err(Error::ForceLimit { .. }) => {
            trace.failed_safety = true;
            return Ok(trace);
        }
        Err(e) => return Err(e),
    };
    trace.final_force = state.normal_force;
    trace.final_slipping = state.slipping;
    let mut prev: Option<(Vec<f64>, f64)> = None;
    for f in 0..config.frame_budget {
        let z = codec.encode_mean(&state.imprint)?;
        let e = latent_error(&z, z_goal, scale)?;
        let d_c = error_norm(&e);
        if let (Some((e_prev, du_prev)), true) = (prev.take(), config.online_identification) {
            if est.rls_update(&e_prev, du_prev, &e)? {
                trace.rls_resets += 1;
            }
        }
        if f > 0 && f % config.resynth_every == 0 {
            trace.resyntheses += 1;
            match synthesize(&est, config) {
                Ok(g) => gain = g,
                Err(_) => trace.gain_fallbacks += 1,
            }
        }
        let safety_ok = !state.clamped && state.normal_force <= plant.config.force_max;
        let hold = monitor.update(d_c, safety_ok);
        let mut frame = frame_of(f, &state, d_c, hold);
        if hold {
            trace.hold_frame = Some(f);
            trace.frames.push(frame);
            break;
        }
        let (du, _) = control_step(&gain, &e, config.max_step_mm)?;
        frame.delta_u = du;
        trace.frames.push(frame);
        match plant.step(&state, du, &mut noise) {
            Ok(next) => state = next,
            Err(Error::ForceLimit { .. }) => {
                trace.failed_safety = true;
                break;
            }
            Err(e) => return Err(e),
        }
        trace.final_force = state.normal_force;
        trace.final_slipping = state.slipping;
        prev = Some((e, du));
    }
    if let Some(h) = trace.hold_frame {
        for k in 0..config.post_hold_frames {
            state = plant.step(&state, 0.0, &mut noise)?;
            trace.post_hold.push(frame_of(h + 1 + k, &state, f64::NAN, true));
        }
    }
    trace.final_force = state.normal_force;
    trace.final_slipping = state.slipping;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_examples() {
        let same = vec![vec![0.3, -1.0]; 5];
        assert_eq!(fit_scale(&same).unwrap().values(), &[SCALE_FLOOR, SCALE_FLOOR]);
        let s = fit_scale(&[vec![-1.0], vec![1.0]]).unwrap();
        assert_eq!(s.values(), &[1.0]);
        let a = fit_scale(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![-2.0, 0.5]]).unwrap();
        let b = fit_scale(&[vec![-2.0, 0.5], vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(a, b);
        assert!(fit_scale(&[]).is_err());
        assert!(fit_scale(&[vec![1.0]]).is_err());
    }

    #[test]
    fn latent_error_examples() {
        let ones = ScaleVector::new(vec![1.0; 3]).unwrap();
        assert_eq!(latent_error(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &ones).unwrap(), vec![0.0; 3]);
        assert_eq!(latent_error(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &ones).unwrap(), vec![1.0, 2.0, 2.0]);
        let twos = ScaleVector::new(vec![2.0; 3]).unwrap();
        assert_eq!(latent_error(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &twos).unwrap(), vec![0.5, 1.0, 1.0]);
        assert!(latent_error(&[1.0], &[1.0, 2.0], &ones).is_err());
        assert!(ScaleVector::new(vec![0.0]).is_err());
    }

    #[test]
    fn intercept_only_update_moves_d() {
        let mut rng = Rng::new(1);
        let mut est = DynamicsEstimate::new(3, 1.0, 100.0, 0.1, &mut rng).unwrap();
        let (a0, b0) = (est.a(), est.b());
        est.rls_update(&[0.0; 3], 0.0, &[1.0, -1.0, 0.5]).unwrap();
        assert_eq!(est.a(), a0);
        assert_eq!(est.b(), b0);
        assert!(est.d().as_slice().iter().all(|&v| v != 0.0));
    }

    #[test]
    fn rls_residual_decreases_on_repeated_sample() {
        let mut rng = Rng::new(2);
        let mut est = DynamicsEstimate::new(2, 1.0, 10.0, 0.1, &mut rng).unwrap();
        let (e, du, next) = ([0.4, -0.2], 0.3, [0.1, 0.7]);
        let resid = |est: &DynamicsEstimate| {
            let a = est.a();
            let (b, d) = (est.b(), est.d());
            (0..2)
                .map(|i| {
                    let pred = a.row(i)[0] * e[0] + a.row(i)[1] * e[1] + b.as_slice()[i] * du + d.as_slice()[i];
                    (next[i] - pred).abs()
                })
                .fold(0.0, f64::max)
        };
        let first = resid(&est);
        let mut last = first;
        for _ in 0..20 {
            est.rls_update(&e, du, &next).unwrap();
            let r = resid(&est);
            assert!(r <= last + 1e-15);
            last = r;
        }
        assert!(last < 0.01 * first);
    }

    #[test]
    fn scalar_dare_golden_ratio() {
        let one = Matrix::from_rows(&[&[1.0]]);
        let g = solve_dare(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((g.p[(0, 0)] - phi).abs() < 1e-9);
        assert!((g.k[(0, 0)] - 1.0 / phi).abs() < 1e-9);
    }

    #[test]
    fn no_input_gives_lyapunov_solution() {
        let a = Matrix::from_rows(&[&[0.5, 0.1], &[0.0, 0.3]]);
        let b = Matrix::zeros(2, 1);
        let q = Matrix::identity(2);
        let r = Matrix::from_rows(&[&[1.0]]);
        let g = solve_dare(&a, &b, &q, &r).unwrap();
        assert!(g.k.max_abs() == 0.0);
        let lyap = q.add(&matmul(&matmul(&a.transpose(), &g.p).unwrap(), &a).unwrap()).unwrap();
        assert!(lyap.sub(&g.p).unwrap().norm_inf() < 1e-9);
    }

    #[test]
    fn uncontrollable_unstable_mode_is_rejected() {
        let a = Matrix::from_rows(&[&[1.2, 0.0], &[0.0, 0.5]]);
        let b = Matrix::column(&[0.0, 1.0]);
        let r = Matrix::from_rows(&[&[1.0]]);
        assert!(matches!(solve_dare(&a, &b, &Matrix::identity(2), &r), Err(Error::Unstabilizable(_))));
    }

    #[test]
    fn control_step_contract() {
        let g = LqrGain {
            p: Matrix::identity(2),
            k: Matrix::from_rows(&[&[0.5, -1.0]]),
            iterations: 1,
            closed_loop_radius: 0.5,
        };
        assert_eq!(control_step(&g, &[0.0, 0.0], 1.0).unwrap(), (0.0, false));
        let (a, _) = control_step(&g, &[0.1, 0.2], 10.0).unwrap();
        let (b, _) = control_step(&g, &[0.2, 0.4], 10.0).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert_eq!(control_step(&g, &[10.0, 0.0], 0.3).unwrap(), (-0.3, true));
    }

    #[test]
    fn hold_monitor_examples() {
        let mut mon = HoldMonitor::new(0.15, 10).unwrap();
        for i in 0..9 {
            assert!(!mon.update(0.1, true), "frame {i}");
        }
        assert!(mon.update(0.1, true));
        let mut mon = HoldMonitor::new(0.15, 10).unwrap();
        for i in 0..10 {
            let held = mon.update(if i == 4 { 0.16 } else { 0.1 }, true);
            assert!(!held);
        }
        let mut mon = HoldMonitor::new(0.15, 3).unwrap();
        assert!(!mon.update(0.0, true) && !mon.update(0.0, true) && !mon.update(0.0, false));
        assert!(HoldMonitor::new(0.0, 3).is_err());
    }
}
