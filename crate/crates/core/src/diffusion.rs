//! Conditioned latent diffusion: variance-preserving forward noising,
//! a FiLM-conditioned dense noise predictor, and the deterministic DDIM
//! sampler that turns noise into a goal latent.
//!
//! The diffusion variable lives in a standardized latent space: codec means
//! are shifted and scaled per dimension by statistics stored in the model.
//! [`predict_noise`] takes the standardized `z_t`; conditioning latents are
//! raw codec means and are standardized internally.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::CodecParams;
use crate::container::{read_artifact, write_artifact, Decoder, Encoder};
use crate::dataset::{DatasetManifest, GraspRecord, TextureClass};
use crate::error::{Error, Result};
use crate::image::ImprintImage;
use crate::nn::{activate, activation_grad, read_dense, write_dense, Activation, Dense};
use crate::numerics::{check_gradient, Adam, AdamConfig, Matrix, Rng};

const SECTION: &[u8; 4] = b"DIFF";
pub const TIME_EMBED_DIM: usize = 16;
pub const MASS_EMBED_DIM: usize = 8;
pub const CONDITION_DIM: usize = MASS_EMBED_DIM + TextureClass::COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    /// Number of forward noising steps `T`.
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub ddim_steps: usize,
    pub hidden: usize,
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Depth span (mm) mapped onto `[0, 1]` when the patch depth map is
    /// encoded as an image.
    pub depth_range_mm: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig {
            timesteps: 200,
            beta_min: 5e-4,
            beta_max: 0.1,
            ddim_steps: 20,
            hidden: 128,
            train_steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            depth_range_mm: 5.0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("diffusion.{m}")));
        if self.timesteps < 2 {
            return bad("timesteps must be at least 2");
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return bad("betas must satisfy 0 < beta_min <= beta_max < 1");
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.timesteps {
            return bad("ddim_steps must be in 1..=timesteps");
        }
        if self.hidden == 0 || self.train_steps == 0 || self.batch_size == 0 {
            return bad("hidden, train_steps and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.depth_range_mm > 0.0 && self.depth_range_mm.is_finite()) {
            return bad("depth_range_mm must be positive");
        }
        Ok(())
    }
}

/// Cumulative signal fractions `ᾱ⁰ = 1 > ᾱ¹ > … > ᾱᵀ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("schedule needs T >= 2, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "betas must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )));
    }
    let mut alpha_bar = Vec::with_capacity(steps + 1);
    alpha_bar.push(1.0);
    let mut acc = 1.0;
    for i in 0..steps {
        let beta = beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64;
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { alpha_bar })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }
}

/// `√ᾱᵗ z0 + √(1 − ᾱᵗ) ε`. `t = 0` returns `z0`.
pub fn forward_noise(z0: &[f64], t: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if eps.len() != z0.len() {
        return Err(Error::dims("forward_noise eps", z0.len(), eps.len()));
    }
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(z0.iter().zip(eps).map(|(z, e)| sa * z + sn * e).collect())
}

/// One deterministic reverse step from `t` to `t_prev`.
pub fn ddim_step(z_t: &[f64], eps_hat: &[f64], t: usize, t_prev: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!("ddim step needs t_prev < t, got {t_prev} >= {t}")));
    }
    if eps_hat.len() != z_t.len() {
        return Err(Error::dims("ddim_step eps", z_t.len(), eps_hat.len()));
    }
    let a = schedule.alpha_bar(t);
    let ap = schedule.alpha_bar(t_prev);
    let ratio = (ap / a).sqrt();
    let (sn, snp) = ((1.0 - a).sqrt(), (1.0 - ap).sqrt());
    Ok(z_t
        .iter()
        .zip(eps_hat)
        .map(|(z, e)| ratio * (z - sn * e) + snp * e)
        .collect())
}

/// Evenly spaced decreasing timesteps `T = t₀ > t₁ > … > 0`, `steps + 1` long.
pub fn ddim_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!("ddim steps must be in 1..={total}, got {steps}")));
    }
    let mut ts: Vec<usize> = (0..=steps).rev().map(|i| (i * total + steps / 2) / steps).collect();
    ts.dedup();
    Ok(ts)
}

/// Sinusoidal features of `t / T`.
pub fn time_embedding(t: usize, total: usize) -> [f64; TIME_EMBED_DIM] {
    let s = t as f64 / total.max(1) as f64;
    let mut out = [0.0; TIME_EMBED_DIM];
    for k in 0..TIME_EMBED_DIM / 2 {
        let w = std::f64::consts::PI * (1u32 << k) as f64;
        out[2 * k] = (w * s).sin();
        out[2 * k + 1] = (w * s).cos();
    }
    out
}

/// Physical conditioning `C = [e_M, e_T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    values: Vec<f64>,
}

impl ConditionVector {
    pub fn new(mass_kg: f64, max_mass_kg: f64, texture: TextureClass) -> Result<Self> {
        if !(mass_kg >= 0.0 && mass_kg.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass must be non-negative, got {mass_kg}")));
        }
        if !(max_mass_kg > 0.0 && max_mass_kg.is_finite()) {
            return Err(Error::InvalidArgument(format!("max mass must be positive, got {max_mass_kg}")));
        }
        let x = mass_kg / max_mass_kg;
        let mut values = Vec::with_capacity(CONDITION_DIM);
        for k in 0..MASS_EMBED_DIM / 2 {
            let w = std::f64::consts::PI * (1u32 << k) as f64;
            values.push((w * x).sin());
            values.push((w * x).cos());
        }
        for class in TextureClass::ALL {
            values.push(if class == texture { 1.0 } else { 0.0 });
        }
        Ok(ConditionVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-dimension affine standardization of codec latents.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentNorm {
    fn fit(rows: &[Vec<f64>]) -> LatentNorm {
        let m = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; m];
        for r in rows {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v / n;
            }
        }
        let mut std = vec![0.0; m];
        for r in rows {
            for ((s, v), mu) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - mu).powi(2) / n;
            }
        }
        let std = std.into_iter().map(|v| v.sqrt().max(1e-6)).collect();
        LatentNorm { mean, std }
    }

    fn identity(m: usize) -> LatentNorm {
        LatentNorm {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        }
    }

    pub fn standardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn restore(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

/// One FiLM-modulated hidden layer: `silu((x W + b) ⊙ (1 + γ(C)) + β(C))`.
#[derive(Debug, Clone, PartialEq)]
struct FilmLayer {
    linear: Dense,
    scale: Dense,
    shift: Dense,
}

struct FilmCache {
    input: Matrix,
    lin: Matrix,
    gamma: Matrix,
    pre: Matrix,
    post: Matrix,
}

impl FilmLayer {
    fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        FilmLayer {
            linear: Dense::new(input, output, 2.0, rng),
            scale: Dense::zeros(CONDITION_DIM, output),
            shift: Dense::zeros(CONDITION_DIM, output),
        }
    }

    fn forward(&self, x: &Matrix, c: &Matrix) -> FilmCache {
        let lin = self.linear.forward(x);
        let gamma = self.scale.forward(c);
        let beta = self.shift.forward(c);
        let pre_data = lin
            .as_slice()
            .iter()
            .zip(gamma.as_slice())
            .zip(beta.as_slice())
            .map(|((a, g), b)| a * (1.0 + g) + b)
            .collect();
        let pre = Matrix::from_vec(lin.rows(), lin.cols(), pre_data).expect("sized");
        let post = activate(&pre, Activation::Silu);
        FilmCache {
            input: x.clone(),
            lin,
            gamma,
            pre,
            post,
        }
    }

    /// Returns gradients `[linear.w, linear.b, scale.w, scale.b, shift.w, shift.b]` and `dx`.
    fn backward(&self, cache: &FilmCache, c: &Matrix, dy: &Matrix) -> ([Matrix; 6], Matrix) {
        let dpre = activation_grad(&cache.pre, &cache.post, dy, Activation::Silu);
        let dlin = Matrix::from_vec(
            dpre.rows(),
            dpre.cols(),
            dpre.as_slice().iter().zip(cache.gamma.as_slice()).map(|(d, g)| d * (1.0 + g)).collect(),
        )
        .expect("sized");
        let dgamma = Matrix::from_vec(
            dpre.rows(),
            dpre.cols(),
            dpre.as_slice().iter().zip(cache.lin.as_slice()).map(|(d, a)| d * a).collect(),
        )
        .expect("sized");
        let (lw, lb, dx) = self.linear.backward(&cache.input, &dlin);
        let (sw, sb, _) = self.scale.backward(c, &dgamma);
        let (hw, hb, _) = self.shift.backward(c, &dpre);
        ([lw, lb, sw, sb, hw, hb], dx)
    }

    fn params(&self) -> [&Matrix; 6] {
        [
            &self.linear.w,
            &self.linear.b,
            &self.scale.w,
            &self.scale.b,
            &self.shift.w,
            &self.shift.b,
        ]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.linear.w,
            &mut self.linear.b,
            &mut self.scale.w,
            &mut self.scale.b,
            &mut self.shift.w,
            &mut self.shift.b,
        ]
    }
}

/// Noise predictor `ε_θ([z_t ‖ z_in ‖ z_cdp ‖ time ‖ C]) → ε̂` plus the
/// schedule and latent statistics it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    latent_dim: usize,
    hidden: usize,
    timesteps: usize,
    beta_min: f64,
    beta_max: f64,
    /// Mass that maps to 1 in the mass embedding.
    pub max_mass_kg: f64,
    /// Standardizes imprint latents (targets and `z_in`).
    pub imprint_norm: LatentNorm,
    /// Standardizes depth-map latents (`z_cdp`).
    pub depth_norm: LatentNorm,
    pub depth_range_mm: f64,
    layer1: FilmLayer,
    layer2: FilmLayer,
    out: Dense,
}

const BLOCK_NAMES: [&str; 14] = [
    "film1.linear.w",
    "film1.linear.b",
    "film1.scale.w",
    "film1.scale.b",
    "film1.shift.w",
    "film1.shift.b",
    "film2.linear.w",
    "film2.linear.b",
    "film2.scale.w",
    "film2.scale.b",
    "film2.shift.w",
    "film2.shift.b",
    "out.w",
    "out.b",
];

struct DenoiserCache {
    c: Matrix,
    l1: FilmCache,
    l2: FilmCache,
}

impl DenoiserParams {
    /// Random hidden layers, zero output layer, identity latent statistics.
    pub fn new(latent_dim: usize, config: &DiffusionConfig, max_mass_kg: f64, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        let input = 3 * latent_dim + TIME_EMBED_DIM + CONDITION_DIM;
        Ok(DenoiserParams {
            latent_dim,
            hidden: config.hidden,
            timesteps: config.timesteps,
            beta_min: config.beta_min,
            beta_max: config.beta_max,
            max_mass_kg,
            imprint_norm: LatentNorm::identity(latent_dim),
            depth_norm: LatentNorm::identity(latent_dim),
            depth_range_mm: config.depth_range_mm,
            layer1: FilmLayer::new(input, config.hidden, rng),
            layer2: FilmLayer::new(config.hidden, config.hidden, rng),
            out: Dense::zeros(config.hidden, latent_dim),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn schedule(&self) -> NoiseSchedule {
        make_schedule(self.timesteps, self.beta_min, self.beta_max).expect("validated at construction")
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|m| m.is_finite())
    }

    pub fn condition(&self, mass_kg: f64, texture: TextureClass) -> Result<ConditionVector> {
        ConditionVector::new(mass_kg, self.max_mass_kg, texture)
    }

    fn params(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.layer1.params().into_iter().collect();
        v.extend(self.layer2.params());
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.layer1.params_mut().into_iter().collect();
        v.extend(self.layer2.params_mut());
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }

    fn forward(&self, x: &Matrix, c: &Matrix) -> (Matrix, DenoiserCache) {
        let l1 = self.layer1.forward(x, c);
        let l2 = self.layer2.forward(&l1.post, c);
        let y = self.out.forward(&l2.post);
        (y, DenoiserCache { c: c.clone(), l1, l2 })
    }

    fn backward(&self, cache: &DenoiserCache, dy: &Matrix) -> Vec<Matrix> {
        let (ow, ob, dh2) = self.out.backward(&cache.l2.post, dy);
        let (g2, dh1) = self.layer2.backward(&cache.l2, &cache.c, &dh2);
        let (g1, _) = self.layer1.backward(&cache.l1, &cache.c, &dh1);
        let mut grads: Vec<Matrix> = g1.into_iter().collect();
        grads.extend(g2);
        grads.push(ow);
        grads.push(ob);
        grads
    }

    /// Network input row from standardized `z_t`, raw conditioning latents.
    fn input_row(&self, z_t: &[f64], z_in: &[f64], z_cdp: &[f64], t: usize, c: &ConditionVector) -> Vec<f64> {
        let mut row = Vec::with_capacity(3 * self.latent_dim + TIME_EMBED_DIM + CONDITION_DIM);
        row.extend_from_slice(z_t);
        row.extend(self.imprint_norm.standardize(z_in));
        row.extend(self.depth_norm.standardize(z_cdp));
        row.extend(time_embedding(t, self.timesteps));
        row.extend_from_slice(c.values());
        row
    }

    /// Mean squared error `‖ε − ε̂‖² / (n m)` over a batch and its gradients.
    /// Largest relative error between the analytic gradient of the noise
    /// loss and central differences on `probes` random coordinates, for a
    /// random batch of `batch` inputs.
    pub fn gradient_check(&self, batch: usize, probes: usize, rng: &mut Rng) -> Result<f64> {
        let m = self.latent_dim;
        let width = 3 * m + TIME_EMBED_DIM + CONDITION_DIM;
        let x = Matrix::from_vec(batch, width, rng.normal_vec(batch * width))?;
        let c = Matrix::from_vec(batch, CONDITION_DIM, rng.normal_vec(batch * CONDITION_DIM))?;
        let eps = Matrix::from_vec(batch, m, rng.normal_vec(batch * m))?;
        let (_, grads) = self.loss_and_grads(&x, &c, &eps);
        let params: Vec<Matrix> = self.params().into_iter().cloned().collect();
        Ok(check_gradient(
            |q: &[Matrix]| {
                let mut r = self.clone();
                for (dst, src) in r.params_mut().into_iter().zip(q) {
                    *dst = src.clone();
                }
                r.loss_and_grads(&x, &c, &eps).0
            },
            &params,
            &grads,
            probes,
            rng,
        ))
    }

    fn loss_and_grads(&self, x: &Matrix, c: &Matrix, eps: &Matrix) -> (f64, Vec<Matrix>) {
        let (y, cache) = self.forward(x, c);
        let scale = 1.0 / y.len() as f64;
        let loss = y.as_slice().iter().zip(eps.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * scale;
        let dy = Matrix::from_vec(
            y.rows(),
            y.cols(),
            y.as_slice().iter().zip(eps.as_slice()).map(|(a, b)| 2.0 * (a - b) * scale).collect(),
        )
        .expect("sized");
        (loss, self.backward(&cache, &dy))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u32(self.latent_dim as u32)
            .u32(self.hidden as u32)
            .u32(self.timesteps as u32)
            .f32(self.beta_min)
            .f32(self.beta_max)
            .f32(self.max_mass_kg)
            .f32(self.depth_range_mm)
            .f32s(&self.imprint_norm.mean)
            .f32s(&self.imprint_norm.std)
            .f32s(&self.depth_norm.mean)
            .f32s(&self.depth_norm.std);
        for layer in [&self.layer1, &self.layer2] {
            write_dense(&mut e, &layer.linear);
            write_dense(&mut e, &layer.scale);
            write_dense(&mut e, &layer.shift);
        }
        write_dense(&mut e, &self.out);
        e.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes, "diffusion parameters");
        let m = d.u32()? as usize;
        let hidden = d.u32()? as usize;
        let timesteps = d.u32()? as usize;
        let beta_min = d.f32()?;
        let beta_max = d.f32()?;
        let max_mass_kg = d.f32()?;
        let depth_range_mm = d.f32()?;
        let config = DiffusionConfig {
            timesteps,
            beta_min,
            beta_max,
            hidden,
            depth_range_mm,
            ddim_steps: 1,
            ..Default::default()
        };
        let mut p = DenoiserParams::new(m, &config, max_mass_kg, &mut Rng::new(0))
            .map_err(|e| Error::Format(format!("diffusion header: {e}")))?;
        p.imprint_norm = LatentNorm {
            mean: d.f32s(m)?,
            std: d.f32s(m)?,
        };
        p.depth_norm = LatentNorm {
            mean: d.f32s(m)?,
            std: d.f32s(m)?,
        };
        for layer in [&mut p.layer1, &mut p.layer2] {
            let (i, o) = (layer.linear.input(), layer.linear.output());
            layer.linear = read_dense(&mut d, i, o, "diffusion layer")?;
            layer.scale = read_dense(&mut d, CONDITION_DIM, o, "diffusion film")?;
            layer.shift = read_dense(&mut d, CONDITION_DIM, o, "diffusion film")?;
        }
        p.out = read_dense(&mut d, hidden, m, "diffusion output")?;
        if !d.finished() {
            return Err(Error::Format("trailing bytes after diffusion parameters".into()));
        }
        if !p.is_finite() || p.imprint_norm.std.iter().chain(&p.depth_norm.std).any(|&s| s <= 0.0) {
            return Err(Error::Format("diffusion parameters are not finite or have non-positive scales".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_artifact(path, SECTION, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_artifact(path, SECTION, "train-diffusion")?)
    }
}

/// `ε̂` for a standardized `z_t` and raw conditioning latents.
pub fn predict_noise(
    params: &DenoiserParams,
    z_t: &[f64],
    z_in: &[f64],
    z_cdp: &[f64],
    t: usize,
    c: &ConditionVector,
) -> Result<Vec<f64>> {
    let m = params.latent_dim;
    let inputs: [(&'static str, &[f64]); 3] = [
        ("predict_noise z_t", z_t),
        ("predict_noise z_in", z_in),
        ("predict_noise z_cdp", z_cdp),
    ];
    for (name, v) in inputs {
        if v.len() != m {
            return Err(Error::dims(name, m, v.len()));
        }
    }
    if t > params.timesteps {
        return Err(Error::InvalidArgument(format!("timestep {t} outside 0..={}", params.timesteps)));
    }
    let row = params.input_row(z_t, z_in, z_cdp, t, c);
    let x = Matrix::from_vec(1, row.len(), row)?;
    let cm = Matrix::from_vec(1, CONDITION_DIM, c.values().to_vec())?;
    Ok(params.forward(&x, &cm).0.into_vec())
}

/// Inputs of one conditional sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionExample {
    pub current: ImprintImage,
    pub target: ImprintImage,
    pub depth: ImprintImage,
    pub mass_kg: f64,
    pub texture: TextureClass,
}

impl DiffusionExample {
    pub fn from_record(record: &GraspRecord, manifest: &DatasetManifest, depth_range_mm: f64) -> Result<Self> {
        let obj = manifest.object(record.object_index)?;
        Ok(DiffusionExample {
            current: record.imprint_current.clone(),
            target: record.imprint_optimal.clone(),
            depth: record.patch.depth_image(depth_range_mm),
            mass_kg: obj.mass_kg,
            texture: obj.texture,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionHistory {
    /// Per-step minibatch loss.
    pub losses: Vec<f64>,
}

impl DiffusionHistory {
    /// Mean of the first and last `window` losses.
    pub fn smoothed_ends(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..w.min(self.losses.len())]), mean(&self.losses[self.losses.len().saturating_sub(w)..]))
    }
}

struct EncodedExamples {
    target: Vec<Vec<f64>>,
    current: Vec<Vec<f64>>,
    depth: Vec<Vec<f64>>,
    cond: Vec<ConditionVector>,
}

fn encode_examples(examples: &[DiffusionExample], codec: &CodecParams, max_mass: f64) -> Result<EncodedExamples> {
    let rows = |f: &dyn Fn(&DiffusionExample) -> &ImprintImage| -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&ImprintImage> = examples.iter().map(f).collect();
        let z = codec.encode_batch(&refs)?;
        Ok((0..z.rows()).map(|r| z.row(r).to_vec()).collect())
    };
    Ok(EncodedExamples {
        target: rows(&|e| &e.target)?,
        current: rows(&|e| &e.current)?,
        depth: rows(&|e| &e.depth)?,
        cond: examples
            .iter()
            .map(|e| ConditionVector::new(e.mass_kg, max_mass, e.texture))
            .collect::<Result<_>>()?,
    })
}

/// Trains the noise predictor with `‖ε − ε_θ‖²` on uniformly drawn timesteps.
pub fn train_denoiser(
    examples: &[DiffusionExample],
    codec: &CodecParams,
    config: &DiffusionConfig,
    rng: &mut Rng,
) -> Result<(DenoiserParams, DiffusionHistory)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("diffusion training set is empty".into()));
    }
    let max_mass = examples.iter().map(|e| e.mass_kg).fold(0.0, f64::max);
    if max_mass <= 0.0 {
        return Err(Error::InvalidArgument("diffusion training set has no positive mass".into()));
    }
    let m = codec.latent_dim();
    let enc = encode_examples(examples, codec, max_mass)?;
    let mut params = DenoiserParams::new(m, config, max_mass, &mut rng.fork(1))?;
    params.imprint_norm = LatentNorm::fit(&enc.target);
    params.depth_norm = LatentNorm::fit(&enc.depth);
    let targets: Vec<Vec<f64>> = enc.target.iter().map(|z| params.imprint_norm.standardize(z)).collect();
    let schedule = params.schedule();

    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut draw = rng.fork(2);
    let mut losses = Vec::with_capacity(config.train_steps);
    let width = 3 * m + TIME_EMBED_DIM + CONDITION_DIM;
    for step in 0..config.train_steps {
        let b = config.batch_size;
        let mut x = Vec::with_capacity(b * width);
        let mut c = Vec::with_capacity(b * CONDITION_DIM);
        let mut eps_all = Vec::with_capacity(b * m);
        for _ in 0..b {
            let i = draw.below(examples.len());
            let t = 1 + draw.below(config.timesteps);
            let eps = draw.normal_vec(m);
            let z_t = forward_noise(&targets[i], t, &schedule, &eps)?;
            x.extend(params.input_row(&z_t, &enc.current[i], &enc.depth[i], t, &enc.cond[i]));
            c.extend_from_slice(enc.cond[i].values());
            eps_all.extend(eps);
        }
        let x = Matrix::from_vec(b, width, x)?;
        let c = Matrix::from_vec(b, CONDITION_DIM, c)?;
        let eps = Matrix::from_vec(b, m, eps_all)?;
        let (loss, grads) = params.loss_and_grads(&x, &c, &eps);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "diffusion",
                step,
                detail: format!("batch loss {loss}"),
            });
        }
        let grad_refs: Vec<&Matrix> = grads.iter().collect();
        adam.grad_step(&mut params.params_mut(), &grad_refs, &BLOCK_NAMES)?;
        losses.push(loss);
    }
    Ok((params, DiffusionHistory { losses }))
}

/// Predicted goal: the raw codec latent `z_g` and its decoded imprint.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSample {
    pub z_goal: Vec<f64>,
    pub image: ImprintImage,
}

/// DDIM from `z^T ~ N(0, I)` down to `t = 0` over `steps` evenly spaced
/// timesteps, conditioned on the current imprint, depth image, mass and
/// texture.
#[allow(clippy::too_many_arguments)]
pub fn sample_goal(
    params: &DenoiserParams,
    codec: &CodecParams,
    current: &ImprintImage,
    depth: &ImprintImage,
    mass_kg: f64,
    texture: TextureClass,
    steps: usize,
    rng: &mut Rng,
) -> Result<GoalSample> {
    if codec.latent_dim() != params.latent_dim {
        return Err(Error::dims("sample_goal codec latent", params.latent_dim, codec.latent_dim()));
    }
    let schedule = params.schedule();
    let ts = ddim_timesteps(schedule.steps(), steps)?;
    let z_in = codec.encode_mean(current)?;
    let z_cdp = codec.encode_mean(depth)?;
    let c = params.condition(mass_kg, texture)?;
    let mut z = rng.normal_vec(params.latent_dim);
    for w in ts.windows(2) {
        let eps = predict_noise(params, &z, &z_in, &z_cdp, w[0], &c)?;
        z = ddim_step(&z, &eps, w[0], w[1], &schedule)?;
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            stage: "sample",
            step: ts.len(),
            detail: "non-finite latent after sampling".into(),
        });
    }
    let z_goal = params.imprint_norm.restore(&z);
    let image = codec.decode(&z_goal)?;
    Ok(GoalSample { z_goal, image })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_properties() {
        let s = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 0.01);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!(make_schedule(1, 1e-4, 0.02).is_err());
        assert!(make_schedule(10, 0.02, 1e-4).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_endpoints_and_range() {
        let s = make_schedule(10, 0.1, 0.5).unwrap();
        let z0 = [1.0, -2.0];
        let eps = [0.3, 0.4];
        assert_eq!(forward_noise(&z0, 0, &s, &eps).unwrap(), z0.to_vec());
        assert!(forward_noise(&z0, 11, &s, &eps).is_err());
        assert!(forward_noise(&z0, 1, &s, &[0.0]).is_err());
        let harsh = make_schedule(400, 0.5, 0.9).unwrap();
        let z = forward_noise(&z0, 400, &harsh, &eps).unwrap();
        assert!(z.iter().zip(&eps).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ddim_inverts_forward_noise() {
        let s = make_schedule(200, 5e-4, 0.1).unwrap();
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let z0 = rng.normal_vec(8);
            let eps = rng.normal_vec(8);
            let t = 1 + rng.below(200);
            let zt = forward_noise(&z0, t, &s, &eps).unwrap();
            let back = ddim_step(&zt, &eps, t, 0, &s).unwrap();
            assert!(back.iter().zip(&z0).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
        assert!(ddim_step(&[0.0], &[0.0], 3, 3, &s).is_err());
    }

    #[test]
    fn timestep_subsequence() {
        assert_eq!(ddim_timesteps(200, 20).unwrap()[..3], [200, 190, 180]);
        assert_eq!(*ddim_timesteps(200, 20).unwrap().last().unwrap(), 0);
        assert_eq!(ddim_timesteps(200, 20).unwrap().len(), 21);
        assert_eq!(ddim_timesteps(7, 7).unwrap(), vec![7, 6, 5, 4, 3, 2, 1, 0]);
        assert!(ddim_timesteps(10, 0).is_err());
        assert!(ddim_timesteps(10, 11).is_err());
    }

    #[test]
    fn condition_vector_layout() {
        let c = ConditionVector::new(0.2, 0.4, TextureClass::CoarseGrain).unwrap();
        assert_eq!(c.values().len(), CONDITION_DIM);
        let onehot = &c.values()[MASS_EMBED_DIM..];
        assert_eq!(onehot.iter().sum::<f64>(), 1.0);
        assert_eq!(onehot[TextureClass::CoarseGrain.index()], 1.0);
        assert!((c.values()[0] - (std::f64::consts::PI * 0.5).sin()).abs() < 1e-15);
        assert!(ConditionVector::new(-0.1, 0.4, TextureClass::Smooth).is_err());
    }

    fn tiny_params(rng: &mut Rng) -> DenoiserParams {
        let cfg = DiffusionConfig {
            timesteps: 20,
            hidden: 7,
            ddim_steps: 5,
            ..Default::default()
        };
        let mut p = DenoiserParams::new(3, &cfg, 0.5, rng).unwrap();
        for m in p.params_mut() {
            for v in m.as_mut_slice() {
                *v = 0.4 * rng.normal();
            }
        }
        p
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let mut rng = Rng::new(1);
        let p = DenoiserParams::new(4, &DiffusionConfig::default(), 0.4, &mut rng).unwrap();
        let c = ConditionVector::new(0.1, 0.4, TextureClass::Ridged).unwrap();
        let e = predict_noise(&p, &[1.0; 4], &[0.5; 4], &[-0.5; 4], 17, &c).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
        assert!(predict_noise(&p, &[1.0; 3], &[0.5; 4], &[-0.5; 4], 17, &c).is_err());
        assert!(predict_noise(&p, &[1.0; 4], &[0.5; 4], &[-0.5; 4], 201, &c).is_err());
    }

    #[test]
    fn denoiser_gradient_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let p = tiny_params(&mut rng);
        let width = 3 * 3 + TIME_EMBED_DIM + CONDITION_DIM;
        let x = Matrix::from_vec(4, width, rng.normal_vec(4 * width)).unwrap();
        let c = Matrix::from_vec(4, CONDITION_DIM, rng.normal_vec(4 * CONDITION_DIM)).unwrap();
        let eps = Matrix::from_vec(4, 3, rng.normal_vec(12)).unwrap();
        let (_, grads) = p.loss_and_grads(&x, &c, &eps);
        let params: Vec<Matrix> = p.params().into_iter().cloned().collect();
        let err = check_gradient(
            |q: &[Matrix]| {
                let mut r = p.clone();
                for (dst, src) in r.params_mut().into_iter().zip(q) {
                    *dst = src.clone();
                }
                r.loss_and_grads(&x, &c, &eps).0
            },
            &params,
            &grads,
            10,
            &mut rng,
        );
        assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn serialization_round_trip() {
        let mut rng = Rng::new(4);
        let p = tiny_params(&mut rng);
        let back = DenoiserParams::from_bytes(&p.to_bytes()).unwrap();
        let again = DenoiserParams::from_bytes(&back.to_bytes()).unwrap();
        assert_eq!(back, again);
        assert_eq!(back.schedule().steps(), 20);
        let c = ConditionVector::new(0.1, 0.5, TextureClass::Smooth).unwrap();
        let a = predict_noise(&p, &[0.1; 3], &[0.2; 3], &[0.3; 3], 5, &c).unwrap();
        let b = predict_noise(&back, &[0.1; 3], &[0.2; 3], &[0.3; 3], 5, &c).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-4));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            DenoiserParams::load(&dir.path().join("missing")),
            Err(Error::MissingArtifact { stage: "train-diffusion", .. })
        ));
    }
}
