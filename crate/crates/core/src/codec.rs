//! Dense variational encoder/decoder over imprint images.
//!
//! Encoder: image → hidden → hidden → (mean ‖ logvar). Decoder: latent →
//! hidden → hidden → sigmoid image. The per-image loss is the summed L1
//! reconstruction error plus a weighted KL term against `N(0, I)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{read_artifact, write_artifact, Decoder, Encoder};
use crate::error::{Error, Result};
use crate::image::ImprintImage;
use crate::nn::{col_slice, gather_rows, hcat, read_dense, write_dense, Activation, Dense, Mlp};
use crate::numerics::{check_gradient, Adam, AdamConfig, Matrix, Rng};

const SECTION: &[u8; 4] = b"CODC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs over which the KL weight ramps linearly to `lambda_kl`.
    pub e_warm: usize,
    pub lambda_kl: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            latent_dim: 16,
            hidden: 128,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            e_warm: 10,
            lambda_kl: 1e-3,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("codec.{m}")));
        if self.latent_dim < 2 {
            return bad("latent_dim must be at least 2");
        }
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 || self.e_warm == 0 {
            return bad("hidden, epochs, batch_size and e_warm must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return bad("lambda_kl must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecParams {
    rows: usize,
    cols: usize,
    latent_dim: usize,
    hidden: usize,
    pub(crate) encoder: Mlp,
    pub(crate) decoder: Mlp,
}

/// KL divergence of `N(mean, exp(logvar))` from the standard normal.
pub fn kl_divergence(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Linear warm-up `min(1, epoch / e_warm) · lambda_kl`.
pub fn kl_weight(epoch: usize, e_warm: usize, lambda_kl: f64) -> f64 {
    (epoch as f64 / e_warm.max(1) as f64).min(1.0) * lambda_kl
}

/// Components of one minibatch loss, averaged per image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    /// Mean absolute pixel error.
    pub l1: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecHistory {
    /// Per-epoch mean training loss.
    pub epochs: Vec<LossParts>,
    /// Deterministic reconstruction L1 (z = mean) on the training set.
    pub final_l1: f64,
    /// L1 of predicting the per-pixel training mean.
    pub baseline_l1: f64,
}

impl CodecParams {
    /// Random hidden layers; the encoder head starts at zero so every input
    /// maps to mean 0 and logvar 0.
    pub fn new(rows: usize, cols: usize, latent_dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if latent_dim < 2 || hidden == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "codec needs latent_dim >= 2 and positive sizes, got m={latent_dim} hidden={hidden} grid {rows}x{cols}"
            )));
        }
        let p = rows * cols;
        let h2 = (hidden / 2).max(2);
        let encoder = Mlp {
            layers: vec![
                Dense::new(p, hidden, 1.0, rng),
                Dense::new(hidden, h2, 1.0, rng),
                Dense::zeros(h2, 2 * latent_dim),
            ],
            activations: vec![Activation::Tanh, Activation::Tanh, Activation::Identity],
        };
        let decoder = Mlp {
            layers: vec![
                Dense::new(latent_dim, h2, 1.0, rng),
                Dense::new(h2, hidden, 1.0, rng),
                Dense::new(hidden, p, 1.0, rng),
            ],
            activations: vec![Activation::Tanh, Activation::Tanh, Activation::Sigmoid],
        };
        Ok(CodecParams {
            rows,
            cols,
            latent_dim,
            hidden,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }

    fn image_row(&self, x: &ImprintImage) -> Result<Matrix> {
        x.ensure_dims(self.rows, self.cols, "codec input")?;
        Matrix::from_vec(1, self.rows * self.cols, x.pixels().to_vec())
    }

    /// Deterministic forward pass to `(mean, logvar)`.
    pub fn encode(&self, x: &ImprintImage) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.encoder.apply(&self.image_row(x)?).into_vec();
        let (mean, logvar) = out.split_at(self.latent_dim);
        Ok((mean.to_vec(), logvar.to_vec()))
    }

    /// Latent mean, the deterministic code used for control and diffusion.
    pub fn encode_mean(&self, x: &ImprintImage) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.0)
    }

    /// Latent means of many images, one row each.
    pub fn encode_batch(&self, images: &[&ImprintImage]) -> Result<Matrix> {
        let x = self.stack(images)?;
        Ok(col_slice(&self.encoder.apply(&x), 0, self.latent_dim))
    }

    pub fn decode(&self, z: &[f64]) -> Result<ImprintImage> {
        if z.len() != self.latent_dim {
            return Err(Error::dims("codec latent", self.latent_dim, z.len()));
        }
        let y = self.decoder.apply(&Matrix::from_vec(1, self.latent_dim, z.to_vec())?);
        ImprintImage::new(self.rows, self.cols, y.into_vec())
    }

    fn stack(&self, images: &[&ImprintImage]) -> Result<Matrix> {
        let p = self.rows * self.cols;
        let mut data = Vec::with_capacity(images.len() * p);
        for x in images {
            x.ensure_dims(self.rows, self.cols, "codec input")?;
            data.extend_from_slice(x.pixels());
        }
        Matrix::from_vec(images.len(), p, data)
    }

    /// Mean per-pixel L1 of `decode(encode_mean(x))`.
    pub fn reconstruction_l1(&self, images: &[&ImprintImage]) -> Result<f64> {
        if images.is_empty() {
            return Ok(0.0);
        }
        let x = self.stack(images)?;
        let z = col_slice(&self.encoder.apply(&x), 0, self.latent_dim);
        let y = self.decoder.apply(&z);
        Ok(mean_abs_diff(&x, &y))
    }

    /// Loss over a batch `x` with reparameterization noise `eps`, and the
    /// gradients for every parameter block in [`Self::blocks`] order.
    pub(crate) fn loss_and_grads(&self, x: &Matrix, eps: &Matrix, omega: f64) -> (LossParts, Vec<Matrix>) {
        let n = x.rows() as f64;
        let m = self.latent_dim;
        let (enc_out, enc_cache) = self.encoder.forward(x);
        let mean = col_slice(&enc_out, 0, m);
        let logvar = col_slice(&enc_out, m, m);
        let std = logvar.map(|lv| (0.5 * lv).exp());
        let z_data = mean
            .as_slice()
            .iter()
            .zip(std.as_slice())
            .zip(eps.as_slice())
            .map(|((mu, s), e)| mu + s * e)
            .collect();
        let z = Matrix::from_vec(x.rows(), m, z_data).expect("sized");
        let (y, dec_cache) = self.decoder.forward(&z);

        let abs_sum: f64 = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).sum();
        let kl_sum: f64 = (0..x.rows()).map(|r| kl_divergence(mean.row(r), logvar.row(r))).sum();
        let parts = LossParts {
            total: (abs_sum + omega * kl_sum) / n,
            l1: abs_sum / (n * x.cols() as f64),
            kl: kl_sum / n,
        };

        // Subgradient of |y - x| taken as 0 at equality.
        let dy = Matrix::from_vec(
            y.rows(),
            y.cols(),
            y.as_slice()
                .iter()
                .zip(x.as_slice())
                .map(|(a, b)| if a > b { 1.0 / n } else if a < b { -1.0 / n } else { 0.0 })
                .collect(),
        )
        .expect("sized");
        let (dec_grads, dz) = self.decoder.backward(&dec_cache, &dy);
        let mut dmean = dz.clone();
        let mut dlogvar = Matrix::zeros(x.rows(), m);
        for i in 0..dz.len() {
            let mu = mean.as_slice()[i];
            let lv = logvar.as_slice()[i];
            let s = std.as_slice()[i];
            dmean.as_mut_slice()[i] += omega * mu / n;
            dlogvar.as_mut_slice()[i] =
                dz.as_slice()[i] * eps.as_slice()[i] * 0.5 * s + omega * 0.5 * (lv.exp() - 1.0) / n;
        }
        let (enc_grads, _) = self.encoder.backward(&enc_cache, &hcat(&[&dmean, &dlogvar]));
        let grads = enc_grads.into_iter().chain(dec_grads).flat_map(|(w, b)| [w, b]).collect();
        (parts, grads)
    }

    /// Largest relative error between the analytic gradient of the full
    /// loss (summed L1 + `omega`·KL, fresh reparameterization noise) and
    /// central differences on `probes` random coordinates.
    pub fn gradient_check(&self, images: &[&ImprintImage], omega: f64, probes: usize, rng: &mut Rng) -> Result<f64> {
        let x = self.stack(images)?;
        let eps = Matrix::from_vec(images.len(), self.latent_dim, rng.normal_vec(images.len() * self.latent_dim))?;
        let (_, grads) = self.loss_and_grads(&x, &eps, omega);
        let params: Vec<Matrix> = self.blocks().into_iter().cloned().collect();
        Ok(check_gradient(
            |p: &[Matrix]| {
                let mut q = self.clone();
                for (dst, src) in q.blocks_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                q.loss_and_grads(&x, &eps, omega).0.total
            },
            &params,
            &grads,
            probes,
            rng,
        ))
    }

    pub(crate) fn blocks(&self) -> Vec<&Matrix> {
        let mut v = self.encoder.param_refs();
        v.extend(self.decoder.param_refs());
        v
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = self.encoder.param_refs_mut();
        v.extend(self.decoder.param_refs_mut());
        v
    }

    pub(crate) fn block_names() -> [&'static str; 12] {
        [
            "encoder.0.w",
            "encoder.0.b",
            "encoder.1.w",
            "encoder.1.b",
            "encoder.head.w",
            "encoder.head.b",
            "decoder.0.w",
            "decoder.0.b",
            "decoder.1.w",
            "decoder.1.b",
            "decoder.out.w",
            "decoder.out.b",
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.u32(self.rows as u32)
            .u32(self.cols as u32)
            .u32(self.latent_dim as u32)
            .u32(self.hidden as u32);
        for layer in self.encoder.layers.iter().chain(&self.decoder.layers) {
            write_dense(&mut e, layer);
        }
        e.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(bytes, "codec parameters");
        let rows = d.u32()? as usize;
        let cols = d.u32()? as usize;
        let m = d.u32()? as usize;
        let hidden = d.u32()? as usize;
        let mut params = CodecParams::new(rows, cols, m, hidden, &mut Rng::new(0))
            .map_err(|e| Error::Format(format!("codec header: {e}")))?;
        let layers = params.encoder.layers.iter_mut().chain(params.decoder.layers.iter_mut());
        for layer in layers {
            *layer = read_dense(&mut d, layer.input(), layer.output(), "codec layer")?;
        }
        if !d.finished() {
            return Err(Error::Format("trailing bytes after codec parameters".into()));
        }
        if !params.is_finite() {
            return Err(Error::Format("codec parameters contain non-finite values".into()));
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_artifact(path, SECTION, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_artifact(path, SECTION, "train-codec")?)
    }
}

fn mean_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum();
    s / a.len().max(1) as f64
}

/// L1 of predicting every image by the per-pixel mean image.
pub fn mean_image_baseline_l1(images: &[&ImprintImage]) -> f64 {
    let Some(first) = images.first() else { return 0.0 };
    let p = first.pixels().len();
    let mut mean = vec![0.0; p];
    for x in images {
        for (m, v) in mean.iter_mut().zip(x.pixels()) {
            *m += v / images.len() as f64;
        }
    }
    let total: f64 = images
        .iter()
        .map(|x| x.pixels().iter().zip(&mean).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum();
    total / (images.len() * p) as f64
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Minibatch training with reparameterized sampling. The decoder output bias
/// starts at the logit of the per-pixel mean image.
pub fn train_codec(images: &[ImprintImage], config: &CodecConfig, rng: &mut Rng) -> Result<(CodecParams, CodecHistory)> {
    config.validate()?;
    let Some(first) = images.first() else {
        return Err(Error::InvalidArgument("codec training set is empty".into()));
    };
    let (rows, cols) = first.dims();
    let mut params = CodecParams::new(rows, cols, config.latent_dim, config.hidden, &mut rng.fork(1))?;
    let refs: Vec<&ImprintImage> = images.iter().collect();
    let data = params.stack(&refs)?;
    let n = images.len();
    let p = rows * cols;
    {
        let out = params.decoder.layers.last_mut().expect("decoder layers");
        out.w = out.w.scale(0.0);
        for j in 0..p {
            let mean = (0..n).map(|i| data.row(i)[j]).sum::<f64>() / n as f64;
            out.b.as_mut_slice()[j] = logit(mean);
        }
    }

    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let names = CodecParams::block_names();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng.fork(2);
    let mut noise_rng = rng.fork(3);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let omega = kl_weight(epoch, config.e_warm, config.lambda_kl);
        shuffle_rng.shuffle(&mut order);
        let mut acc = LossParts {
            total: 0.0,
            l1: 0.0,
            kl: 0.0,
        };
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let x = gather_rows(&data, batch);
            let eps = Matrix::from_vec(batch.len(), config.latent_dim, noise_rng.normal_vec(batch.len() * config.latent_dim))?;
            let (parts, grads) = params.loss_and_grads(&x, &eps, omega);
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "codec",
                    step,
                    detail: format!("epoch {epoch}: l1 {} kl {}", parts.l1, parts.kl),
                });
            }
            let grad_refs: Vec<&Matrix> = grads.iter().collect();
            adam.grad_step(&mut params.blocks_mut(), &grad_refs, &names)?;
            acc.total += parts.total;
            acc.l1 += parts.l1;
            acc.kl += parts.kl;
            batches += 1;
            step += 1;
        }
        let b = batches as f64;
        history.push(LossParts {
            total: acc.total / b,
            l1: acc.l1 / b,
            kl: acc.kl / b,
        });
    }
    let final_l1 = params.reconstruction_l1(&refs)?;
    let baseline_l1 = mean_image_baseline_l1(&refs);
    Ok((
        params,
        CodecHistory {
            epochs: history,
            final_l1,
            baseline_l1,
        },
    ))
}
