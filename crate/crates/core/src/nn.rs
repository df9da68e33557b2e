//! Batched dense layers with hand-written backward passes. Rows are samples.

use crate::container::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::numerics::{matmul, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Identity,
    Tanh,
    Silu,
    Sigmoid,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// `y = x W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    /// Gaussian init with variance `gain / in`.
    pub(crate) fn new(input: usize, output: usize, gain: f64, rng: &mut Rng) -> Self {
        let std = (gain / input as f64).sqrt();
        let data = (0..input * output).map(|_| std * rng.normal()).collect();
        Dense {
            w: Matrix::from_vec(input, output, data).expect("sized"),
            b: Matrix::zeros(1, output),
        }
    }

    pub(crate) fn zeros(input: usize, output: usize) -> Self {
        Dense {
            w: Matrix::zeros(input, output),
            b: Matrix::zeros(1, output),
        }
    }

    pub(crate) fn input(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn output(&self) -> usize {
        self.w.cols()
    }

    pub(crate) fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = matmul(x, &self.w).expect("layer input width");
        let out = self.output();
        for row in y.as_mut_slice().chunks_exact_mut(out) {
            for (v, b) in row.iter_mut().zip(self.b.as_slice()) {
                *v += b;
            }
        }
        y
    }

    /// Returns `(dW, db, dx)` for upstream gradient `dy`.
    pub(crate) fn backward(&self, x: &Matrix, dy: &Matrix) -> (Matrix, Matrix, Matrix) {
        let dw = matmul(&x.transpose(), dy).expect("layer grad");
        let mut db = Matrix::zeros(1, self.output());
        for row in dy.as_slice().chunks_exact(self.output()) {
            for (g, v) in db.as_mut_slice().iter_mut().zip(row) {
                *g += v;
            }
        }
        let dx = matmul(dy, &self.w.transpose()).expect("layer grad");
        (dw, db, dx)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.is_finite()
    }
}

pub(crate) fn activate(pre: &Matrix, act: Activation) -> Matrix {
    pre.map(|v| act.apply(v))
}

/// `dpre = dy ⊙ act'(pre)`.
pub(crate) fn activation_grad(pre: &Matrix, post: &Matrix, dy: &Matrix, act: Activation) -> Matrix {
    let data = pre
        .as_slice()
        .iter()
        .zip(post.as_slice())
        .zip(dy.as_slice())
        .map(|((&x, &y), &g)| g * act.derivative(x, y))
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data).expect("same shape")
}

/// Stack of dense layers, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    pub activations: Vec<Activation>,
}

pub(crate) struct MlpCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl Mlp {
    pub(crate) fn forward(&self, x: &Matrix) -> (Matrix, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            let pre = layer.forward(&h);
            let post = activate(&pre, act);
            cache.inputs.push(h);
            cache.pre.push(pre);
            h = post.clone();
            cache.post.push(post);
        }
        (h, cache)
    }

    /// Inference-only forward pass.
    pub(crate) fn apply(&self, x: &Matrix) -> Matrix {
        let mut h = x.clone();
        for (layer, &act) in self.layers.iter().zip(&self.activations) {
            h = activate(&layer.forward(&h), act);
        }
        h
    }

    /// Gradients per layer as `(dW, db)` plus the input gradient.
    pub(crate) fn backward(&self, cache: &MlpCache, dout: &Matrix) -> (Vec<(Matrix, Matrix)>, Matrix) {
        let n = self.layers.len();
        let mut grads = vec![(Matrix::zeros(0, 0), Matrix::zeros(0, 0)); n];
        let mut d = dout.clone();
        for i in (0..n).rev() {
            let dpre = activation_grad(&cache.pre[i], &cache.post[i], &d, self.activations[i]);
            let (dw, db, dx) = self.layers[i].backward(&cache.inputs[i], &dpre);
            grads[i] = (dw, db);
            d = dx;
        }
        (grads, d)
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub(crate) fn param_refs_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub(crate) fn param_refs(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }
}

pub(crate) fn write_dense(e: &mut Encoder, layer: &Dense) {
    e.u32(layer.input() as u32)
        .u32(layer.output() as u32)
        .f32s(layer.w.as_slice())
        .f32s(layer.b.as_slice());
}

pub(crate) fn read_dense(d: &mut Decoder, input: usize, output: usize, what: &'static str) -> Result<Dense> {
    let (i, o) = (d.u32()? as usize, d.u32()? as usize);
    if (i, o) != (input, output) {
        return Err(Error::dims(what, format!("{input}x{output}"), format!("{i}x{o}")));
    }
    let w = Matrix::from_vec(i, o, d.f32s(i * o)?)?;
    let b = Matrix::from_vec(1, o, d.f32s(o)?)?;
    Ok(Dense { w, b })
}

/// Copies rows `idx` of `m` into a new matrix.
pub(crate) fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let cols = m.cols();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), cols, data).expect("sized")
}

/// Horizontal concatenation of equally tall blocks.
pub(crate) fn hcat(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks[0].rows();
    let cols: usize = blocks.iter().map(|b| b.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for b in blocks {
            data.extend_from_slice(b.row(r));
        }
    }
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Columns `[start, start + width)` of `m`.
pub(crate) fn col_slice(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut data = Vec::with_capacity(m.rows() * width);
    for r in 0..m.rows() {
        data.extend_from_slice(&m.row(r)[start..start + width]);
    }
    Matrix::from_vec(m.rows(), width, data).expect("sized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_gradient;

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let acts = [Activation::Tanh, Activation::Silu, Activation::Sigmoid];
        let mlp = Mlp {
            layers: vec![
                Dense::new(4, 6, 1.0, &mut rng),
                Dense::new(6, 5, 1.0, &mut rng),
                Dense::new(5, 3, 1.0, &mut rng),
            ],
            activations: acts.to_vec(),
        };
        let x = Matrix::from_vec(2, 4, rng.normal_vec(8)).unwrap();
        let target = Matrix::from_vec(2, 3, rng.normal_vec(6)).unwrap();
        let loss_of = |m: &Mlp| -> f64 {
            let y = m.apply(&x);
            y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum()
        };
        let (y, cache) = mlp.forward(&x);
        let dy = y.sub(&target).unwrap();
        let (grads, _) = mlp.backward(&cache, &dy);
        let params: Vec<Matrix> = mlp.param_refs().into_iter().cloned().collect();
        let analytic: Vec<Matrix> = grads.into_iter().flat_map(|(w, b)| [w, b]).collect();
        let err = check_gradient(
            |p: &[Matrix]| {
                let mut m = mlp.clone();
                for (dst, src) in m.param_refs_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                loss_of(&m)
            },
            &params,
            &analytic,
            20,
            &mut rng,
        );
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
