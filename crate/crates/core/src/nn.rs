//! Dense feed-forward networks shared by the flow and the amplitude model.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::Result;

/// How the final layer is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OutputInit {
    /// Same fan-in uniform rule as the hidden layers.
    FanIn,
    /// Weights and bias exactly zero.
    Zero,
    /// Fan-in uniform scaled by the given factor.
    Scaled(f64),
}

/// ReLU hidden layers and a tanh output.
///
/// Parameters are stored flat as `[W0, b0, W1, b1, ...]` with `Wk` of shape
/// `[in, out]` and `bk` of shape `[1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<Tensor>,
}

fn uniform(shape: [usize; 2], bound: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

impl Mlp {
    /// `sizes` lists every layer width, input first and output last.
    pub fn new(sizes: &[usize], output: OutputInit, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        let last = sizes.len() - 2;
        for (k, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = match (k == last, output) {
                (true, OutputInit::Zero) => 0.0,
                (true, OutputInit::Scaled(s)) => s,
                _ => 1.0,
            };
            if scale == 0.0 {
                params.push(Tensor::zeros([fan_in, fan_out]));
                params.push(Tensor::zeros([1, fan_out]));
            } else {
                params.push(uniform([fan_in, fan_out], bound * scale, rng));
                params.push(uniform([1, fan_out], bound * scale, rng));
            }
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<Tensor>) -> Result<Self> {
        let ok = params.len() == 2 * (sizes.len() - 1)
            && sizes.windows(2).zip(params.chunks(2)).all(|(w, p)| {
                p[0].shape() == [w[0], w[1]] && p[1].shape() == [1, w[1]]
            });
        if !ok {
            return Err(crate::Error::Checkpoint(format!("parameters do not match layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Forward pass without recording, on a `[batch, in]` input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.params.len() / 2;
        let mut h = x.clone();
        for (k, p) in self.params.chunks(2).enumerate() {
            h = h.matmul(&p[0])?.zip_with(&p[1], "add", |a, b| a + b)?;
            h = if k + 1 == n { h.map(f64::tanh) } else { h.map(|v| v.max(0.0)) };
        }
        Ok(h)
    }

    /// Records the parameters on `tape` as leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Recorded forward pass using parameters previously bound to the tape.
    pub fn forward_on<'t>(params: &[Var<'t>], x: Var<'t>) -> Result<Var<'t>> {
        let n = params.len() / 2;
        let mut h = x;
        for (k, p) in params.chunks(2).enumerate() {
            h = h.matmul(p[0])?.add(p[1])?;
            h = if k + 1 == n { h.tanh() } else { h.relu() };
        }
        Ok(h)
    }
}
