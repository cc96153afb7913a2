//! RealNVP-style flow from a two-Gaussian mixture prior onto the open cube
//! (−1, 1)^n, with exact log-densities.
//!
//! Every coupling layer conditions on the first `d = ceil(n/2)` coordinates
//! and applies `z₂ ← z₂ ⊙ exp(s(z₁)) + t(z₁)` to the remaining `n − d`.
//! Between layers the two halves swap places so that the pass-through half
//! alternates. A final elementwise tanh squashes onto the cube.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{log_cosh, Tape, Tensor, Var};
use crate::nn::{Mlp, OutputInit};
use crate::{Error, Result};

pub const DEFAULT_LAYERS: usize = 4;
pub const DEFAULT_HIDDEN: [usize; 2] = [512, 512];

/// Largest |y| accepted by the inverse tanh before clamping.
const CUBE_CLAMP: f64 = 1.0 - 1e-12;

/// Independent per-coordinate mixture ½·N(+μ, σ²) + ½·N(−μ, σ²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prior {
    pub dim: usize,
    pub mean: f64,
    pub std: f64,
}

impl Prior {
    pub fn new(dim: usize) -> Self {
        Self { dim, mean: 1.0, std: 0.33 }
    }

    /// `count × dim` i.i.d. draws: a fair coin picks the component.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Tensor {
        let normal = Normal::new(0.0, self.std).expect("positive std");
        let data = (0..count * self.dim)
            .map(|_| {
                let centre = if rng.random::<bool>() { self.mean } else { -self.mean };
                centre + normal.sample(rng)
            })
            .collect();
        Tensor::new([count, self.dim], data).expect("shape matches data")
    }

    fn log_norm(&self) -> f64 {
        -(self.std * (2.0 * PI).sqrt()).ln()
    }

    /// log(½φ(z; μ, σ) + ½φ(z; −μ, σ)) for one coordinate, evaluated as
    /// log C − (z² + μ²)/(2σ²) + log cosh(μz/σ²).
    pub fn log_density_1d(&self, z: f64) -> f64 {
        let var = self.std * self.std;
        self.log_norm() - (z * z + self.mean * self.mean) / (2.0 * var) + log_cosh(self.mean * z / var)
    }

    pub fn logprob(&self, z: &[f64]) -> f64 {
        z.iter().map(|&x| self.log_density_1d(x)).sum()
    }

    /// Per-row log-density of a recorded `[batch, dim]` value, shape `[batch, 1]`.
    pub fn logprob_on<'t>(&self, z: Var<'t>) -> Result<Var<'t>> {
        let var = self.std * self.std;
        let quad = z.mul(z)?.scale(-1.0 / (2.0 * var));
        let mix = z.scale(self.mean / var).log_cosh();
        let constant = self.dim as f64 * (self.log_norm() - self.mean * self.mean / (2.0 * var));
        Ok(quad.add(mix)?.sum_axis(1)?.add_scalar(constant))
    }
}

/// One affine coupling layer. The network maps the `d` conditioning
/// coordinates to `2(n − d)` outputs: `s` first, then `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer {
    pub net: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    n: usize,
    d: usize,
    layers: Vec<CouplingLayer>,
}

/// Moves the first `n/2` columns behind the rest (a fixed permutation with
/// unit Jacobian). `unswap` is its inverse.
fn swap(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[1];
    x.slice_cols(n / 2, n)?.concat_cols(&x.slice_cols(0, n / 2)?)
}

fn unswap(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[1];
    let k = n - n / 2;
    x.slice_cols(k, n)?.concat_cols(&x.slice_cols(0, k)?)
}

fn swap_on<'t>(x: Var<'t>, n: usize) -> Result<Var<'t>> {
    x.slice_cols(n / 2, n)?.concat_cols(x.slice_cols(0, n / 2)?)
}

fn unswap_on<'t>(x: Var<'t>, n: usize) -> Result<Var<'t>> {
    let k = n - n / 2;
    x.slice_cols(k, n)?.concat_cols(x.slice_cols(0, k)?)
}

/// log(1 − tanh²(x)) = −2 log cosh(x), stable for large |x|.
fn log_tanh_jacobian(x: f64) -> f64 {
    -2.0 * log_cosh(x)
}

fn check_cube(y: &Tensor) -> Result<()> {
    match y.data().iter().position(|v| !(v.abs() < 1.0)) {
        Some(i) => Err(Error::OutsideCube { index: i % y.shape()[1].max(1), value: y.data()[i] }),
        None => Ok(()),
    }
}

impl FlowModel {
    /// Flow with near-identity initialisation: random hidden layers and
    /// zeroed output layers, so every coupling starts as the identity.
    pub fn new(n: usize, num_layers: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("flow needs at least 2 dimensions, got {n}")));
        }
        let d = n.div_ceil(2);
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * (n - d));
        let layers = (0..num_layers)
            .map(|_| CouplingLayer { net: Mlp::new(&sizes, OutputInit::Zero, rng) })
            .collect();
        Ok(Self { n, d, layers })
    }

    /// Default architecture: four couplings with two hidden layers of 512.
    pub fn with_defaults(n: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::new(n, DEFAULT_LAYERS, &DEFAULT_HIDDEN, rng)
    }

    pub fn from_layers(n: usize, nets: Vec<Mlp>) -> Result<Self> {
        let d = n.div_ceil(2);
        for net in &nets {
            let s = net.sizes();
            if s.first() != Some(&d) || s.last() != Some(&(2 * (n - d))) {
                return Err(Error::Checkpoint(format!("coupling net sizes {s:?} do not fit n = {n}")));
            }
        }
        Ok(Self { n, d, layers: nets.into_iter().map(|net| CouplingLayer { net }).collect() })
    }

    /// Re-initialises every coupling net so the flow is exactly tanh.
    pub fn init_near_identity(&mut self, rng: &mut impl Rng) {
        for layer in &mut self.layers {
            let sizes = layer.net.sizes().to_vec();
            layer.net = Mlp::new(&sizes, OutputInit::Zero, rng);
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn split(&self) -> usize {
        self.d
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer] {
        &mut self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.net.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.net.params_mut())
    }

    fn shift_scale(&self, layer: &CouplingLayer, cond: &Tensor) -> Result<(Tensor, Tensor)> {
        let k = self.n - self.d;
        let st = layer.net.forward(cond)?;
        Ok((st.slice_cols(0, k)?, st.slice_cols(k, 2 * k)?))
    }

    /// Pushes a `[batch, n]` prior sample through the flow. Returns the
    /// cube points and per-row log|det ∂y/∂z|.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (batch, n) = z.dims2("flow_forward")?;
        if n != self.n {
            return Err(Error::SizeMismatch { expected: self.n, actual: n });
        }
        let mut x = z.clone();
        let mut log_det = vec![0.0; batch];
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = swap(&x)?;
            }
            let cond = x.slice_cols(0, self.d)?;
            let (s, t) = self.shift_scale(layer, &cond)?;
            let moved = x
                .slice_cols(self.d, self.n)?
                .zip_with(&s.map(f64::exp), "coupling", |a, b| a * b)?
                .zip_with(&t, "coupling", |a, b| a + b)?;
            for (ld, row) in log_det.iter_mut().zip(s.data().chunks_exact(self.n - self.d)) {
                *ld += row.iter().sum::<f64>();
            }
            x = cond.concat_cols(&moved)?;
        }
        // undo the accumulated swaps so coordinate i of y belongs to spin i
        for _ in 1..self.layers.len() {
            x = unswap(&x)?;
        }
        for (ld, row) in log_det.iter_mut().zip(x.data().chunks_exact(self.n)) {
            *ld += row.iter().map(|&v| log_tanh_jacobian(v)).sum::<f64>();
        }
        Ok((x.map(f64::tanh), log_det))
    }

    /// Exact inverse of [`FlowModel::forward`] for points in the open cube.
    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        let (_, n) = y.dims2("flow_inverse")?;
        if n != self.n {
            return Err(Error::SizeMismatch { expected: self.n, actual: n });
        }
        check_cube(y)?;
        let mut x = y.map(|v| v.clamp(-CUBE_CLAMP, CUBE_CLAMP).atanh());
        for _ in 1..self.layers.len() {
            x = swap(&x)?;
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cond = x.slice_cols(0, self.d)?;
            let (s, t) = self.shift_scale(layer, &cond)?;
            let restored = x
                .slice_cols(self.d, self.n)?
                .zip_with(&t, "coupling", |a, b| a - b)?
                .zip_with(&s.map(|v| (-v).exp()), "coupling", |a, b| a * b)?;
            x = cond.concat_cols(&restored)?;
            if i > 0 {
                x = unswap(&x)?;
            }
        }
        Ok(x)
    }

    /// log p_Y(y) for each row of `y`.
    pub fn posterior_logprob(&self, prior: &Prior, y: &Tensor) -> Result<Vec<f64>> {
        let z = self.inverse(y)?;
        let (_, log_det) = self.forward(&z)?;
        Ok(z.data()
            .chunks_exact(self.n)
            .zip(log_det)
            .map(|(row, ld)| prior.logprob(row) - ld)
            .collect())
    }

    /// Recorded version of [`FlowModel::posterior_logprob`]: `y` enters as a
    /// constant, the coupling parameters `params` (from [`FlowModel::bind`])
    /// carry gradients. Output has shape `[batch, 1]`.
    pub fn posterior_logprob_on<'t>(&self, params: &[Var<'t>], prior: &Prior, y: &Tensor) -> Result<Var<'t>> {
        let (_, n) = y.dims2("posterior_logprob")?;
        if n != self.n {
            return Err(Error::SizeMismatch { expected: self.n, actual: n });
        }
        check_cube(y)?;
        let tape = params.first().map(|p| p.tape()).ok_or_else(|| Error::Config("flow has no parameters".into()))?;
        let pre_tanh = y.map(|v| v.clamp(-CUBE_CLAMP, CUBE_CLAMP).atanh());
        // tanh Jacobian depends only on y, so it is a constant here
        let squash: Vec<f64> = pre_tanh
            .data()
            .chunks_exact(self.n)
            .map(|row| row.iter().map(|&v| log_tanh_jacobian(v)).sum())
            .collect();
        let squash = tape.leaf(Tensor::column(squash));

        let k = self.n - self.d;
        let per_layer = params.len() / self.layers.len();
        let mut x = tape.leaf(pre_tanh);
        for _ in 1..self.layers.len() {
            x = swap_on(x, self.n)?;
        }
        let mut log_det: Option<Var<'t>> = None;
        for (i, p) in params.chunks(per_layer).enumerate().rev() {
            let cond = x.slice_cols(0, self.d)?;
            let st = Mlp::forward_on(p, cond)?;
            let s = st.slice_cols(0, k)?;
            let t = st.slice_cols(k, 2 * k)?;
            let restored = x.slice_cols(self.d, self.n)?.sub(t)?.mul(s.neg().exp())?;
            x = cond.concat_cols(restored)?;
            if i > 0 {
                x = unswap_on(x, self.n)?;
            }
            let layer_det = s.sum_axis(1)?;
            log_det = Some(match log_det {
                Some(acc) => acc.add(layer_det)?,
                None => layer_det,
            });
        }
        let mut total = prior.logprob_on(x)?.sub(squash)?;
        if let Some(ld) = log_det {
            total = total.sub(ld)?;
        }
        Ok(total)
    }

    /// Records every coupling parameter on the tape, layer by layer.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|l| l.net.bind(tape)).collect()
    }
}
