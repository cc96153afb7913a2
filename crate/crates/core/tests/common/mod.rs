#![allow(dead_code)]

use nfqs::autodiff::{Tape, Tensor, Var};
use nfqs::flow::FlowModel;
use nfqs::nn::{Mlp, OutputInit};
use nfqs::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// Flow whose coupling outputs start at `scale` times the fan-in bound.
pub fn random_flow(n: usize, hidden: &[usize], scale: f64, seed: u64) -> FlowModel {
    let mut r = rng::seeded(seed);
    let d = n.div_ceil(2);
    let mut sizes = vec![d];
    sizes.extend_from_slice(hidden);
    sizes.push(2 * (n - d));
    let nets = (0..4).map(|_| Mlp::new(&sizes, OutputInit::Scaled(scale), &mut r)).collect();
    FlowModel::from_layers(n, nets).unwrap()
}

pub fn identity_flow(n: usize) -> FlowModel {
    FlowModel::new(n, 4, &[8], &mut rng::seeded(0)).unwrap()
}

pub fn normal_tensor(shape: [usize; 2], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let data = (0..shape[0] * shape[1]).map(|_| r.sample(StandardNormal)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Norm-wise relative error between the tape gradient of `f` at `x` and
/// central differences with step 1e-5.
pub fn fd_error(x: &Tensor, f: impl Fn(Var<'_>) -> Var<'_>) -> f64 {
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(xv);
    let analytic = tape.backward(y).unwrap().wrt(xv).clone();
    let eval = |t: Tensor| {
        let tape = Tape::new();
        f(tape.leaf(t)).item()
    };
    let h = 1e-5;
    let num: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (eval(plus) - eval(minus)) / (2.0 * h)
        })
        .collect();
    let diff = analytic.data().iter().zip(&num).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = num.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-3);
    diff / scale
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// Integral of the flow's posterior density over (−1, 1)² on a midpoint grid.
pub fn two_spin_mass(flow: &FlowModel, res: usize) -> f64 {
    let h = 2.0 / res as f64;
    let mut pts = Vec::with_capacity(2 * res * res);
    for i in 0..res {
        for j in 0..res {
            pts.extend([-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h]);
        }
    }
    let y = Tensor::new([res * res, 2], pts).unwrap();
    let prior = nfqs::flow::Prior::new(2);
    flow.posterior_logprob(&prior, &y).unwrap().iter().map(|l| l.exp()).sum::<f64>() * h * h
}

/// log|det J| of the flow at `z` from a central-difference Jacobian.
pub fn fd_log_det(flow: &FlowModel, z: &[f64]) -> f64 {
    let n = z.len();
    let at = |p: Vec<f64>| flow.forward(&Tensor::new([1, n], p).unwrap()).unwrap().0.data().to_vec();
    let h = 1e-6;
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = z.to_vec();
        plus[j] += h;
        let mut minus = z.to_vec();
        minus[j] -= h;
        let (yp, ym) = (at(plus), at(minus));
        for i in 0..n {
            jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

/// Sign-pattern histogram of `draws` flow samples over 2^n orthants.
pub fn orthant_counts(flow: &FlowModel, draws: usize, seed: u64) -> Vec<usize> {
    let n = flow.dim();
    let z = nfqs::flow::Prior::new(n).sample(draws, &mut rng::seeded(seed));
    let (y, _) = flow.forward(&z).unwrap();
    let mut counts = vec![0usize; 1 << n];
    for row in y.data().chunks(n) {
        let bits: usize = row.iter().enumerate().filter(|(_, v)| **v >= 0.0).map(|(i, _)| 1 << i).sum();
        counts[bits] += 1;
    }
    counts
}

pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let expected = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// 99th percentile of chi-square with 15 degrees of freedom.
pub const CHI2_15_P99: f64 = 30.57791416689249;
