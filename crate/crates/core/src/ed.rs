//! Exact ground states of the full 2^n Hamiltonian: a dense symmetric
//! eigensolve for small chains and matrix-free Lanczos up to 20 spins.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::spin::InteractionGraph;
use crate::{Error, Result};

pub const DENSE_LIMIT: usize = 14;
pub const LANCZOS_LIMIT: usize = 20;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Krylov dimension before a restart from the current Ritz vector.
const KRYLOV_CAP: usize = 120;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroundStateResult {
    pub energy: f64,
    /// ‖Hψ − Eψ‖ / ‖ψ‖
    pub residual_norm: f64,
    pub iterations: usize,
    /// Normalised ground-state vector indexed by the configuration bits.
    #[serde(skip)]
    pub state: Vec<f64>,
}

/// Matrix-free Hamiltonian on the full basis: cached diagonal plus bit flips.
pub struct SpinOperator {
    n: usize,
    diag: Vec<f64>,
}

impl SpinOperator {
    pub fn new(g: &InteractionGraph) -> Result<Self> {
        let n = g.n();
        if n > LANCZOS_LIMIT {
            return Err(Error::TooLarge { n, limit: LANCZOS_LIMIT, mode: "matrix-free" });
        }
        let diag = (0..1u64 << n).map(|b| g.diagonal_unchecked(b)).collect();
        Ok(Self { n, diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// out = H x
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(out.len(), self.dim());
        for (b, o) in out.iter_mut().enumerate() {
            let mut acc = self.diag[b] * x[b];
            for i in 0..self.n {
                acc -= x[b ^ (1 << i)];
            }
            *o = acc;
        }
    }

    fn residual(&self, psi: &[f64], energy: f64) -> f64 {
        let mut h = vec![0.0; psi.len()];
        self.apply(psi, &mut h);
        let r2: f64 = h.iter().zip(psi).map(|(hp, p)| (hp - energy * p).powi(2)).sum();
        let n2: f64 = psi.iter().map(|p| p * p).sum();
        (r2 / n2).sqrt()
    }
}

/// Explicit 2^n × 2^n Hamiltonian.
pub fn dense_hamiltonian(g: &InteractionGraph) -> Result<DMatrix<f64>> {
    let n = g.n();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT, mode: "dense" });
    }
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    for b in 0..dim {
        h[(b, b)] = g.diagonal_unchecked(b as u64);
        for i in 0..n {
            h[(b, b ^ (1 << i))] = -1.0;
        }
    }
    Ok(h)
}

pub fn dense_ground_state(g: &InteractionGraph) -> Result<GroundStateResult> {
    let h = dense_hamiltonian(g)?;
    let eig = h.symmetric_eigen();
    let (imin, energy) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, e)| if e < best.1 { (i, e) } else { best });
    let state: Vec<f64> = eig.eigenvectors.column(imin).iter().copied().collect();
    let residual_norm = SpinOperator::new(g)?.residual(&state, energy);
    Ok(GroundStateResult { energy, residual_norm, iterations: 1, state })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Lowest eigenpair of a symmetric tridiagonal matrix.
fn tridiagonal_min(alpha: &[f64], beta: &[f64]) -> (f64, DVector<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let (imin, theta) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, e)| if e < best.1 { (i, e) } else { best });
    (theta, eig.eigenvectors.column(imin).into_owned())
}

/// Lanczos with full reorthogonalisation, restarted from the Ritz vector
/// whenever the Krylov basis reaches `KRYLOV_CAP`.
pub fn lanczos_ground_state(g: &InteractionGraph, tol: f64, max_iter: usize, seed: u64) -> Result<GroundStateResult> {
    let op = SpinOperator::new(g)?;
    let dim = op.dim();
    let mut rng = rng::seeded(seed);
    let mut start: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dot(&start, &start).sqrt();
    start.iter_mut().for_each(|x| *x /= norm);

    let mut iterations = 0;
    let mut best = (f64::INFINITY, f64::INFINITY, start.clone());
    loop {
        let mut basis: Vec<Vec<f64>> = vec![start];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        let (theta, y) = loop {
            let j = basis.len() - 1;
            op.apply(&basis[j], &mut w);
            iterations += 1;
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            axpy(-a, &basis[j], &mut w);
            if j > 0 {
                axpy(-beta[j - 1], &basis[j - 1], &mut w);
            }
            // two passes of Gram-Schmidt keep the basis orthogonal to working precision
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(&w, v);
                    axpy(-c, v, &mut w);
                }
            }
            let b = dot(&w, &w).sqrt();
            let (theta, y) = tridiagonal_min(&alpha, &beta);
            let estimate = b * y[y.len() - 1].abs();
            if estimate < 0.1 * tol
                || b < 1e-14
                || basis.len() == dim
                || basis.len() == KRYLOV_CAP
                || iterations >= max_iter
            {
                break (theta, y);
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        };

        let mut psi = vec![0.0; dim];
        for (coef, v) in y.iter().zip(&basis) {
            axpy(*coef, v, &mut psi);
        }
        let norm = dot(&psi, &psi).sqrt();
        psi.iter_mut().for_each(|x| *x /= norm);
        let residual_norm = op.residual(&psi, theta);
        if residual_norm <= tol {
            return Ok(GroundStateResult { energy: theta, residual_norm, iterations, state: psi });
        }
        if residual_norm < best.1 {
            best = (theta, residual_norm, psi.clone());
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged { energy: best.0, residual_norm: best.1, iterations });
        }
        start = psi;
    }
}

/// Spin count up to which [`ground_state`] diagonalises densely.
pub const AUTO_DENSE_MAX: usize = 10;

/// Dense for small chains, Lanczos with default settings above that.
pub fn ground_state(g: &InteractionGraph, seed: u64) -> Result<GroundStateResult> {
    if g.n() <= AUTO_DENSE_MAX {
        dense_ground_state(g)
    } else {
        lanczos_ground_state(g, DEFAULT_TOL, DEFAULT_MAX_ITER, seed)
    }
}

/// (e_method − e_true) / |e_true| × 100
pub fn percentage_error(e_method: f64, e_true: f64) -> Result<f64> {
    if e_true == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((e_method - e_true) / e_true.abs() * 100.0)
}
