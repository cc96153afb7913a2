//! Real-valued neural quantum state ψ_θ(x) and its subspace energy.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{SparseMatrix, Tape, Tensor, Var};
use crate::nn::{Mlp, OutputInit};
use crate::spin::{subspace_hamiltonian_sparse, InteractionGraph, Subspace};
use crate::{Error, Result};

pub const DEFAULT_HIDDEN: [usize; 4] = [512, 512, 512, 512];

/// Squared norms below this count as a vanishing amplitude vector.
pub const MIN_NORM_SQUARED: f64 = 1e-30;

/// Dense network from ±1 spins to an amplitude in (−1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct NqsModel {
    pub net: Mlp,
}

/// `[k, n]` batch of ±1 spin encodings.
pub fn encode(s: &Subspace) -> Result<Tensor> {
    let n = s.configs().first().ok_or(Error::EmptySubspace)?.len();
    let data = s.configs().iter().flat_map(|c| c.to_signs()).collect();
    Tensor::new([s.len(), n], data)
}

impl NqsModel {
    pub fn new(n: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut sizes = vec![n];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { net: Mlp::new(&sizes, OutputInit::FanIn, rng) }
    }

    pub fn with_defaults(n: usize, rng: &mut impl Rng) -> Self {
        Self::new(n, &DEFAULT_HIDDEN, rng)
    }

    pub fn dim(&self) -> usize {
        self.net.sizes()[0]
    }

    pub fn amplitudes(&self, s: &Subspace) -> Result<Vec<f64>> {
        Ok(self.net.forward(&encode(s)?)?.into_data())
    }

    /// Energy of the current amplitudes on `s` without recording.
    pub fn variational_energy(&self, s: &Subspace, g: &InteractionGraph) -> Result<f64> {
        let h = subspace_hamiltonian_sparse(s, g)?;
        let psi = Tensor::column(self.amplitudes(s)?);
        let norm2 = psi.norm_squared();
        if norm2 < MIN_NORM_SQUARED {
            return Err(Error::ZeroNorm);
        }
        let hpsi = h.matmul(&psi)?;
        Ok(psi.data().iter().zip(hpsi.data()).map(|(a, b)| a * b).sum::<f64>() / norm2)
    }
}

/// p_θ(x) = ψ(x)² / Σ ψ².
pub fn target_probs(amps: &[f64]) -> Result<Vec<f64>> {
    let norm2: f64 = amps.iter().map(|a| a * a).sum();
    if norm2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(amps.iter().map(|a| a * a / norm2).collect())
}

/// Recorded pieces of one subspace energy evaluation.
pub struct EnergyOnTape<'t> {
    pub energy: Var<'t>,
    pub amplitudes: Vec<f64>,
}

/// Rayleigh quotient ψᵀHψ/ψᵀψ over `s`, recorded so ∂E/∂θ is available.
/// `params` come from binding the model's network to the tape.
pub fn variational_energy_on<'t>(params: &[Var<'t>], inputs: &Tensor, h: &Rc<SparseMatrix>) -> Result<EnergyOnTape<'t>> {
    let tape = params.first().map(|p| p.tape()).ok_or_else(|| Error::Config("network has no parameters".into()))?;
    let psi = Mlp::forward_on(params, tape.leaf(inputs.clone()))?;
    let amplitudes = psi.value().data().to_vec();
    if amplitudes.iter().map(|a| a * a).sum::<f64>() < MIN_NORM_SQUARED {
        return Err(Error::ZeroNorm);
    }
    let hpsi = psi.sparse_lmul(h)?;
    let num = psi.mul(hpsi)?.sum();
    let den = psi.mul(psi)?.sum();
    Ok(EnergyOnTape { energy: num.div(den)?, amplitudes })
}

impl NqsModel {
    /// Energy and gradient with respect to every network parameter.
    pub fn energy_and_grad(&self, s: &Subspace, g: &InteractionGraph) -> Result<(f64, Vec<Tensor>)> {
        let h = Rc::new(subspace_hamiltonian_sparse(s, g)?);
        let inputs = encode(s)?;
        let tape = Tape::new();
        let params = self.net.bind(&tape);
        let e = variational_energy_on(&params, &inputs, &h)?;
        let mut grads = tape.backward(e.energy)?;
        let energy = e.energy.item();
        Ok((energy, params.iter().map(|p| grads.take(*p)).collect()))
    }
}
