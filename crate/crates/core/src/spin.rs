//! Transverse-field Ising Hamiltonian on an arbitrary interaction graph,
//!
//! H = -V Σ_{i,j ∈ E} σᶻᵢ σᶻⱼ - Σᵢ σˣᵢ
//!
//! Spins are stored as bits (1 = up) and mapped to ±1 only when evaluated.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::SparseMatrix;
use crate::{Error, Result};

pub const MAX_SPINS: usize = 64;

/// One basis state of `n` spins packed into a `u64`; bit `i` is spin `i`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpinConfig {
    bits: u64,
    n: u8,
}

fn mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl SpinConfig {
    pub fn new(bits: u64, n: usize) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidSpinCount(n));
        }
        Ok(Self { bits: bits & mask(n), n: n as u8 })
    }

    pub fn all_up(n: usize) -> Result<Self> {
        Self::new(u64::MAX, n)
    }

    pub fn all_down(n: usize) -> Result<Self> {
        Self::new(0, n)
    }

    /// Builds a configuration from up/down flags, index 0 first.
    pub fn from_spins(up: &[bool]) -> Result<Self> {
        let bits = up
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &u)| if u { acc | (1 << i) } else { acc });
        Self::new(bits, up.len())
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.n as usize
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_up(&self, i: usize) -> bool {
        (self.bits >> i) & 1 == 1
    }

    /// Eigenvalue of σᶻ on site `i`.
    pub fn sz(&self, i: usize) -> f64 {
        if self.is_up(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn flip(&self, i: usize) -> Self {
        Self { bits: self.bits ^ (1 << i), n: self.n }
    }

    /// Spins as ±1 values, the encoding fed to the networks.
    pub fn to_signs(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.sz(i)).collect()
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len()).map(|i| if self.is_up(i) { '↑' } else { '↓' }).collect();
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    v: f64,
}

impl InteractionGraph {
    /// General graph; edges are normalised to `(min, max)` and deduplicated.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, v: f64) -> Result<Self> {
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidSpinCount(n));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidEdge(i, j));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set.into_iter().collect(), v })
    }

    /// Periodic chain where every site couples to all sites within ring
    /// distance `l`. Antipodal pairs (even `n`, `l = n/2`) appear once.
    pub fn ring(n: usize, l: usize, v: f64) -> Result<Self> {
        if n < 2 || n > MAX_SPINS {
            return Err(Error::InvalidSpinCount(n));
        }
        if l < 1 || l > n / 2 {
            return Err(Error::InvalidInteractionLength { n, l });
        }
        let pairs = (0..n).flat_map(|i| (1..=l).map(move |d| (i, (i + d) % n)));
        Self::new(n, pairs, v)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coupling(&self) -> f64 {
        self.v
    }

    /// Energy of the two fully aligned states, `-v |E|`.
    pub fn aligned_energy(&self) -> f64 {
        -self.v * self.edges.len() as f64
    }

    /// ⟨x|H|x⟩ = -v Σ sᵢ sⱼ.
    pub fn diagonal_element(&self, x: SpinConfig) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::SizeMismatch { expected: self.n, actual: x.len() });
        }
        Ok(self.diagonal_unchecked(x.bits()))
    }

    /// Diagonal element for a raw bit pattern of length `self.n`.
    pub(crate) fn diagonal_unchecked(&self, bits: u64) -> f64 {
        // s_i s_j = +1 iff the bits agree
        let mut aligned = 0i64;
        for &(i, j) in &self.edges {
            if ((bits >> i) ^ (bits >> j)) & 1 == 0 {
                aligned += 1;
            } else {
                aligned -= 1;
            }
        }
        -self.v * aligned as f64
    }
}

/// The `n` single-spin-flip partners of `x`, each with matrix element -1.
pub fn offdiagonal_neighbors(x: SpinConfig) -> Vec<(SpinConfig, f64)> {
    (0..x.len()).map(|i| (x.flip(i), -1.0)).collect()
}

/// Ordered, duplicate-free set of configurations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Subspace {
    configs: Vec<SpinConfig>,
    index: HashMap<SpinConfig, usize>,
}

impl Subspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Collects configurations, keeping the first occurrence of each.
    pub fn from_configs(configs: impl IntoIterator<Item = SpinConfig>) -> Self {
        let mut s = Self::new();
        for c in configs {
            s.insert(c);
        }
        s
    }

    /// Full 2^n basis in binary order.
    pub fn full_basis(n: usize) -> Result<Self> {
        if n == 0 || n > 24 {
            return Err(Error::TooLarge { n, limit: 24, mode: "full-basis" });
        }
        (0..1u64 << n).map(|b| SpinConfig::new(b, n)).collect::<Result<Vec<_>>>().map(Self::from_configs)
    }

    /// Returns true if the configuration was new.
    pub fn insert(&mut self, c: SpinConfig) -> bool {
        if self.index.contains_key(&c) {
            return false;
        }
        self.index.insert(c, self.configs.len());
        self.configs.push(c);
        true
    }

    pub fn configs(&self) -> &[SpinConfig] {
        &self.configs
    }

    pub fn index_of(&self, c: &SpinConfig) -> Option<usize> {
        self.index.get(c).copied()
    }

    pub fn contains(&self, c: &SpinConfig) -> bool {
        self.index.contains_key(c)
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

/// Hamiltonian restricted to the span of `s`: H_sub[a][b] = ⟨x_a|H|x_b⟩.
pub fn subspace_hamiltonian(s: &Subspace, g: &InteractionGraph) -> Result<DMatrix<f64>> {
    if s.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let k = s.len();
    let mut h = DMatrix::zeros(k, k);
    for (a, &x) in s.configs().iter().enumerate() {
        h[(a, a)] = g.diagonal_element(x)?;
        for (y, amp) in offdiagonal_neighbors(x) {
            if let Some(b) = s.index_of(&y) {
                h[(a, b)] = amp;
                h[(b, a)] = amp;
            }
        }
    }
    Ok(h)
}

/// Same matrix as [`subspace_hamiltonian`] in sparse form: one diagonal
/// entry plus at most `n` flip partners per row, found by hash lookup.
pub fn subspace_hamiltonian_sparse(s: &Subspace, g: &InteractionGraph) -> Result<SparseMatrix> {
    if s.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let mut triplets = Vec::with_capacity(s.len() * (g.n() + 1));
    for (a, &x) in s.configs().iter().enumerate() {
        triplets.push((a, a, g.diagonal_element(x)?));
        for (y, amp) in offdiagonal_neighbors(x) {
            if let Some(b) = s.index_of(&y) {
                triplets.push((a, b, amp));
            }
        }
    }
    SparseMatrix::from_triplets(s.len(), s.len(), triplets)
}

/// Rayleigh quotient ψᵀHψ / ψᵀψ.
pub fn energy_expectation(h_sub: &DMatrix<f64>, amplitudes: &[f64]) -> Result<f64> {
    let k = amplitudes.len();
    if h_sub.nrows() != k || h_sub.ncols() != k {
        return Err(Error::Shape { op: "energy_expectation", lhs: vec![h_sub.nrows(), h_sub.ncols()], rhs: vec![k] });
    }
    let norm2: f64 = amplitudes.iter().map(|a| a * a).sum();
    if norm2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let mut num = 0.0;
    for a in 0..k {
        let row: f64 = (0..k).map(|b| h_sub[(a, b)] * amplitudes[b]).sum();
        num += amplitudes[a] * row;
    }
    Ok(num / norm2)
}
