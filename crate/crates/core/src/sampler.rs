//! Orthant discretisation of the flow's cube-valued samples and the
//! Monte-Carlo estimate of each orthant's probability.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tensor, Var};
use crate::flow::{FlowModel, Prior};
use crate::spin::{SpinConfig, Subspace};
use crate::{Error, Result};

/// Gaussian smoothing points drawn around an orthant centre.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionSpec {
    /// Distance of the centre from every orthant face.
    pub offset: f64,
    pub sigma: f64,
    pub n_mc: usize,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self { offset: 0.5, sigma: 0.1, n_mc: 25 }
    }
}

impl RegionSpec {
    pub fn with_n_mc(n_mc: usize) -> Self {
        Self { n_mc, ..Self::default() }
    }

    /// Orthant centre: ±offset following the spins of `x`.
    pub fn center(&self, x: SpinConfig) -> Vec<f64> {
        (0..x.len()).map(|i| if x.is_up(i) { self.offset } else { -self.offset }).collect()
    }

    /// Each orthant of (−1, 1)^n has unit volume.
    pub fn volume(&self) -> f64 {
        1.0
    }
}

/// Nearest basis state: spin up iff the coordinate is non-negative.
pub fn discretize(y: &[f64]) -> Result<SpinConfig> {
    let up: Vec<bool> = y.iter().map(|&v| v >= 0.0).collect();
    SpinConfig::from_spins(&up)
}

#[derive(Clone, Debug)]
pub struct SampleSet {
    pub subspace: Subspace,
    pub raw_count: usize,
}

impl SampleSet {
    pub fn unique_count(&self) -> usize {
        self.subspace.len()
    }

    pub fn unique_fraction(&self) -> f64 {
        self.unique_count() as f64 / self.raw_count as f64
    }
}

/// Draws `target_size` flow samples, discretises them and keeps the
/// distinct configurations in first-seen order.
pub fn draw_subspace(flow: &FlowModel, prior: &Prior, target_size: usize, rng: &mut impl Rng) -> Result<SampleSet> {
    if target_size == 0 {
        return Err(Error::Config("subspace size must be positive".into()));
    }
    let z = prior.sample(target_size, rng);
    let (y, _) = flow.forward(&z)?;
    let configs = y.data().chunks_exact(flow.dim()).map(discretize).collect::<Result<Vec<_>>>()?;
    Ok(SampleSet { subspace: Subspace::from_configs(configs), raw_count: target_size })
}

/// `n_mc` isotropic Gaussian points around the centre of `x`'s orthant.
/// Points that leave the orthant (or the open cube) are redrawn.
pub fn region_mc_points(x: SpinConfig, spec: &RegionSpec, rng: &mut impl Rng) -> Tensor {
    let n = x.len();
    let center = spec.center(x);
    let mut data = Vec::with_capacity(spec.n_mc * n);
    let mut point = vec![0.0; n];
    for _ in 0..spec.n_mc {
        loop {
            for (p, c) in point.iter_mut().zip(&center) {
                let e: f64 = StandardNormal.sample(rng);
                *p = c + spec.sigma * e;
            }
            let inside = point.iter().zip(&center).all(|(p, c)| p.abs() < 1.0 && (*p >= 0.0) == (*c >= 0.0));
            if inside {
                break;
            }
        }
        data.extend_from_slice(&point);
    }
    Tensor::new([spec.n_mc, n], data).expect("shape matches data")
}

/// A normalised density on the cube, evaluated row-wise.
pub trait CubeDensity {
    fn log_density(&self, y: &Tensor) -> Result<Vec<f64>>;

    fn density(&self, y: &Tensor) -> Result<Vec<f64>> {
        Ok(self.log_density(y)?.into_iter().map(f64::exp).collect())
    }
}

/// The flow's posterior density p_Y.
pub struct FlowDensity<'a> {
    pub flow: &'a FlowModel,
    pub prior: &'a Prior,
}

impl CubeDensity for FlowDensity<'_> {
    fn log_density(&self, y: &Tensor) -> Result<Vec<f64>> {
        self.flow.posterior_logprob(self.prior, y)
    }
}

/// p̂(x) = Vol(R_x)/|M_x| · Σ_{y ∈ M_x} p(y).
pub fn mc_region_prob(density: &impl CubeDensity, x: SpinConfig, spec: &RegionSpec, rng: &mut impl Rng) -> Result<f64> {
    let points = region_mc_points(x, spec, rng);
    let values = density.density(&points)?;
    Ok(spec.volume() * values.iter().sum::<f64>() / spec.n_mc as f64)
}

/// Recorded log p̂ for every configuration of `subspace`, shape `[k, 1]`.
///
/// The mean over each region's points is taken in log space with the
/// row maximum factored out, so trained flows with sharp densities do not
/// overflow. Fresh smoothing points are drawn on every call.
pub fn log_region_probs_on<'t>(
    flow: &FlowModel,
    params: &[Var<'t>],
    prior: &Prior,
    subspace: &Subspace,
    spec: &RegionSpec,
    rng: &mut impl Rng,
) -> Result<Var<'t>> {
    if subspace.is_empty() {
        return Err(Error::EmptySubspace);
    }
    let k = subspace.len();
    let n = flow.dim();
    let mut data = Vec::with_capacity(k * spec.n_mc * n);
    for &x in subspace.configs() {
        data.extend_from_slice(region_mc_points(x, spec, rng).data());
    }
    let points = Tensor::new([k * spec.n_mc, n], data)?;
    let logp = flow.posterior_logprob_on(params, prior, &points)?.reshape([k, spec.n_mc])?;
    let row_max: Vec<f64> = {
        let v = logp.value();
        v.data().chunks_exact(spec.n_mc).map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    };
    let shift = logp.tape().leaf(Tensor::column(row_max));
    let mean = logp.sub(shift)?.exp().sum_axis(1)?.scale(spec.volume() / spec.n_mc as f64);
    mean.log().add(shift)
}
