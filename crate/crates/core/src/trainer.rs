//! Coupled flow/amplitude training, the uniqueness stopping rule and the
//! repeated-subspace inference protocol.

use std::io::Write;
use std::rc::Rc;

use crate::autodiff::{clip_gradient_norm, Adam, PlateauScheduler, Tape, Tensor, Var};
use crate::flow::{FlowModel, Prior};
use crate::nqs::{self, target_probs, NqsModel};
use crate::rng::{self, Rng};
use crate::sampler::{draw_subspace, log_region_probs_on, RegionSpec, SampleSet};
use crate::spin::{subspace_hamiltonian_sparse, InteractionGraph, Subspace};
use crate::{Error, Result};

/// Default |S|: 150 at N = 10, 5000 otherwise.
pub fn default_subspace_size(n: usize) -> usize {
    if n == 10 {
        150
    } else {
        5000
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n: usize,
    pub l: usize,
    pub v: f64,
    pub subspace_size: usize,
    pub batch_subspaces: usize,
    pub n_mc: usize,
    pub flow_lr: f64,
    pub nqs_lr: f64,
    pub uniqueness_threshold: f64,
    pub seed: u64,
    pub max_updates: usize,
    pub grad_clip: f64,
    pub flow_layers: usize,
    pub flow_hidden: Vec<usize>,
    pub nqs_hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn new(n: usize, l: usize, v: f64) -> Self {
        Self {
            n,
            l,
            v,
            subspace_size: default_subspace_size(n),
            batch_subspaces: 30,
            n_mc: 25,
            flow_lr: 1e-4,
            nqs_lr: 1e-4,
            uniqueness_threshold: 0.9,
            seed: 0,
            max_updates: 5000,
            grad_clip: 1000.0,
            flow_layers: crate::flow::DEFAULT_LAYERS,
            flow_hidden: crate::flow::DEFAULT_HIDDEN.to_vec(),
            nqs_hidden: nqs::DEFAULT_HIDDEN.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("subspace_size", self.subspace_size),
            ("batch_subspaces", self.batch_subspaces),
            ("n_mc", self.n_mc),
            ("max_updates", self.max_updates),
            ("flow_layers", self.flow_layers),
        ];
        for (name, c) in counts {
            if c == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.uniqueness_threshold > 0.0 && self.uniqueness_threshold < 1.0) {
            return Err(Error::Config(format!("uniqueness_threshold must lie in (0, 1), got {}", self.uniqueness_threshold)));
        }
        for (name, x) in [("flow_lr", self.flow_lr), ("nqs_lr", self.nqs_lr), ("grad_clip", self.grad_clip)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {x}")));
            }
        }
        if self.flow_hidden.contains(&0) || self.nqs_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        InteractionGraph::ring(self.n, self.l, self.v)?;
        Ok(())
    }

    pub fn graph(&self) -> Result<InteractionGraph> {
        InteractionGraph::ring(self.n, self.l, self.v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferConfig {
    pub iterations: usize,
    pub nqs_lr: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub n_repeats: usize,
    pub subspace_size: usize,
    pub nqs_hidden: Vec<usize>,
    pub seed: u64,
}

impl InferConfig {
    pub fn new(n: usize) -> Self {
        Self {
            iterations: 2000,
            nqs_lr: 1e-3,
            plateau_factor: 0.5,
            plateau_patience: 20,
            n_repeats: 20,
            subspace_size: default_subspace_size(n),
            nqs_hidden: nqs::DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.n_repeats == 0 || self.subspace_size == 0 {
            return Err(Error::Config("iterations, n_repeats and subspace_size must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor)));
        }
        if !(self.nqs_lr > 0.0 && self.nqs_lr.is_finite()) {
            return Err(Error::Config(format!("nqs_lr must be positive, got {}", self.nqs_lr)));
        }
        if self.nqs_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

// Stream labels keep every random draw of a run on its own generator.
const STREAM_INIT: u64 = 0;
const STREAM_REINIT: u64 = 1;
const STREAM_DRAW: u64 = 2;
const STREAM_MC: u64 = 3;
const STREAM_INFER: u64 = 4;

fn stream(kind: u64, outer: u64, inner: u64) -> u64 {
    (kind << 56) | (outer << 20) | inner
}

/// Order-preserving map; parallel when the `parallel` feature is on.
fn ordered_map<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// −(|E|/k) Σ p_θ(x) log p̂(x).
pub fn nf_loss(e_psi: f64, p_theta: &[f64], p_hat: &[f64]) -> Result<f64> {
    if p_theta.len() != p_hat.len() {
        return Err(Error::SizeMismatch { expected: p_theta.len(), actual: p_hat.len() });
    }
    if let Some(&bad) = p_hat.iter().find(|&&p| !(p > 0.0)) {
        return Err(Error::NonPositiveProbability(bad));
    }
    let k = p_theta.len() as f64;
    Ok(-(e_psi.abs() / k) * p_theta.iter().zip(p_hat).map(|(p, q)| p * q.ln()).sum::<f64>())
}

/// Recorded [`nf_loss`] taking log p̂ as a `[k, 1]` value. `e_psi` and
/// `p_theta` enter as constants, so gradients reach only the flow.
pub fn nf_loss_on<'t>(e_psi: f64, p_theta: &[f64], log_p_hat: Var<'t>) -> Result<Var<'t>> {
    let k = p_theta.len();
    if log_p_hat.shape() != [k, 1] {
        return Err(Error::Shape { op: "nf_loss", lhs: vec![k, 1], rhs: log_p_hat.shape() });
    }
    if let Some(&bad) = log_p_hat.value().data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonPositiveProbability(bad.exp()));
    }
    let weights = log_p_hat.tape().leaf(Tensor::column(p_theta.to_vec()));
    Ok(log_p_hat.mul(weights)?.sum().scale(-e_psi.abs() / k as f64))
}

/// One subspace's share of the batch objective.
pub struct SubspaceTerm {
    pub energy: f64,
    pub nf_loss: f64,
    pub flow_grads: Vec<Tensor>,
    pub nqs_grads: Vec<Tensor>,
}

/// nf_loss + E for one subspace, with gradients of both terms.
pub fn subspace_term(
    flow: &FlowModel,
    nqs: &NqsModel,
    prior: &Prior,
    g: &InteractionGraph,
    s: &Subspace,
    spec: &RegionSpec,
    rng: &mut Rng,
) -> Result<SubspaceTerm> {
    let h = Rc::new(subspace_hamiltonian_sparse(s, g)?);
    let inputs = nqs::encode(s)?;
    let tape = Tape::new();
    let nqs_params = nqs.net.bind(&tape);
    let flow_params = flow.bind(&tape);
    let e = nqs::variational_energy_on(&nqs_params, &inputs, &h)?;
    let energy = e.energy.item();
    let p_theta = target_probs(&e.amplitudes)?;
    let log_p_hat = log_region_probs_on(flow, &flow_params, prior, s, spec, rng)?;
    let nf = nf_loss_on(energy, &p_theta, log_p_hat)?;
    let nf_value = nf.item();
    let mut grads = tape.backward(nf.add(e.energy)?)?;
    Ok(SubspaceTerm {
        energy,
        nf_loss: nf_value,
        flow_grads: flow_params.iter().map(|p| grads.take(*p)).collect(),
        nqs_grads: nqs_params.iter().map(|p| grads.take(*p)).collect(),
    })
}

/// Mean of the per-subspace objectives and their gradients.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    pub mean_energy: f64,
    pub mean_nf_loss: f64,
    pub flow_grads: Vec<Tensor>,
    pub nqs_grads: Vec<Tensor>,
}

fn accumulate(acc: &mut Vec<Tensor>, add: Vec<Tensor>, weight: f64) {
    if acc.is_empty() {
        *acc = add.into_iter().map(|t| t.map(|x| x * weight)).collect();
        return;
    }
    for (a, b) in acc.iter_mut().zip(add) {
        a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += weight * y);
    }
}

// Bounds how many per-subspace gradient sets are alive at once.
const CHUNK: usize = 8;

/// Averaged objective over `subspaces`. Smoothing points for subspace `b`
/// come from `rngs(b)`; contributions are summed in subspace order, so the
/// result does not depend on thread scheduling.
pub fn batch_loss(
    flow: &FlowModel,
    nqs: &NqsModel,
    prior: &Prior,
    g: &InteractionGraph,
    subspaces: &[&Subspace],
    spec: &RegionSpec,
    rngs: impl Fn(usize) -> Rng + Sync + Send,
) -> Result<BatchLoss> {
    if subspaces.is_empty() {
        return Err(Error::Config("batch needs at least one subspace".into()));
    }
    let w = 1.0 / subspaces.len() as f64;
    let mut out = BatchLoss { loss: 0.0, mean_energy: 0.0, mean_nf_loss: 0.0, flow_grads: Vec::new(), nqs_grads: Vec::new() };
    for start in (0..subspaces.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(subspaces.len());
        let terms = ordered_map(end - start, |i| {
            let b = start + i;
            subspace_term(flow, nqs, prior, g, subspaces[b], spec, &mut rngs(b))
        })?;
        for t in terms {
            out.mean_energy += w * t.energy;
            out.mean_nf_loss += w * t.nf_loss;
            accumulate(&mut out.flow_grads, t.flow_grads, w);
            accumulate(&mut out.nqs_grads, t.nqs_grads, w);
        }
    }
    out.loss = out.mean_energy + out.mean_nf_loss;
    Ok(out)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub update: usize,
    pub mean_energy: f64,
    pub mean_unique_fraction: f64,
    pub flow_loss: f64,
}

pub const HISTORY_HEADER: &str = "update,mean_energy,mean_unique_fraction,flow_loss";

pub fn write_history(rows: &[HistoryRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{HISTORY_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e}", r.update, r.mean_energy, r.mean_unique_fraction, r.flow_loss)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub flow: FlowModel,
    pub nqs: NqsModel,
    pub history: Vec<HistoryRow>,
    pub converged: bool,
    pub updates: usize,
    /// Times the amplitude network collapsed to zero and was redrawn.
    pub nqs_reinits: usize,
}

fn set_params<'a>(dst: impl Iterator<Item = &'a mut Tensor>, src: Vec<Tensor>) {
    for (d, s) in dst.zip(src) {
        *d = s;
    }
}

const MAX_REINITS: usize = 100;

/// Runs the coupled training loop until every subspace of an update has
/// fewer than `uniqueness_threshold · |S|` distinct configurations, or
/// `max_updates` updates have been made.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// [`train`] with a callback after every update.
pub fn train_with(cfg: &TrainConfig, mut on_update: impl FnMut(&HistoryRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let g = cfg.graph()?;
    let prior = Prior::new(cfg.n);
    let spec = RegionSpec::with_n_mc(cfg.n_mc);
    let mut init = rng::substream(cfg.seed, stream(STREAM_INIT, 0, 0));
    let mut flow = FlowModel::new(cfg.n, cfg.flow_layers, &cfg.flow_hidden, &mut init)?;
    let mut nqs = NqsModel::new(cfg.n, &cfg.nqs_hidden, &mut init);
    let mut flow_opt = Adam::new(cfg.flow_lr);
    let mut nqs_opt = Adam::new(cfg.nqs_lr);
    let mut history = Vec::new();
    let mut converged = false;
    let mut reinits = 0;

    let limit = (cfg.uniqueness_threshold * cfg.subspace_size as f64).ceil() as usize;
    for update in 0..cfg.max_updates {
        let u = update as u64;
        let sets: Vec<SampleSet> = ordered_map(cfg.batch_subspaces, |b| {
            let mut r = rng::substream(cfg.seed, stream(STREAM_DRAW, u, b as u64));
            draw_subspace(&flow, &prior, cfg.subspace_size, &mut r)
        })?;
        let subspaces: Vec<&Subspace> = sets.iter().map(|s| &s.subspace).collect();
        let batch = loop {
            let attempt = batch_loss(&flow, &nqs, &prior, &g, &subspaces, &spec, |b| {
                rng::substream(cfg.seed, stream(STREAM_MC, u, b as u64))
            });
            match attempt {
                Err(Error::ZeroNorm) if reinits < MAX_REINITS => {
                    reinits += 1;
                    let mut r = rng::substream(cfg.seed, stream(STREAM_REINIT, reinits as u64, 0));
                    nqs = NqsModel::new(cfg.n, &cfg.nqs_hidden, &mut r);
                    nqs_opt = Adam::new(cfg.nqs_lr);
                }
                other => break other?,
            }
        };

        let row = HistoryRow {
            update,
            mean_energy: batch.mean_energy,
            mean_unique_fraction: sets.iter().map(SampleSet::unique_fraction).sum::<f64>() / sets.len() as f64,
            flow_loss: batch.mean_nf_loss,
        };
        on_update(&row);
        history.push(row);
        // the stopping rule looks at the subspaces just drawn, before stepping
        if sets.iter().all(|s| s.unique_count() < limit) {
            converged = true;
            break;
        }

        let mut fp: Vec<Tensor> = flow.params().cloned().collect();
        flow_opt.step(&mut fp, &batch.flow_grads)?;
        set_params(flow.params_mut(), fp);
        let mut ng = batch.nqs_grads;
        clip_gradient_norm(&mut ng, cfg.grad_clip);
        nqs_opt.step(nqs.net.params_mut(), &ng)?;
    }
    let updates = history.len();
    Ok(TrainOutcome { flow, nqs, history, converged, updates, nqs_reinits: reinits })
}

/// Result of optimising one freshly initialised amplitude network on one
/// drawn subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct RepeatResult {
    pub energy: f64,
    pub subspace_size: usize,
    /// A single-configuration subspace: the energy is its diagonal element.
    pub degenerate: bool,
    pub lr_decays: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferOutcome {
    pub mean: f64,
    /// Population standard deviation over repeats (0 for a single repeat).
    pub std: f64,
    pub repeats: Vec<RepeatResult>,
}

/// Minimises the subspace energy of a fresh network from `nqs_rng` with
/// Adam and plateau decay. Returns the energy after the last step.
pub fn optimize_on_subspace(
    s: &Subspace,
    g: &InteractionGraph,
    cfg: &InferConfig,
    nqs_rng: &mut Rng,
) -> Result<RepeatResult> {
    let n = g.n();
    if s.len() == 1 {
        let x = s.configs()[0];
        return Ok(RepeatResult { energy: g.diagonal_element(x)?, subspace_size: 1, degenerate: true, lr_decays: 0 });
    }
    let mut model = NqsModel::new(n, &cfg.nqs_hidden, nqs_rng);
    let mut opt = Adam::new(cfg.nqs_lr);
    let mut plateau = PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience);
    for _ in 0..cfg.iterations {
        let (energy, grads) = match model.energy_and_grad(s, g) {
            Err(Error::ZeroNorm) => {
                model = NqsModel::new(n, &cfg.nqs_hidden, nqs_rng);
                opt = Adam::new(cfg.nqs_lr);
                continue;
            }
            other => other?,
        };
        opt.lr = plateau.observe(energy, opt.lr);
        opt.step(model.net.params_mut(), &grads)?;
    }
    let energy = model.variational_energy(s, g)?;
    Ok(RepeatResult { energy, subspace_size: s.len(), degenerate: false, lr_decays: plateau.decays() })
}

/// Repeats {draw a subspace from `flow`, fit a fresh network} and reports
/// the mean and spread of the final energies.
pub fn infer(flow: &FlowModel, g: &InteractionGraph, cfg: &InferConfig) -> Result<InferOutcome> {
    cfg.validate()?;
    if flow.dim() != g.n() {
        return Err(Error::SizeMismatch { expected: g.n(), actual: flow.dim() });
    }
    let prior = Prior::new(g.n());
    let repeats = ordered_map(cfg.n_repeats, |r| {
        let mut draw = rng::substream(cfg.seed, stream(STREAM_INFER, r as u64, 0));
        let mut init = rng::substream(cfg.seed, stream(STREAM_INFER, r as u64, 1));
        let set = draw_subspace(flow, &prior, cfg.subspace_size, &mut draw)?;
        optimize_on_subspace(&set.subspace, g, cfg, &mut init)
    })?;
    let k = repeats.len() as f64;
    let mean = repeats.iter().map(|r| r.energy).sum::<f64>() / k;
    let var = repeats.iter().map(|r| (r.energy - mean).powi(2)).sum::<f64>() / k;
    Ok(InferOutcome { mean, std: var.sqrt(), repeats })
}
