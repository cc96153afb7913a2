//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export has a plain Rust twin returning `Result<_, String>` so the
//! numerics are testable natively.

use nalgebra::SymmetricEigen;
use nfqs::autodiff::Tensor;
use nfqs::ed;
use nfqs::flow::{FlowModel, Prior, DEFAULT_LAYERS};
use nfqs::nn::{Mlp, OutputInit};
use nfqs::rng;
use nfqs::spin::{subspace_hamiltonian, InteractionGraph, SpinConfig, Subspace};
use rand::seq::SliceRandom;
use wasm_bindgen::prelude::*;

/// Largest chain the page diagonalises.
pub const MAX_SPINS: usize = 14;
/// Largest chain for the subspace sweep (every subspace is diagonalised).
pub const MAX_SWEEP_SPINS: usize = 10;

fn ring(n: usize, l: usize, v: f64, limit: usize) -> Result<InteractionGraph, String> {
    if n > limit {
        return Err(format!("at most {limit} spins here, got {n}"));
    }
    InteractionGraph::ring(n, l, v).map_err(|e| e.to_string())
}

/// Rows of (V, exact ground energy, aligned-state energy) for `points`
/// couplings evenly spaced on [0, v_max].
pub fn energy_curve(n: usize, l: usize, v_max: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || !(v_max > 0.0) {
        return Err("need at least two points and a positive coupling range".into());
    }
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let v = v_max * i as f64 / (points - 1) as f64;
        let g = ring(n, l, v, MAX_SPINS)?;
        let e = ed::ground_state(&g, 0).map_err(|e| e.to_string())?.energy;
        out.extend([v, e, g.aligned_energy()]);
    }
    Ok(out)
}

/// Two-spin flow whose coupling outputs are initialised at `scale` times the
/// fan-in bound; `scale = 0` is the identity start.
pub fn demo_flow(seed: u64, scale: f64) -> FlowModel {
    let mut r = rng::seeded(seed);
    let init = if scale == 0.0 { OutputInit::Zero } else { OutputInit::Scaled(scale) };
    let nets = (0..DEFAULT_LAYERS).map(|_| Mlp::new(&[1, 16, 16, 2], init, &mut r)).collect();
    FlowModel::from_layers(2, nets).expect("sizes fit two spins")
}

/// Posterior density of [`demo_flow`] at the centres of a
/// `resolution × resolution` grid over (−1, 1)², row-major with y1 down.
pub fn flow_density(seed: u64, scale: f64, resolution: usize) -> Result<Vec<f64>, String> {
    if !(2..=400).contains(&resolution) {
        return Err("resolution must lie in 2..=400".into());
    }
    let flow = demo_flow(seed, scale);
    let h = 2.0 / resolution as f64;
    let mut pts = Vec::with_capacity(2 * resolution * resolution);
    for i in 0..resolution {
        for j in 0..resolution {
            pts.extend([-1.0 + (i as f64 + 0.5) * h, -1.0 + (j as f64 + 0.5) * h]);
        }
    }
    let y = Tensor::new([resolution * resolution, 2], pts).map_err(|e| e.to_string())?;
    let logp = flow.posterior_logprob(&Prior::new(2), &y).map_err(|e| e.to_string())?;
    Ok(logp.into_iter().map(f64::exp).collect())
}

fn lowest_eigenvalue(s: &Subspace, g: &InteractionGraph) -> Result<f64, String> {
    let h = subspace_hamiltonian(s, g).map_err(|e| e.to_string())?;
    Ok(SymmetricEigen::new(h).eigenvalues.min())
}

/// Best energy reachable inside subspaces of growing size k = 1, 2, 4, …, 2^n.
/// Rows of (k, best over the k most probable ground-state configurations,
/// best over k random configurations, exact energy).
pub fn subspace_sweep(n: usize, l: usize, v: f64, seed: u64) -> Result<Vec<f64>, String> {
    let g = ring(n, l, v, MAX_SWEEP_SPINS)?;
    let gs = ed::dense_ground_state(&g).map_err(|e| e.to_string())?;
    let mut by_weight: Vec<u64> = (0..1u64 << n).collect();
    by_weight.sort_by(|&a, &b| gs.state[b as usize].abs().total_cmp(&gs.state[a as usize].abs()).then(a.cmp(&b)));
    let mut random = by_weight.clone();
    random.shuffle(&mut rng::seeded(seed));
    let config = |b: u64| SpinConfig::new(b, n).expect("bits fit n");
    let mut out = Vec::new();
    let mut k = 1;
    while k <= 1usize << n {
        let top = Subspace::from_configs(by_weight[..k].iter().map(|&b| config(b)));
        let rnd = Subspace::from_configs(random[..k].iter().map(|&b| config(b)));
        out.extend([k as f64, lowest_eigenvalue(&top, &g)?, lowest_eigenvalue(&rnd, &g)?, gs.energy]);
        k *= 2;
    }
    Ok(out)
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = energyCurve)]
pub fn energy_curve_js(n: usize, l: usize, v_max: f64, points: usize) -> Result<Vec<f64>, JsError> {
    js(energy_curve(n, l, v_max, points))
}

#[wasm_bindgen(js_name = flowDensity)]
pub fn flow_density_js(seed: u32, scale: f64, resolution: usize) -> Result<Vec<f64>, JsError> {
    js(flow_density(seed as u64, scale, resolution))
}

#[wasm_bindgen(js_name = subspaceSweep)]
pub fn subspace_sweep_js(n: usize, l: usize, v: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    js(subspace_sweep(n, l, v, seed as u64))
}
