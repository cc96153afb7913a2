//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! to stderr (visible without `--nocapture`) and then asserts.
//!
//! Criteria 7 and 8 run at reduced width by default. `NFQS_FULL=1` adds the
//! full-width runs and the N = 30 check of criterion 9.

mod common;

use std::io::Write;
use std::rc::Rc;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use common::{chi_square_uniform, fd_error, fd_log_det, identity_flow, normal_tensor, orthant_counts, random_flow, two_spin_mass, CHI2_15_P99};
use nalgebra::DMatrix;
use nfqs::autodiff::{SparseMatrix, Tensor, Var};
use nfqs::ed::{self, DEFAULT_MAX_ITER, DEFAULT_TOL};
use nfqs::flow::Prior;
use nfqs::rng;
use nfqs::sampler::{mc_region_prob, CubeDensity, RegionSpec};
use nfqs::spin::{energy_expectation, subspace_hamiltonian, InteractionGraph, SpinConfig, Subspace};
use nfqs::trainer::{self, write_history, InferConfig, TrainConfig, TrainOutcome};
use rand::seq::index::sample;
use rand::Rng;

fn verdict(id: &str, pass: bool, detail: impl std::fmt::Display) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:<10} {status}  {detail}");
    assert!(pass, "criterion {id} failed: {detail}");
}

fn full_runs() -> bool {
    std::env::var("NFQS_FULL").is_ok_and(|v| v == "1")
}

fn skip(id: &str) {
    let _ = writeln!(std::io::stderr(), "criterion {id:<10} SKIP  set NFQS_FULL=1 to run");
}

/// End-to-end runs share one CPU; holding this keeps their timings honest.
fn heavy() -> std::sync::MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn random_ring(r: &mut impl Rng, max_n: usize) -> InteractionGraph {
    let n = r.random_range(2..=max_n);
    let l = r.random_range(1..=n / 2);
    InteractionGraph::ring(n, l, r.random_range(0.0..3.0)).unwrap()
}

#[test]
fn c01_exact_diagonalisation() {
    let start = Instant::now();
    let g = InteractionGraph::ring(2, 1, 1.0).unwrap();
    let e2 = ed::dense_ground_state(&g).unwrap().energy;
    let analytic_err = (e2 + 5f64.sqrt()).abs();

    let mut r = rng::seeded(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let g = random_ring(&mut r, 10);
        let dense = ed::dense_ground_state(&g).unwrap().energy;
        let lanczos = ed::lanczos_ground_state(&g, DEFAULT_TOL, DEFAULT_MAX_ITER, i).unwrap().energy;
        worst = worst.max((dense - lanczos).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "1",
        analytic_err < 1e-10 && worst < 1e-8 && secs < 60.0,
        format!("|E + sqrt5| = {analytic_err:.1e}, max |dense - lanczos| = {worst:.1e} over 20 rings, {secs:.1} s"),
    );
}

#[test]
fn c02_aligned_baselines() {
    let cases = [(30, 15, 1.0, -435.0), (30, 8, 1.0, -240.0), (40, 20, 1.0, -780.0), (50, 25, 1.0, -1225.0), (30, 15, 0.5, -217.5)];
    let mut misses = Vec::new();
    for (n, l, v, expected) in cases {
        let e = InteractionGraph::ring(n, l, v).unwrap().aligned_energy();
        let all_up = InteractionGraph::ring(n, l, v).unwrap().diagonal_element(SpinConfig::all_up(n).unwrap()).unwrap();
        if e != expected || all_up != expected {
            misses.push(format!("({n},{l},{v}) -> {e}"));
        }
    }
    verdict("2", misses.is_empty(), if misses.is_empty() { "5/5 exact".to_string() } else { misses.join(", ") });
}

fn composed_graph<'t>(x: Var<'t>, ops: &[u8], consts: &[Tensor], square: &Tensor) -> Var<'t> {
    let tape = x.tape();
    let mut v = x;
    for (k, &op) in ops.iter().enumerate() {
        let c = tape.leaf(consts[k % consts.len()].clone());
        v = match op % 9 {
            0 => v.tanh(),
            1 => v.mul(c).unwrap(),
            2 => v.add(c).unwrap(),
            3 => v.matmul(tape.leaf(square.clone())).unwrap().scale(0.5),
            4 => v.scale(0.3).exp(),
            5 => v.mul(v).unwrap().add_scalar(1.0).log(),
            6 => v.log_cosh(),
            7 => v.sum_axis(1).unwrap().broadcast_to(&[3, 4]).unwrap().scale(0.25).sub(v).unwrap(),
            _ => v.div(v.mul(v).unwrap().add_scalar(2.0)).unwrap(),
        };
    }
    v.mean()
}

#[test]
fn c03_autodiff_against_finite_differences() {
    let start = Instant::now();
    let x = normal_tensor([3, 4], 5);
    let row = normal_tensor([1, 4], 6);
    let col = normal_tensor([3, 1], 7);
    let sq = normal_tensor([4, 4], 8);
    let sparse = Rc::new(SparseMatrix::from_triplets(5, 3, vec![(0, 0, 1.5), (0, 2, -0.7), (2, 1, 2.0), (4, 0, 0.3), (4, 2, 1.1)]).unwrap());
    type Case = (&'static str, Box<dyn Fn(Var<'_>) -> Var<'_>>);
    let cases: Vec<Case> = vec![
        ("matmul", Box::new(move |v| v.matmul(v.tape().leaf(sq.clone())).unwrap().tanh().sum())),
        ("sparse_lmul", Box::new(move |v| v.sparse_lmul(&sparse).unwrap().tanh().sum())),
        ("add", Box::new(move |v| v.add(v.tape().leaf(row.clone())).unwrap().tanh().sum())),
        ("sub", Box::new(|v| v.sub(v.exp()).unwrap().tanh().sum())),
        ("mul", Box::new(move |v| v.mul(v.tape().leaf(col.clone())).unwrap().tanh().sum())),
        ("div", Box::new(|v| v.div(v.mul(v).unwrap().add_scalar(1.0)).unwrap().sum())),
        ("relu", Box::new(|v| v.relu().mul(v).unwrap().sum())),
        ("tanh", Box::new(|v| v.tanh().sum())),
        ("exp", Box::new(|v| v.scale(0.5).exp().mean())),
        ("log", Box::new(|v| v.mul(v).unwrap().add_scalar(0.5).log().sum())),
        ("log_cosh", Box::new(|v| v.scale(3.0).log_cosh().sum())),
        ("sum", Box::new(|v| v.sum().mul(v.sum()).unwrap())),
        ("mean", Box::new(|v| v.mean().tanh())),
        ("sum_axis", Box::new(|v| v.sum_axis(0).unwrap().tanh().sum())),
        ("broadcast", Box::new(|v| v.sum_axis(0).unwrap().broadcast_to(&[5, 4]).unwrap().tanh().sum())),
        ("reshape", Box::new(|v| v.reshape([4, 3]).unwrap().sum_axis(1).unwrap().tanh().sum())),
        ("slice_concat", Box::new(|v| v.slice_cols(1, 3).unwrap().concat_cols(v.slice_cols(0, 1).unwrap()).unwrap().tanh().sum())),
        ("scale_neg", Box::new(|v| v.scale(2.5).neg().tanh().sum())),
    ];
    let mut worst = (0.0f64, "");
    for (name, f) in &cases {
        let err = fd_error(&x, f);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    let mut r = rng::seeded(42);
    let mut worst_graph = 0.0f64;
    for trial in 0..50u64 {
        let ops: Vec<u8> = (0..5 + trial % 4).map(|_| r.random()).collect();
        let consts: Vec<Tensor> = (0..3).map(|i| normal_tensor([3, 4], 100 * trial + i)).collect();
        let square = normal_tensor([4, 4], 100 * trial + 50);
        let x = normal_tensor([3, 4], 1000 + trial);
        worst_graph = worst_graph.max(fd_error(&x, |v| composed_graph(v, &ops, &consts, &square)));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "3",
        worst.0 < 1e-5 && worst_graph < 1e-5 && secs < 60.0,
        format!(
            "{} primitives worst {:.1e} ({}), 50 graphs worst {worst_graph:.1e}, {secs:.1} s",
            cases.len(),
            worst.0,
            worst.1
        ),
    );
}

#[test]
fn c04_flow_correctness() {
    let start = Instant::now();
    let mut round_trip = 0.0f64;
    for seed in 0..20u64 {
        let n = 2 + seed as usize % 9;
        let flow = random_flow(n, &[16, 16], 0.5, seed);
        let z = Prior::new(n).sample(32, &mut rng::seeded(100 + seed));
        let (y, _) = flow.forward(&z).unwrap();
        let back = flow.inverse(&y).unwrap();
        round_trip = round_trip.max(back.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let mut log_det = 0.0f64;
    for n in 2..=6 {
        let flow = random_flow(n, &[16, 16], 1.0, 10 + n as u64);
        let z = Prior::new(n).sample(4, &mut rng::seeded(n as u64));
        let (_, ld) = flow.forward(&z).unwrap();
        for (row, l) in z.data().chunks(n).zip(&ld) {
            log_det = log_det.max((fd_log_det(&flow, row) - l).abs() / l.abs().max(1.0));
        }
    }
    let mass = two_spin_mass(&random_flow(2, &[16, 16], 0.5, 3), 600);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "4",
        round_trip < 1e-8 && log_det < 1e-5 && (mass - 1.0).abs() < 1e-3 && secs < 120.0,
        format!("round trip {round_trip:.1e}, log-det rel {log_det:.1e}, N=2 mass {mass:.6}, {secs:.1} s"),
    );
}

struct ConstantDensity(usize);

impl CubeDensity for ConstantDensity {
    fn log_density(&self, y: &Tensor) -> nfqs::Result<Vec<f64>> {
        Ok(vec![-(self.0 as f64) * 2f64.ln(); y.shape()[0]])
    }

    fn density(&self, y: &Tensor) -> nfqs::Result<Vec<f64>> {
        Ok(vec![2f64.powi(-(self.0 as i32)); y.shape()[0]])
    }
}

#[test]
fn c05_sampler() {
    let start = Instant::now();
    let mut r = rng::seeded(9);
    let mut exact = true;
    for n in 1..=12usize {
        let x = SpinConfig::new(r.random::<u64>(), n).unwrap();
        let p = mc_region_prob(&ConstantDensity(n), x, &RegionSpec::default(), &mut r).unwrap();
        exact &= p.to_bits() == 2f64.powi(-(n as i32)).to_bits();
    }
    let chi2 = chi_square_uniform(&orthant_counts(&identity_flow(4), 100_000, 7));
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "5",
        exact && chi2 < CHI2_15_P99 && secs < 60.0,
        format!("constant stub bitwise exact: {exact}, chi2 = {chi2:.2} (< {CHI2_15_P99:.2}), {secs:.1} s"),
    );
}

#[test]
fn c06_variational_bound() {
    let start = Instant::now();
    let mut r = rng::seeded(6);
    let mut worst = f64::INFINITY;
    for i in 0..100u64 {
        let g = random_ring(&mut r, 12);
        let n = g.n();
        let e0 = ed::ground_state(&g, i).unwrap().energy;
        let dim = 1usize << n;
        let k = r.random_range(1..=dim.min(200));
        let s = Subspace::from_configs(sample(&mut r, dim, k).into_iter().map(|b| SpinConfig::new(b as u64, n).unwrap()));
        let h: DMatrix<f64> = subspace_hamiltonian(&s, &g).unwrap();
        let amps: Vec<f64> = (0..s.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let e = energy_expectation(&h, &amps).unwrap();
        worst = worst.min(e - e0);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "6",
        worst >= -1e-9 && secs < 120.0,
        format!("min over 100 subspaces of E - E_ED = {worst:.3e}, {secs:.1} s"),
    );
}

const SMOKE_WIDTH: usize = 128;
const SMOKE_UPDATES: usize = 30;

fn smoke_config() -> (TrainConfig, InferConfig) {
    let train = TrainConfig {
        max_updates: SMOKE_UPDATES,
        flow_hidden: vec![SMOKE_WIDTH; 2],
        nqs_hidden: vec![SMOKE_WIDTH; 4],
        ..TrainConfig::new(10, 1, 1.0)
    };
    let infer = InferConfig { nqs_hidden: vec![SMOKE_WIDTH; 4], ..InferConfig::new(10) };
    (train, infer)
}

fn history_csv(out: &TrainOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_history(&out.history, &mut buf).unwrap();
    buf
}

struct TimedRun {
    outcome: TrainOutcome,
    secs: f64,
}

fn timed_train(cfg: &TrainConfig) -> TimedRun {
    let start = Instant::now();
    let outcome = trainer::train(cfg).unwrap();
    TimedRun { outcome, secs: start.elapsed().as_secs_f64() }
}

fn smoke_run() -> &'static TimedRun {
    static RUN: OnceLock<TimedRun> = OnceLock::new();
    RUN.get_or_init(|| timed_train(&smoke_config().0))
}

/// Trains, infers and returns (percent error, detail line).
fn end_to_end(train: &TimedRun, g: &InteractionGraph, infer: &InferConfig) -> (f64, String) {
    let e_true = ed::ground_state(g, 0).unwrap().energy;
    let start = Instant::now();
    let inf = trainer::infer(&train.outcome.flow, g, infer).unwrap();
    let infer_secs = start.elapsed().as_secs_f64();
    let err = ed::percentage_error(inf.mean, e_true).unwrap();
    let mean_k = inf.repeats.iter().map(|r| r.subspace_size as f64).sum::<f64>() / inf.repeats.len() as f64;
    let detail = format!(
        "E = {:.4} ± {:.4} vs ED {e_true:.4}: {err:.2}%, {} updates (converged {}), mean |S| {mean_k:.1}, train {:.0} s + infer {infer_secs:.0} s",
        inf.mean, inf.std, train.outcome.updates, train.outcome.converged, train.secs
    );
    (err, detail)
}

#[test]
fn c07_smoke_n10_l1() {
    let _guard = heavy();
    let (train, infer) = smoke_config();
    let run = smoke_run();
    let start = Instant::now();
    let (err, detail) = end_to_end(run, &train.graph().unwrap(), &infer);
    let secs = run.secs + start.elapsed().as_secs_f64();
    verdict("7-smoke", err < 2.0 && secs < 300.0, format!("width {SMOKE_WIDTH}: {detail}, total {secs:.0} s (limit 300)"));
}

#[test]
fn c07_full_n10_l1() {
    if !full_runs() {
        return skip("7");
    }
    let _guard = heavy();
    let cfg = TrainConfig::new(10, 1, 1.0);
    let run = timed_train(&cfg);
    let (err, detail) = end_to_end(&run, &cfg.graph().unwrap(), &InferConfig::new(10));
    verdict("7", err < 1.0, detail);
}

const LONG_RANGE_WIDTH: usize = 64;
const LONG_RANGE_UPDATES: usize = 60;

#[test]
fn c08_long_range_n10_l5() {
    let _guard = heavy();
    let cfg = TrainConfig {
        max_updates: LONG_RANGE_UPDATES,
        flow_hidden: vec![LONG_RANGE_WIDTH; 2],
        nqs_hidden: vec![LONG_RANGE_WIDTH; 4],
        ..TrainConfig::new(10, 5, 1.0)
    };
    let infer = InferConfig { nqs_hidden: vec![LONG_RANGE_WIDTH; 4], ..InferConfig::new(10) };
    let run = timed_train(&cfg);
    let (err, detail) = end_to_end(&run, &cfg.graph().unwrap(), &infer);
    verdict("8-reduced", err < 1.0, format!("width {LONG_RANGE_WIDTH}: {detail}"));
}

#[test]
fn c08_full_n10_l5() {
    if !full_runs() {
        return skip("8");
    }
    let _guard = heavy();
    let cfg = TrainConfig::new(10, 5, 1.0);
    let run = timed_train(&cfg);
    let (err, detail) = end_to_end(&run, &cfg.graph().unwrap(), &InferConfig::new(10));
    verdict("8", err < 1.0, detail);
}

#[test]
fn c09_large_ring_n30() {
    if !full_runs() {
        return skip("9");
    }
    let _guard = heavy();
    let cfg = TrainConfig::new(30, 15, 1.0);
    let run = timed_train(&cfg);
    let inf = trainer::infer(&run.outcome.flow, &cfg.graph().unwrap(), &InferConfig::new(30)).unwrap();
    let e = inf.mean;
    verdict(
        "9",
        e < -435.0 && (-436.5..=-435.0).contains(&e),
        format!("E = {e:.3} ± {:.3}, {} updates, {:.0} s", inf.std, run.outcome.updates, run.secs),
    );
}

#[test]
fn c10_determinism() {
    let _guard = heavy();
    let first = history_csv(&smoke_run().outcome);
    let second = history_csv(&timed_train(&smoke_config().0).outcome);
    let rows = first.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    verdict("10", first == second, format!("two seeded smoke runs, {rows} history rows each, identical: {}", first == second));
}
