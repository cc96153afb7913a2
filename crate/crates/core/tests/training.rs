use nfqs::autodiff::{Adam, PlateauScheduler};
use nfqs::ed;
use nfqs::flow::{FlowModel, Prior};
use nfqs::nn::{Mlp, OutputInit};
use nfqs::nqs::NqsModel;
use nfqs::rng;
use nfqs::sampler::{draw_subspace, RegionSpec};
use nfqs::spin::{InteractionGraph, SpinConfig, Subspace};
use nfqs::trainer::{self, batch_loss, InferConfig, TrainConfig};

fn random_flow(n: usize, hidden: &[usize], seed: u64) -> FlowModel {
    let mut r = rng::seeded(seed);
    let d = n.div_ceil(2);
    let mut sizes = vec![d];
    sizes.extend_from_slice(hidden);
    sizes.push(2 * (n - d));
    let nets = (0..4).map(|_| Mlp::new(&sizes, OutputInit::Scaled(0.5), &mut r)).collect();
    FlowModel::from_layers(n, nets).unwrap()
}

fn with_flow_param(flow: &FlowModel, index: usize, delta: f64) -> FlowModel {
    let mut f = flow.clone();
    let mut seen = 0;
    for p in f.params_mut() {
        if index < seen + p.len() {
            p.data_mut()[index - seen] += delta;
            break;
        }
        seen += p.len();
    }
    f
}

#[test]
fn batch_flow_gradient_matches_fd() {
    let g = InteractionGraph::ring(4, 1, 1.0).unwrap();
    let flow = random_flow(4, &[8], 3);
    let nqs = NqsModel::new(4, &[8], &mut rng::seeded(4));
    let prior = Prior::new(4);
    let spec = RegionSpec::with_n_mc(5);
    let a = Subspace::from_configs((0..16).step_by(3).map(|b| SpinConfig::new(b, 4).unwrap()));
    let b = Subspace::from_configs([1, 2, 7, 8, 14].map(|b| SpinConfig::new(b, 4).unwrap()));
    let subspaces = [&a, &b];
    // identical smoothing points for every evaluation
    let rngs = |i: usize| rng::substream(11, i as u64);
    let base = batch_loss(&flow, &nqs, &prior, &g, &subspaces, &spec, rngs).unwrap();
    let analytic: Vec<f64> = base.flow_grads.iter().flat_map(|t| t.data().to_vec()).collect();

    let h = 1e-6;
    let mut diff2 = 0.0;
    let mut norm2 = 0.0;
    for (i, an) in analytic.iter().enumerate() {
        let plus = batch_loss(&with_flow_param(&flow, i, h), &nqs, &prior, &g, &subspaces, &spec, rngs).unwrap();
        let minus = batch_loss(&with_flow_param(&flow, i, -h), &nqs, &prior, &g, &subspaces, &spec, rngs).unwrap();
        let fd = (plus.loss - minus.loss) / (2.0 * h);
        diff2 += (fd - an).powi(2);
        norm2 += fd * fd;
    }
    assert!(norm2 > 0.0);
    let rel = (diff2 / norm2).sqrt();
    assert!(rel < 1e-4, "{rel}");
}

#[test]
fn nqs_on_full_basis_reaches_exact_energy() {
    let g = InteractionGraph::ring(4, 1, 1.0).unwrap();
    let e0 = ed::dense_ground_state(&g).unwrap().energy;
    assert!((e0 + 5.2262518595055045).abs() < 1e-9);
    let s = Subspace::full_basis(4).unwrap();
    let mut m = NqsModel::new(4, &[32, 32, 32, 32], &mut rng::seeded(0));
    let mut opt = Adam::new(1e-3);
    for _ in 0..2000 {
        let (_, grads) = m.energy_and_grad(&s, &g).unwrap();
        opt.step(m.net.params_mut(), &grads).unwrap();
    }
    let e = m.variational_energy(&s, &g).unwrap();
    assert!(e >= e0 - 1e-9);
    assert!((e - e0) / e0.abs() < 1e-3, "{e} vs {e0}");
}

#[test]
fn identity_flow_with_dense_draws_matches_exact() {
    let g = InteractionGraph::ring(4, 1, 1.0).unwrap();
    let e0 = ed::dense_ground_state(&g).unwrap().energy;
    let flow = FlowModel::new(4, 4, &[16, 16], &mut rng::seeded(0)).unwrap();
    let cfg = InferConfig { n_repeats: 3, subspace_size: 400, nqs_hidden: vec![32; 4], ..InferConfig::new(4) };
    let out = trainer::infer(&flow, &g, &cfg).unwrap();
    for r in &out.repeats {
        assert_eq!(r.subspace_size, 16);
        assert!(r.energy >= e0 - 1e-9);
    }
    assert!((out.mean - e0) / e0.abs() < 1e-3, "{} vs {e0}", out.mean);
}

#[test]
fn plateau_schedule_only_halves() {
    let mut p = PlateauScheduler::new(0.5, 20);
    let mut lr = 1e-3;
    for i in 0..500 {
        let value = if i % 97 < 10 { -(i as f64) } else { 0.0 };
        let next = p.observe(value, lr);
        assert!(next <= lr);
        lr = next;
    }
    assert!(p.decays() > 0);
    assert_eq!(lr, 1e-3 * 0.5f64.powi(p.decays() as i32));
}

#[test]
fn inference_energies_respect_the_bound() {
    let g = InteractionGraph::ring(8, 2, 0.7).unwrap();
    let e0 = ed::dense_ground_state(&g).unwrap().energy;
    let flow = random_flow(8, &[16], 9);
    let cfg = InferConfig { iterations: 150, n_repeats: 4, subspace_size: 40, nqs_hidden: vec![16, 16], ..InferConfig::new(8) };
    let out = trainer::infer(&flow, &g, &cfg).unwrap();
    assert!(out.repeats.iter().all(|r| r.energy >= e0 - 1e-9));
    assert!(out.mean >= e0 - 1e-9);
}

#[test]
fn small_training_run_covers_ground_state_support() {
    let cfg = TrainConfig {
        subspace_size: 16,
        batch_subspaces: 8,
        max_updates: 300,
        flow_hidden: vec![32, 32],
        nqs_hidden: vec![32, 32],
        ..TrainConfig::new(4, 1, 1.0)
    };
    let out = trainer::train(&cfg).unwrap();
    let g = cfg.graph().unwrap();
    let gs = ed::dense_ground_state(&g).unwrap();
    assert!(out.history.iter().all(|h| h.mean_energy >= gs.energy - 1e-9));
    let set = draw_subspace(&out.flow, &Prior::new(4), 64, &mut rng::seeded(99)).unwrap();
    let covered: f64 = set.subspace.configs().iter().map(|c| gs.state[c.bits() as usize].powi(2)).sum();
    assert!(covered >= 0.99, "{covered}");
}
