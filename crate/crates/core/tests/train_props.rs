mod common;

use admmnet::net::StageParams;
use admmnet::train::{
    adam_step, backward, grad_check, loss_and_grad, train, AdamState, ParamRef, TrainConfig,
};
use admmnet::Error;
use common::*;

fn batch(seed: u64, n: usize) -> (admmnet::net::Network, ndarray::Array2<f64>, ndarray::Array2<f64>) {
    let (a, cache) = tiny_cache(seed, 8, 12);
    let data = tiny_dataset(&a, 12, n, seed + 100);
    let idx: Vec<usize> = (0..n).collect();
    (tiny_net(1, &cache), data.stacked_measurements(&idx), data.stacked_truths(&idx))
}

#[test]
fn single_stage_gradients_match_finite_differences() {
    let (net, y, x) = batch(1, 4);
    let r = grad_check(&net, y.view(), x.view(), 1e-6, 40, 7).unwrap();
    assert!(r.entries.len() > 60);
    assert!(r.max_rel_err < 1e-5, "max rel err {}", r.max_rel_err);
}

#[test]
fn two_and_three_stage_gradients_match_finite_differences() {
    for k in [2, 3] {
        let (a, cache) = tiny_cache(9, 8, 12);
        let data = tiny_dataset(&a, 12, 4, 10);
        let idx: Vec<usize> = (0..4).collect();
        let net = tiny_net(k, &cache);
        let r = grad_check(&net, data.stacked_measurements(&idx).view(), data.stacked_truths(&idx).view(), 1e-6, 30, 3)
            .unwrap();
        assert!(r.max_rel_err < 1e-4, "K={k}: max rel err {}", r.max_rel_err);
        for kind in ["alpha", "eta", "lambda1", "lambda2"] {
            let hit = r.entries.iter().any(|e| {
                matches!(
                    (kind, e.param),
                    ("alpha", ParamRef::Alpha(_))
                        | ("eta", ParamRef::Eta(_))
                        | ("lambda1", ParamRef::Lambda1(_))
                        | ("lambda2", ParamRef::Lambda2(_))
                )
            });
            assert!(hit, "K={k}: no {kind} entry checked");
        }
    }
}

/// Truncation error shrinks like eps² and roundoff grows like 1/eps, so the
/// error is larger at both ends of the sweep than in the middle.
#[test]
fn finite_difference_error_is_v_shaped() {
    let (a, cache) = tiny_cache(4, 8, 12);
    let data = tiny_dataset(&a, 12, 4, 5);
    let idx: Vec<usize> = (0..4).collect();
    let net = tiny_net(3, &cache);
    let (y, x) = (data.stacked_measurements(&idx), data.stacked_truths(&idx));
    let err = |eps: f64| {
        let r = grad_check(&net, y.view(), x.view(), eps, 20, 1).unwrap();
        let e: Vec<f64> = r.entries.iter().map(|e| (e.analytic - e.numeric).abs()).collect();
        e.iter().sum::<f64>() / e.len() as f64
    };
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-5, 1e-9, 1e-11].iter().map(|&e| err(e)).collect();
    let best = errs[1..4].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(errs[0] > best && errs[4] > best, "{errs:?}");
}

#[test]
fn gradients_vanish_at_an_exact_fit() {
    let (net, y, _) = batch(2, 3);
    let out = net.infer_batch(y.view()).unwrap();
    let (l, g) = loss_and_grad(&net, y.view(), out.view()).unwrap();
    assert_eq!(l, 0.0);
    for st in &g {
        assert!(st.m1.iter().chain(st.m2.iter()).all(|v| *v == 0.0));
        assert_eq!(st.scalars(), [0.0; 4]);
    }
}

#[test]
fn raising_a_threshold_shrinks_the_output() {
    let (net, y, x) = batch(3, 4);
    let zero = x.mapv(|_| 0.0);
    let tr = net.forward_batch(y.view()).unwrap();
    let g = backward(&net, y.view(), zero.view(), &tr).unwrap();
    assert!(g[0].lambda1 < 0.0 && g[0].lambda2 < 0.0);
    let mut bigger = net.clone();
    bigger.stages[0].lambda1 += 0.01;
    let norm = |o: &ndarray::Array2<f64>| o.iter().map(|v| v * v).sum::<f64>();
    assert!(norm(&bigger.infer_batch(y.view()).unwrap()) < norm(&net.infer_batch(y.view()).unwrap()));
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let (net, _, _) = batch(1, 1);
    let cfg = TrainConfig::default();
    let zeros: Vec<StageParams> = net.stages.iter().map(StageParams::zeros_like).collect();
    let mut same = net.clone();
    adam_step(&mut same, &zeros, &mut AdamState::new(&net), &cfg, 1e-3).unwrap();
    assert_eq!(same.stages, net.stages);

    let mut ones = zeros.clone();
    ones[0].alpha = 1.0;
    ones[0].m1[[0, 0]] = -3.0;
    let mut moved = net.clone();
    adam_step(&mut moved, &ones, &mut AdamState::new(&net), &cfg, 1e-3).unwrap();
    let want = 1e-3 / (1.0 + 1e-8);
    assert!((net.stages[0].alpha - moved.stages[0].alpha - want).abs() < 1e-15);
    let want_m1 = 1e-3 * 3.0 / (3.0 + 1e-8);
    assert!((moved.stages[0].m1[[0, 0]] - net.stages[0].m1[[0, 0]] - want_m1).abs() < 1e-15);
    assert_eq!(moved.stages[0].eta, net.stages[0].eta);
}

#[test]
fn training_is_reproducible_and_decreases_loss() {
    let (a, cache) = tiny_cache(6, 8, 12);
    let data = tiny_dataset(&a, 12, 200, 1);
    let val = tiny_dataset(&a, 12, 50, 2);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 20,
        lr0: 1e-3,
        lr_period: 3,
        ..TrainConfig::default()
    };
    let (n1, h1) = train(tiny_net(3, &cache), &data, Some(&val), &cfg).unwrap();
    let (n2, h2) = train(tiny_net(3, &cache), &data, Some(&val), &cfg).unwrap();
    assert_eq!(n1.stages, n2.stages);
    assert_eq!(h1.epochs.len(), 6);
    assert!(h1.epochs.iter().all(|e| e.loss.is_finite()));
    assert!(h1.epochs[5].loss < h1.epochs[0].loss);
    for (e, r) in h1.epochs.iter().enumerate() {
        assert_eq!(r.lr, cfg.lr_at(e + 1));
        assert_eq!(r.loss, h2.epochs[e].loss);
    }
    let best = h1.epochs.iter().map(|r| r.val_nmse_db.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(h1.epochs[h1.selected_epoch - 1].val_nmse_db.unwrap(), best);
}

#[test]
fn divergence_aborts_with_history() {
    let (a, cache) = tiny_cache(6, 8, 12);
    let mut data = tiny_dataset(&a, 12, 40, 1);
    data.samples[7].y[0].re = f64::NAN;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 40,
        lr_period: 1,
        ..TrainConfig::default()
    };
    match train(tiny_net(1, &cache), &data, None, &cfg) {
        Err(Error::Diverged { epoch, history }) => {
            assert_eq!(epoch, 1);
            assert_eq!(history.epochs.len(), 1);
            assert!(history.epochs[0].loss.is_nan());
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn schedule_steps_every_period() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(15), 1e-3);
    assert!((cfg.lr_at(16) - 1e-4).abs() < 1e-18);
    assert!((cfg.lr_at(31) - 1e-5).abs() < 1e-19);
}
