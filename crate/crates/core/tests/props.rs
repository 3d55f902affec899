//! Property tests for the structural invariants: allocation budgets,
//! pruning nesting, exploration conservation and purity, moving-average
//! bookkeeping, and the training loop's update order.

use proptest::prelude::*;
use sparse_evolve::exploration::{
    explore_step, prune_topk, regrow_gradient, Decay, ExplorationSchedule, ExploreOptions,
    ExploreScope, ItopTracker, RegrowCriterion,
};
use sparse_evolve::gan::{d_loss, g_loss, sample_latent};
use sparse_evolve::optimizer::{adam_step, ema_update, sema_update, AdamConfig, SparseParam};
use sparse_evolve::rng::{derive_rng, Domain};
use sparse_evolve::tensor::Tensor;
use sparse_evolve::topology::{
    allocate, allocate_erk, magnitude_prune_global, magnitude_prune_uniform, raw_density,
    Allocation, LayerSpec, Mask,
};
use sparse_evolve::train::{train, ExploreTarget, MetricsRow, ScheduleConfig, TrainConfig, Trainer};

fn param_from(values: Vec<f64>, bits: Vec<bool>) -> SparseParam {
    let n = values.len();
    let t = Tensor::new(vec![n], values).unwrap();
    let mut mask = Mask::zeros(&[n]);
    for (i, &b) in bits.iter().enumerate() {
        mask.set(i, b);
    }
    SparseParam::new(t, mask).unwrap()
}

fn arb_layers() -> impl Strategy<Value = Vec<LayerSpec>> {
    prop::collection::vec(
        prop_oneof![
            (1usize..24, 1usize..24).prop_map(|(i, o)| LayerSpec::dense(i, o)),
            (1usize..12, 1usize..12, 1usize..4, 1usize..4)
                .prop_map(|(i, o, kw, kh)| LayerSpec::conv2d(i, o, kw, kh)),
        ],
        1..6,
    )
}

fn arb_param(max_n: usize) -> impl Strategy<Value = SparseParam> {
    (2..max_n)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_map(|(values, bits)| param_from(values, bits))
}

proptest! {
    #[test]
    fn allocation_budget_within_one_weight_per_layer(
        layers in arb_layers(),
        s in 0.0f64..0.99,
        method in prop_oneof![
            Just(Allocation::Uniform),
            Just(Allocation::Er),
            Just(Allocation::Erk),
        ],
    ) {
        let total: usize = layers.iter().map(|l| l.param_count()).sum();
        let budget = ((1.0 - s) * total as f64).round();
        match allocate(method, &layers, s) {
            Ok(plan) => {
                let kept: usize = plan.keep_counts.iter().sum();
                prop_assert!(
                    (kept as f64 - budget).abs() <= layers.len() as f64,
                    "kept {} vs budget {} over {} layers", kept, budget, layers.len()
                );
                for (d, &k) in plan.densities.iter().zip(&plan.keep_counts) {
                    prop_assert!(*d <= 1.0 + 1e-12);
                    prop_assert!(k >= 1);
                }
            }
            // uniform demands >= 1 weight per layer; tiny budgets may not fit
            Err(_) => prop_assert!((1.0 - s) * (total as f64) < layers.len() as f64 + 1.0),
        }
    }

    #[test]
    fn erk_cap_closure(layers in arb_layers(), s in 0.5f64..0.99) {
        if let Ok(plan) = allocate_erk(&layers, s) {
            let total: usize = layers.iter().map(|l| l.param_count()).sum();
            let budget = ((1.0 - s) * total as f64).round();
            for d in &plan.densities {
                prop_assert!(*d <= 1.0 + 1e-12, "density {} above 1", d);
            }
            let kept: usize = plan.keep_counts.iter().sum();
            prop_assert!((kept as f64 - budget).abs() <= layers.len() as f64);
        }
    }

    #[test]
    fn erk_prefers_smaller_layers(
        a_in in 1usize..30, a_out in 1usize..30,
        grow_in in 0usize..20, grow_out in 0usize..20,
    ) {
        prop_assume!(grow_in + grow_out > 0);
        let small = LayerSpec::dense(a_in, a_out);
        let large = LayerSpec::dense(a_in + grow_in, a_out + grow_out);
        prop_assert!(raw_density(&large, true) <= raw_density(&small, true));
    }

    #[test]
    fn erk_kernel_terms_lower_density_for_bigger_kernels(
        f_in in 1usize..12, f_out in 1usize..12,
        k in 1usize..4, grow in 1usize..4,
    ) {
        let base = LayerSpec::conv2d(f_in, f_out, k, k);
        let bigger = LayerSpec::conv2d(f_in, f_out, k + grow, k + grow);
        prop_assert!(raw_density(&bigger, true) < raw_density(&base, true));
    }

    #[test]
    fn pruning_keeps_are_nested_across_sparsities(
        values in prop::collection::vec(-5.0f64..5.0, 6..60),
        s_lo in 0.05f64..0.5,
        extra in 0.1f64..0.45,
        global in any::<bool>(),
    ) {
        let s_hi = s_lo + extra;
        let t = Tensor::new(vec![values.len()], values).unwrap();
        let run = |s: f64| -> Vec<Mask> {
            if global {
                magnitude_prune_global(&[&t], s).unwrap()
            } else {
                magnitude_prune_uniform(&[&t], s).unwrap()
            }
        };
        let keep_lo = run(s_lo);
        let keep_hi = run(s_hi);
        for i in 0..t.len() {
            if keep_hi[0].get(i) {
                prop_assert!(keep_lo[0].get(i), "kept at s={} but dropped at s={}", s_hi, s_lo);
            }
        }
    }

    #[test]
    fn explore_conserves_counts_and_zero_inits(
        mut param in arb_param(64),
        grad_vals in prop::collection::vec(-3.0f64..3.0, 64),
        p in 0.0f64..1.0,
    ) {
        prop_assume!(param.active_count() > 0);
        let n = param.len();
        let grad = Tensor::new(vec![n], grad_vals[..n].to_vec()).unwrap();
        let before_mask: Vec<bool> = (0..n).map(|i| param.mask.get(i)).collect();
        let active_before = param.active_count();
        // seed moments so clearing on regrowth is observable
        for i in 0..n {
            param.adam_m.data_mut()[i] = 0.5;
            param.adam_v.data_mut()[i] = 0.5;
        }
        let k = prune_topk(&mut param, p).unwrap();
        regrow_gradient(&mut param, &grad, k, &[]).unwrap();
        prop_assert_eq!(param.active_count(), active_before);
        for i in 0..n {
            if param.mask.get(i) && !before_mask[i] {
                prop_assert_eq!(param.values.data()[i], 0.0);
                prop_assert_eq!(param.adam_m.data()[i], 0.0);
                prop_assert_eq!(param.adam_v.data()[i], 0.0);
                prop_assert_eq!(param.age[i], 0);
            }
            if !param.mask.get(i) {
                prop_assert_eq!(param.values.data()[i], 0.0);
            }
        }
    }

    #[test]
    fn regrowth_ignores_active_position_gradients(
        param in arb_param(48),
        grad_vals in prop::collection::vec(-3.0f64..3.0, 48),
        perm_seed in any::<u64>(),
    ) {
        prop_assume!(param.active_count() > 1);
        let n = param.len();
        let grad_a = Tensor::new(vec![n], grad_vals[..n].to_vec()).unwrap();

        let mut pa = param.clone();
        let mut pb = param.clone();
        let ka = prune_topk(&mut pa, 0.5).unwrap();
        let kb = prune_topk(&mut pb, 0.5).unwrap();
        prop_assert_eq!(ka, kb);
        // permute gradients among prune survivors only; survivors are never
        // regrowth candidates, so selection must not see the change
        let survivors: Vec<usize> = (0..n).filter(|&i| pa.mask.get(i)).collect();
        let mut data_b = grad_a.data().to_vec();
        let mut rng = derive_rng(perm_seed, Domain::Explore, 0);
        let mut shuffled = survivors.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        for (&from, &to) in survivors.iter().zip(&shuffled) {
            data_b[to] = grad_a.data()[from];
        }
        let grad_b = Tensor::new(vec![n], data_b).unwrap();
        regrow_gradient(&mut pa, &grad_a, ka, &[]).unwrap();
        regrow_gradient(&mut pb, &grad_b, kb, &[]).unwrap();
        prop_assert_eq!(pa.mask.support_hash(), pb.mask.support_hash());
    }

    #[test]
    fn masked_positions_never_accumulate_state(
        mut param in arb_param(48),
        grad_vals in prop::collection::vec(-3.0f64..3.0, 48),
        beta in 0.5f64..0.999,
        steps in 1u64..6,
    ) {
        let n = param.len();
        let grad = Tensor::new(vec![n], grad_vals[..n].to_vec()).unwrap();
        let cfg = AdamConfig::new(1e-2);
        for t in 1..=steps {
            let mg = param.masked_grad(&grad);
            adam_step(&mut param, &mg, &cfg, t).unwrap();
            sema_update(&mut param, beta);
        }
        for i in 0..n {
            if !param.mask.get(i) {
                prop_assert_eq!(param.values.data()[i], 0.0);
                prop_assert_eq!(param.adam_m.data()[i], 0.0);
                prop_assert_eq!(param.adam_v.data()[i], 0.0);
                prop_assert_eq!(param.avg.data()[i], 0.0);
                prop_assert_eq!(param.age[i], 0);
            }
        }
    }

    #[test]
    fn first_sema_after_regrowth_equals_weight_exactly(
        w in -5.0f64..5.0,
        beta in 0.0f64..1.0,
    ) {
        let mut param = param_from(vec![1.0, 0.0], vec![true, false]);
        sema_update(&mut param, beta);
        sema_update(&mut param, beta);
        // regrow position 1, take one "step", then average
        param.activate(1);
        param.values.data_mut()[1] = w;
        sema_update(&mut param, beta);
        assert_eq!(param.avg.data()[1], w);
    }

    #[test]
    fn sema_equals_ema_after_first_step_under_static_mask(
        seq in prop::collection::vec(-5.0f64..5.0, 2..20),
        beta in 0.0f64..1.0,
    ) {
        let n = 1;
        let mut param = param_from(vec![seq[0]], vec![true]);
        let mut shadow = Tensor::zeros(&[n]);
        for (t, &theta) in seq.iter().enumerate() {
            param.values.data_mut()[0] = theta;
            sema_update(&mut param, beta);
            if t == 0 {
                // EMA seeded at the first observation
                shadow.data_mut()[0] = theta;
            } else {
                let values = param.values.clone();
                ema_update(&mut shadow, &values, beta);
            }
            prop_assert!((param.avg.data()[0] - shadow.data()[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn tracker_union_monotone_and_contains_support(
        mut param in arb_param(48),
        grads in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 48), 1..5),
        p in 0.1f64..0.9,
    ) {
        prop_assume!(param.active_count() > 0);
        let n = param.len();
        let mut tracker = ItopTracker::new(&[&param]);
        let mut last_union = tracker.union_count();
        for g in &grads {
            let grad = Tensor::new(vec![n], g[..n].to_vec()).unwrap();
            let k = prune_topk(&mut param, p).unwrap();
            regrow_gradient(&mut param, &grad, k, &[]).unwrap();
            tracker.absorb(&[&param]);
            let union = tracker.union_count();
            prop_assert!(union >= last_union);
            last_union = union;
            let bits = &tracker.layer_bits()[0];
            for i in 0..n {
                if param.mask.get(i) {
                    prop_assert_eq!(bits[i], 1, "live support escaped the union");
                }
            }
        }
    }
}

// ── Deterministic structural probes ──────────────────────────────────

fn probe_cfg() -> TrainConfig {
    TrainConfig {
        steps: 8,
        batch: 8,
        g_hidden: vec![12],
        d_hidden: vec![12],
        latent_dim: 4,
        eval_interval: 4,
        eval_samples: 100,
        eval_projections: 2,
        schedule: ScheduleConfig {
            delta_t: 2,
            p0: 0.5,
            decay: Decay::Cosine,
            t_end: Some(6),
        },
        ..TrainConfig::default()
    }
}

/// One trainer step must equal: D updated against pre-step G, then G updated
/// against the already-updated D, then averaging. Bit-exact replication from
/// the same seed pins both the order and the RNG stream layout.
#[test]
fn step_updates_d_against_old_g_then_g_against_new_d() {
    let cfg = TrainConfig {
        explore_target: ExploreTarget::None,
        ..probe_cfg()
    };
    let mut tr = Trainer::new(&cfg).unwrap();
    let g0 = tr.g.clone();
    let d0 = tr.d.clone();
    tr.run_steps(1).unwrap();

    let mut rng_data = derive_rng(cfg.seed, Domain::Data, 0);
    let mut rng_latent = derive_rng(cfg.seed, Domain::Latent, 0);
    let sampler = tr.sampler().clone();
    let adam = AdamConfig {
        lr: cfg.lr_d,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };

    let real = sampler.sample(cfg.batch, &mut rng_data);
    let z1 = sample_latent(cfg.batch, cfg.latent_dim, &mut rng_latent);
    let mut d1 = d0.clone();
    let dg = d_loss(&d1, &g0, &real, &z1).unwrap();
    for (p, dense) in d1.weights.iter_mut().zip(&dg.w_grads) {
        let mg = p.masked_grad(dense);
        adam_step(p, &mg, &adam, 1).unwrap();
    }
    for (p, dense) in d1.biases.iter_mut().zip(&dg.b_grads) {
        let mg = p.masked_grad(dense);
        adam_step(p, &mg, &adam, 1).unwrap();
    }

    let z2 = sample_latent(cfg.batch, cfg.latent_dim, &mut rng_latent);
    let mut g1 = g0.clone();
    let gg = g_loss(&g1, &d1, &z2, cfg.loss_mode).unwrap();
    for (p, dense) in g1.weights.iter_mut().zip(&gg.w_grads) {
        let mg = p.masked_grad(dense);
        adam_step(p, &mg, &adam, 1).unwrap();
    }
    for (p, dense) in g1.biases.iter_mut().zip(&gg.b_grads) {
        let mg = p.masked_grad(dense);
        adam_step(p, &mg, &adam, 1).unwrap();
    }
    for p in g1.weights.iter_mut().chain(g1.biases.iter_mut()) {
        sema_update(p, cfg.avg_beta);
    }

    for (expected, actual) in d1.weights.iter().zip(&tr.d.weights) {
        assert_eq!(expected.values, actual.values, "D weight mismatch");
    }
    for (expected, actual) in g1.weights.iter().zip(&tr.g.weights) {
        assert_eq!(expected.values, actual.values, "G weight mismatch");
        assert_eq!(expected.avg, actual.avg, "G average mismatch");
    }
}

/// A wrong-order replica (G against pre-update D) must NOT match; guards the
/// probe itself against vacuous equality.
#[test]
fn wrong_order_replica_disagrees() {
    let cfg = TrainConfig {
        explore_target: ExploreTarget::None,
        ..probe_cfg()
    };
    let mut tr = Trainer::new(&cfg).unwrap();
    let g0 = tr.g.clone();
    let d0 = tr.d.clone();
    tr.run_steps(1).unwrap();

    let mut rng_data = derive_rng(cfg.seed, Domain::Data, 0);
    let mut rng_latent = derive_rng(cfg.seed, Domain::Latent, 0);
    let adam = AdamConfig {
        lr: cfg.lr_g,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let _real = tr.sampler().sample(cfg.batch, &mut rng_data);
    let _z1 = sample_latent(cfg.batch, cfg.latent_dim, &mut rng_latent);
    let z2 = sample_latent(cfg.batch, cfg.latent_dim, &mut rng_latent);
    let mut g_wrong = g0.clone();
    let gg = g_loss(&g_wrong, &d0, &z2, cfg.loss_mode).unwrap();
    for (p, dense) in g_wrong.weights.iter_mut().zip(&gg.w_grads) {
        let mg = p.masked_grad(dense);
        adam_step(p, &mg, &adam, 1).unwrap();
    }
    let any_differs = g_wrong
        .weights
        .iter()
        .zip(&tr.g.weights)
        .any(|(a, b)| a.values != b.values);
    assert!(any_differs, "stale-D replica should not reproduce the step");
}

/// Sparsity levels hold at every logged step, and the itop rate never falls.
#[test]
fn logged_steps_keep_sparsity_and_itop_monotone() {
    let cfg = TrainConfig {
        steps: 30,
        eval_interval: 5,
        ..probe_cfg()
    };
    let mut tr = Trainer::new(&cfg).unwrap();
    let g_counts = tr.g.active_counts();
    let d_counts = tr.d.active_counts();
    let mut last_itop = 0.0;
    for _ in 0..cfg.steps {
        tr.run_steps(1).unwrap();
        assert_eq!(tr.g.active_counts(), g_counts);
        assert_eq!(tr.d.active_counts(), d_counts);
        assert!(tr.tracker_g.rate() >= last_itop);
        last_itop = tr.tracker_g.rate();
    }
    let rows: Vec<MetricsRow> = tr.result().rows;
    for pair in rows.windows(2) {
        assert!(pair[1].itop_rate >= pair[0].itop_rate);
    }
}

/// config.json written into a run directory reproduces the run bit-exactly.
#[test]
fn run_dir_config_reproduces_run() {
    use sparse_evolve::train::train_to_dir;
    let cfg = probe_cfg();
    let dir = tempfile::tempdir().unwrap();
    let first = train_to_dir(&cfg, Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("config.json")).unwrap();
    let parsed: TrainConfig = serde_json::from_str(&text).unwrap();
    let second = train(&parsed).unwrap();
    assert_eq!(first, second);
}

/// Global-scope exploration conserves the cross-network total even when one
/// layer's count drifts.
#[test]
fn global_explore_conserves_total_count() {
    let cfg = TrainConfig {
        explore: ExploreOptions {
            scope: ExploreScope::Global,
            regrow: RegrowCriterion::Gradient,
            exclude_just_pruned: false,
        },
        ..probe_cfg()
    };
    let mut tr = Trainer::new(&cfg).unwrap();
    let total_before: usize = tr.g.active_counts().iter().sum();
    tr.run_steps(cfg.steps).unwrap();
    assert!(!tr.diverged());
    let total_after: usize = tr.g.active_counts().iter().sum();
    assert_eq!(total_before, total_after);
}

/// Random regrowth keeps counts too; the schedule, not the criterion, owns
/// conservation.
#[test]
fn random_regrowth_conserves_counts() {
    let mut param = param_from(
        vec![0.3, -0.1, 0.0, 0.0, 2.0, 0.0, -0.7, 0.0],
        vec![true, true, false, false, true, false, true, false],
    );
    let sched = ExplorationSchedule {
        delta_t: 1,
        p0: 0.5,
        decay: Decay::Constant,
        t_end: 10,
    };
    let opts = ExploreOptions {
        scope: ExploreScope::PerLayer,
        regrow: RegrowCriterion::Random,
        exclude_just_pruned: true,
    };
    let grad = Tensor::zeros(&[8]);
    let mut tracker = ItopTracker::new(&[&param]);
    let mut rng = derive_rng(7, Domain::Explore, 0);
    for t in 1..=5 {
        let mut params = vec![&mut param];
        explore_step(&mut params, &[grad.clone()], &sched, t, &opts, &mut tracker, &mut rng)
            .unwrap();
        assert_eq!(param.active_count(), 4);
    }
}
