use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoding::TaskLayout;
use crate::imitator::{ImitatorHyper, ImitatorMeta, ImitatorModel};
use crate::model::{CostParams, CwPair, DeviceId, QosObservation, SchedulingAction, Task, TaskId, TaskSet, TaskSpec};
use crate::neural::gradcheck::check_params;
use crate::neural::{Mlp, ParamStore};
use crate::stats::chi_square_uniform_p;

fn delay_only() -> TaskSet {
    TaskSet::new(vec![Task {
        id: TaskId::delay(1, 0, 0),
        spec: TaskSpec::DelaySensitive {
            arrival_rate_bps: 25e6,
            arrival_interval_s: 0.016,
            rtt_limit_s: 0.028,
        },
    }])
    .unwrap()
}

fn with_file() -> TaskSet {
    TaskSet::new(vec![
        Task {
            id: TaskId::file(1, 0, 0),
            spec: TaskSpec::FileDelivery { max_throughput_bps: 600e6 },
        },
        Task {
            id: TaskId::delay(1, 0, 0),
            spec: TaskSpec::DelaySensitive {
                arrival_rate_bps: 25e6,
                arrival_interval_s: 0.016,
                rtt_limit_s: 0.028,
            },
        },
    ])
    .unwrap()
}

fn devices(n: u16) -> Vec<DeviceId> {
    (0..n).map(DeviceId).collect()
}

/// Two devices with four local actions each (two VI by two BE windows).
fn toy_space() -> ActionSpace {
    ActionSpace::new(
        devices(2)
            .into_iter()
            .map(|device| DeviceSpace {
                device,
                vi_grid: vec![1, 3],
                be_grid: vec![7, 15],
                files: vec![],
                r_max_bps: vec![],
                cap_levels: 1,
                fixed_cw: None,
            })
            .collect(),
    )
    .unwrap()
}

fn toy_cfg() -> QNetConfig {
    QNetConfig {
        history: 2,
        width: 8,
        heads: 2,
        hidden: 16,
        fc_layers: 2,
        regions: 2,
        beta: 3.0,
        zero_heads: false,
    }
}

fn toy_net(seed: u64) -> QNetwork {
    QNetwork::new(toy_cfg(), toy_space(), TaskLayout::new(&delay_only(), &devices(2), 1.0), seed).unwrap()
}

fn obs(rtt: f64) -> QosObservation {
    let mut o = QosObservation::default();
    o.rtt_s.insert(TaskId::delay(1, 0, 0), rtt);
    o
}

fn random_state<R: Rng>(net: &QNetwork, rng: &mut R) -> ExtendedState {
    let steps = (0..net.cfg.history).map(|_| {
        let idx: Vec<usize> = net.space.sizes().iter().map(|&s| rng.gen_range(0..s)).collect();
        Triple {
            region: rng.gen_range(0..net.cfg.regions),
            observation: obs(rng.gen_range(0.001..0.1)),
            action: net.space.decode(&idx).unwrap(),
        }
    });
    ExtendedState::from_entries(steps).unwrap()
}

fn joint_actions(space: &ActionSpace) -> Vec<Vec<usize>> {
    let sizes = space.sizes();
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|mut n| {
            sizes
                .iter()
                .map(|&s| {
                    let a = n % s;
                    n /= s;
                    a
                })
                .collect()
        })
        .collect()
}

#[test]
fn standard_space_layout() {
    let tasks = TaskSet::new(vec![
        Task {
            id: TaskId::file(1, 0, 0),
            spec: TaskSpec::FileDelivery { max_throughput_bps: 600e6 },
        },
        Task {
            id: TaskId::delay(2, 0, 0),
            spec: TaskSpec::DelaySensitive {
                arrival_rate_bps: 25e6,
                arrival_interval_s: 0.016,
                rtt_limit_s: 0.028,
            },
        },
    ])
    .unwrap();
    let space = ActionSpace::standard(&tasks, &devices(4)).unwrap();
    assert_eq!(space.sizes(), vec![100, 2100, 100, 100]);
    assert_eq!(space.total(), 2400);
    assert_eq!(space.offsets(), &[0, 100, 2200, 2300]);
    let d1 = &space.devices()[1];
    for idx in 0..d1.size() {
        assert_eq!(d1.encode(&d1.decode(idx).unwrap()).unwrap(), idx);
    }
    // CW pairs vary fastest: index 1 moves VI one grid step.
    assert_eq!(d1.decode(1).unwrap().cw, CwPair::new(3, 1));
    assert_eq!(d1.decode(10).unwrap().cw, CwPair::new(1, 3));
    assert_eq!(d1.decode(100).unwrap().caps_bps[&TaskId::file(1, 0, 0)], 30e6);
    let joint = space.decode(&[3, 2099, 0, 99]).unwrap();
    joint.validate(&tasks, &devices(4)).unwrap();
    assert_eq!(space.encode(&joint).unwrap(), vec![3, 2099, 0, 99]);

    let rate = space.with_fixed_cw(CwPair::new(7, 15)).unwrap();
    assert_eq!(rate.allowed(0), &[32]);
    assert_eq!(rate.allowed(1).len(), 21);
    assert!(rate.allowed(1).iter().all(|&a| d1.decode(a).unwrap().cw == CwPair::new(7, 15)));
    let json = serde_json::to_string(&rate).unwrap();
    assert_eq!(serde_json::from_str::<ActionSpace>(&json).unwrap(), rate);
}

#[test]
fn zero_heads_give_zero_q() {
    let mut net = toy_net(1);
    net.zero_heads();
    let es = random_state(&net, &mut ChaCha8Rng::seed_from_u64(1));
    let tables = q_forward(&net, &es).unwrap();
    assert!(tables.iter().flatten().all(|&q| q == 0.0));
    assert_eq!(joint_q(&tables, &[1, 3]), 0.0);
}

#[test]
fn joint_q_matches_sparse_head_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..20 {
        let net = toy_net(seed);
        let es = random_state(&net, &mut rng);
        let tables = q_forward(&net, &es).unwrap();
        let enc = net.encode_state(&es).unwrap();
        for joint in joint_actions(&net.space) {
            // td_loss with gamma 0 and cost 0 is the squared joint Q,
            // evaluated through the sparse gather path.
            let tr = Transition {
                state: enc.clone(),
                action: joint.clone(),
                cost: 0.0,
                next: enc.clone(),
            };
            let (loss, _) = td_loss(&net, &[&tr], 0.0).unwrap();
            let q = joint_q(&tables, &joint);
            assert!((loss - q * q).abs() <= 1e-12 * (1.0 + q * q), "{loss} vs {}", q * q);
        }
    }
}

#[test]
fn device_relabeling_preserves_joint_q() {
    let net = toy_net(3);
    let mut swapped_devices = net.space.devices().to_vec();
    swapped_devices.reverse();
    let swapped_space = ActionSpace::new(swapped_devices).unwrap();
    let mut params = net.params.clone();
    let (w, b) = net.head_ids();
    let n = net.space.total();
    let permute = |col: usize| if col < 4 { col + 4 } else { col - 4 };
    for id in [w, b] {
        let src = net.params.value(id).clone();
        let dst = params.value_mut(id);
        for r in 0..src.rows() {
            for c in 0..n {
                dst.set(r, permute(c), src.get(r, c));
            }
        }
    }
    let other = QNetwork::from_params(net.cfg, swapped_space, net.layout.clone(), params.clone(), params).unwrap();
    let es = random_state(&net, &mut ChaCha8Rng::seed_from_u64(3));
    let t1 = q_forward(&net, &es).unwrap();
    let t2 = q_forward(&other, &es).unwrap();
    for joint in joint_actions(&net.space) {
        let relabeled = vec![joint[1], joint[0]];
        assert!((joint_q(&t1, &joint) - joint_q(&t2, &relabeled)).abs() < 1e-12);
        assert_eq!(net.space.decode(&joint).unwrap(), other.space.decode(&relabeled).unwrap());
    }
}

#[test]
fn greedy_examples() {
    let space = toy_space();
    let tables = vec![vec![3.0, -1.0, 2.0, 0.0], vec![0.5, 0.7, 0.1, 0.9]];
    assert_eq!(greedy_indices(&tables, &space), vec![1, 2]);
    let flat = vec![vec![1.0; 4], vec![1.0; 4]];
    assert_eq!(greedy_indices(&flat, &space), vec![0, 0]);
    assert_eq!(greedy_action(&flat, &space).unwrap(), space.decode(&[0, 0]).unwrap());
}

#[test]
fn greedy_matches_exhaustive_joint_argmin() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..200 {
        let net = toy_net(1000 + seed);
        let tables = q_forward(&net, &random_state(&net, &mut rng)).unwrap();
        let greedy = greedy_indices(&tables, &net.space);
        let mut best = (f64::INFINITY, vec![]);
        for joint in joint_actions(&net.space) {
            let q = joint_q(&tables, &joint);
            if q < best.0 {
                best = (q, joint);
            }
        }
        assert_eq!(joint_q(&tables, &greedy), best.0);
    }
}

/// Sets every head weight to zero and the biases to `bias`, so each table
/// equals its slice of `bias` whatever the state.
fn constant_heads(net: &mut QNetwork, bias: &[f64], target_bias: &[f64]) {
    net.zero_heads();
    let (_, b) = net.head_ids();
    net.params.value_mut(b).data_mut().copy_from_slice(bias);
    net.target.value_mut(b).data_mut().copy_from_slice(target_bias);
}

#[test]
fn td_loss_examples() {
    let mut net = toy_net(5);
    let es = random_state(&net, &mut ChaCha8Rng::seed_from_u64(5));
    let enc = net.encode_state(&es).unwrap();
    let tr = |cost: f64, action: Vec<usize>| Transition {
        state: enc.clone(),
        action,
        cost,
        next: enc.clone(),
    };
    constant_heads(&mut net, &[0.0; 8], &[0.0; 8]);
    assert_eq!(td_loss(&net, &[&tr(0.0, vec![0, 0])], 0.95).unwrap().0, 0.0);

    let online = [1.0, 2.0, 0.5, 3.0, -1.0, 0.0, 4.0, 2.0];
    let target = [2.0, 0.5, 1.0, 1.5, 0.0, -2.0, 1.0, 3.0];
    constant_heads(&mut net, &online, &target);
    // Q(s, a) = 2.0 + 4.0; min target tables: 0.5 and -2.0.
    let expected = (0.7 + 0.95 * (0.5 - 2.0) - (2.0 + 4.0f64)).powi(2);
    let got = td_loss(&net, &[&tr(0.7, vec![1, 2])], 0.95).unwrap().0;
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");

    // Without discounting the targets are the costs themselves.
    let batch = [tr(0.7, vec![1, 2]), tr(-0.3, vec![0, 0])];
    let refs: Vec<_> = batch.iter().collect();
    let expected = ((0.7 - 6.0f64).powi(2) + (-0.3 - 0.0f64).powi(2)) / 2.0;
    assert!((td_loss(&net, &refs, 0.0).unwrap().0 - expected).abs() < 1e-12);
    assert!(td_loss(&net, &[], 0.9).is_err());
}

#[test]
fn td_loss_gradient_matches_finite_differences() {
    let net = toy_net(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch: Vec<Transition> = (0..3)
        .map(|_| Transition {
            state: net.encode_state(&random_state(&net, &mut rng)).unwrap(),
            action: vec![rng.gen_range(0..4), rng.gen_range(0..4)],
            cost: rng.gen_range(-1.0..1.0),
            next: net.encode_state(&random_state(&net, &mut rng)).unwrap(),
        })
        .collect();
    let refs: Vec<_> = batch.iter().collect();
    let check = check_params(&net.params, 1e-5, 12, |p| {
        let mut probe = net.clone();
        probe.params = p.clone();
        td_loss(&probe, &refs, 0.9)
    })
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn ucb_examples() {
    let space = toy_space();
    let tables = vec![vec![0.0, 5.0, 5.0, 5.0], vec![5.0, 5.0, -1.0, 5.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // Equal counts make the bonus constant: pure argmin.
    let mut counts = VisitCounts::new(1, &space.sizes());
    for i in 0..2 {
        for a in 0..4 {
            counts.increment(0, i, a);
        }
    }
    for t in 1..20 {
        assert_eq!(ucb_select(&tables, &mut counts, t, 0, 1.0, 0.0, false, &space, &mut rng).unwrap(), vec![0, 2]);
        let mut counts2 = counts.clone();
        for i in 0..2 {
            for a in 0..4 {
                counts2.increment(0, i, a);
            }
        }
        counts = counts2;
    }
    assert!(ucb_select(&tables, &mut counts, 0, 0, 1.0, 0.0, false, &space, &mut rng).is_err());

    // Optimistic: an untried action wins over a better-valued tried one.
    let mut counts = VisitCounts::new(1, &space.sizes());
    let bandit = vec![vec![0.0, 0.0, 0.0, 0.0], vec![0.0; 4]];
    let mut seen = std::collections::BTreeSet::new();
    for t in 1..=4 {
        let a = ucb_select(&bandit, &mut counts, t, 0, 1.0, 0.0, true, &space, &mut rng).unwrap();
        assert!(seen.insert(a[0]), "action {} chosen twice before all were tried", a[0]);
    }
    assert_eq!(counts.total(), 8);
}

#[test]
fn full_exploration_is_uniform() {
    let space = toy_space();
    let tables = vec![vec![0.0, 1.0, 2.0, 3.0], vec![3.0, 2.0, 1.0, 0.0]];
    let mut counts = VisitCounts::new(1, &space.sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut hist = [[0u64; 4]; 2];
    for t in 1..=8000 {
        let a = ucb_select(&tables, &mut counts, t, 0, 1.0, 1.0, false, &space, &mut rng).unwrap();
        hist[0][a[0]] += 1;
        hist[1][a[1]] += 1;
    }
    for h in hist {
        assert!(chi_square_uniform_p(&h) > 0.001, "{h:?}");
    }
    let greedy = epsilon_greedy(&tables, 0.0, &space, &mut rng);
    assert_eq!(greedy, vec![0, 3]);
}

#[test]
fn replay_samples_without_replacement() {
    let mut buf = ReplayBuffer::new(10);
    for i in 0..25 {
        buf.push(i);
    }
    assert_eq!(buf.len(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let mut s: Vec<i32> = buf.sample(10, &mut rng).into_iter().copied().collect();
        s.sort_unstable();
        assert_eq!(s, (15..25).collect::<Vec<_>>());
    }
}

#[test]
fn epsilon_schedule_decays_to_floor() {
    let e = EpsilonSchedule::default();
    assert_eq!(e.value(0), 0.3);
    assert!((e.value(1) - 0.297).abs() < 1e-12);
    assert_eq!(e.value(10_000), 0.01);
    let mut last = f64::INFINITY;
    for t in 0..1000 {
        assert!(e.value(t) <= last);
        last = e.value(t);
    }
}

/// An imitator that ignores its input and always predicts `out`.
fn constant_imitator(layout: &TaskLayout, active: &[TaskId], out: &[f64]) -> ImitatorModel {
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Mlp::new(&mut params, "imitator", &[layout.action_dim(), 4, out.len()], &mut rng).unwrap();
    for id in 0..params.len() {
        params.value_mut(id).data_mut().fill(0.0);
    }
    let b = params.id("imitator.1.b").unwrap();
    params.value_mut(b).data_mut().copy_from_slice(out);
    imitator_from(layout, active, params)
}

fn imitator_from(layout: &TaskLayout, active: &[TaskId], params: ParamStore) -> ImitatorModel {
    let meta = ImitatorMeta {
        pattern: 1,
        region: 0,
        layout: layout.clone(),
        active: active.to_vec(),
        hyper: ImitatorHyper {
            hidden_layers: 1,
            width: 4,
            ..ImitatorHyper::default()
        },
        samples: 0,
        train_loss: 0.0,
        holdout_loss: None,
    };
    ImitatorModel::from_parts(meta, params).unwrap()
}

fn toy_hyper() -> TrainHyper {
    TrainHyper {
        lr: 1e-3,
        batch: 32,
        target_sync: 25,
        log_every: 250,
        episode_len: 32,
        optimistic: true,
        ..TrainHyper::default()
    }
}

/// Constant-cost toy: the imitator always reports the same observation and
/// the network's tokens carry no action history, so there is a single state
/// and the fixed point is `Q = g / (1 − γ)` for every joint action.
fn constant_cost_run(steps: u64, seed: u64) -> (QNetwork, ExtendedState, f64) {
    let tasks = delay_only();
    let imitator_layout = TaskLayout::new(&tasks, &devices(2), 1.0);
    // RTT of 2 limits: one violation, cost g = 1 every step.
    let imitator = constant_imitator(&imitator_layout, &tasks.delay_ids(), &[2.0]);
    let cost = CostParams::new(1.0 / 600e6, 0.95, &tasks).unwrap();
    let cfg = QNetConfig {
        regions: 1,
        hidden: 64,
        ..toy_cfg()
    };
    let net = QNetwork::new(cfg, toy_space(), TaskLayout::new(&tasks, &[], 1.0), seed).unwrap();
    let seed_state = ExtendedState::filled(
        2,
        Triple {
            region: 0,
            observation: crate::imitator::imitate(&imitator, &toy_space().decode(&[0, 0]).unwrap()).unwrap(),
            action: SchedulingAction::default(),
        },
    );
    let mut learner = Learner::new(net);
    let ctx = OfflineContext {
        pattern: 1,
        region: 0,
        imitator: &imitator,
        cost: &cost,
        seeds: vec![seed_state.clone()],
    };
    let hyper = TrainHyper {
        lr: 3e-3,
        lr_decay: 0.999,
        target_sync: 10,
        batch: 64,
        ..toy_hyper()
    };
    let curve = offline_train(&mut learner, &[ctx], &hyper, steps, seed + 3).unwrap();
    assert!(curve.iter().all(|r| r.mean_cost == 1.0));
    (learner.net, seed_state, 1.0 / (1.0 - 0.95))
}

#[test]
fn constant_cost_converges_to_fixed_point() {
    for seed in [0, 7] {
        let (net, es, fixed) = constant_cost_run(5000, seed);
        let tables = q_forward(&net, &es).unwrap();
        for joint in joint_actions(&net.space) {
            let q = joint_q(&tables, &joint);
            assert!((q - fixed).abs() < 1e-2, "seed {seed}: Q{joint:?} = {q}");
        }
    }
}

#[test]
fn greedy_prefers_cheaper_action_after_training() {
    let tasks = with_file();
    let devs = devices(2);
    let layout = TaskLayout::new(&tasks, &devs, 1.0);
    let active = vec![TaskId::file(1, 0, 0), TaskId::delay(1, 0, 0)];
    // Device 1 chooses the file cap (0 or r_max); the imitator reports the
    // cap as throughput and a fixed RTT, so the larger cap costs less.
    let space = ActionSpace::new(
        devs.iter()
            .map(|&device| DeviceSpace {
                device,
                vi_grid: vec![7],
                be_grid: vec![15],
                files: tasks.file_tasks_of(device),
                r_max_bps: tasks.file_tasks_of(device).iter().map(|_| 600e6).collect(),
                cap_levels: 2,
                fixed_cw: None,
            })
            .collect(),
    )
    .unwrap();
    assert_eq!(space.sizes(), vec![1, 2]);
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dim = layout.action_dim();
    Mlp::new(&mut params, "imitator", &[dim, dim, 2], &mut rng).unwrap();
    for id in 0..params.len() {
        params.value_mut(id).data_mut().fill(0.0);
    }
    let w0 = params.id("imitator.0.w").unwrap();
    for i in 0..dim {
        params.value_mut(w0).set(i, i, 1.0);
    }
    let w1 = params.id("imitator.1.w").unwrap();
    params.value_mut(w1).set(0, 0, 1.0);
    let b1 = params.id("imitator.1.b").unwrap();
    params.value_mut(b1).set(0, 1, 0.5);
    let imitator = imitator_from(&layout, &active, params);

    let cost = CostParams::new(1.0 / 600e6, 0.95, &tasks).unwrap();
    let mut cfg = toy_cfg();
    cfg.regions = 1;
    let net = QNetwork::new(cfg, space, layout, 13).unwrap();
    let start = Triple {
        region: 0,
        observation: crate::imitator::imitate(&imitator, &net.space.decode(&[0, 0]).unwrap()).unwrap(),
        action: net.space.decode(&[0, 0]).unwrap(),
    };
    let seed_state = ExtendedState::filled(2, start);
    let mut learner = Learner::new(net);
    let ctx = OfflineContext {
        pattern: 1,
        region: 0,
        imitator: &imitator,
        cost: &cost,
        seeds: vec![seed_state.clone()],
    };
    offline_train(&mut learner, &[ctx], &toy_hyper(), 1500, 4).unwrap();
    let tables = q_forward(&learner.net, &seed_state).unwrap();
    assert_eq!(greedy_indices(&tables, &learner.net.space), vec![0, 1]);
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let tasks = delay_only();
    let layout = TaskLayout::new(&tasks, &devices(2), 1.0);
    let imitator = constant_imitator(&layout, &tasks.delay_ids(), &[0.5]);
    let cost = CostParams::new(1.0, 0.95, &tasks).unwrap();
    let mut learner = Learner::new(toy_net(14));
    let before = learner.net.params.clone();
    let ctx = OfflineContext {
        pattern: 1,
        region: 0,
        imitator: &imitator,
        cost: &cost,
        seeds: vec![],
    };
    assert!(offline_train(&mut learner, &[ctx], &toy_hyper(), 0, 1).unwrap().is_empty());
    assert_eq!(learner.net.params.value(0), before.value(0));
    assert_eq!(learner.step, 0);
}

fn param_values(p: &ParamStore) -> Vec<f64> {
    (0..p.len()).flat_map(|i| p.value(i).data().to_vec()).collect()
}

#[test]
fn target_is_frozen_between_syncs() {
    let tasks = delay_only();
    let layout = TaskLayout::new(&tasks, &devices(2), 1.0);
    let imitator = constant_imitator(&layout, &tasks.delay_ids(), &[0.5]);
    let cost = CostParams::new(1.0, 0.95, &tasks).unwrap();
    let net = toy_net(15);
    let seed_state = random_state(&net, &mut ChaCha8Rng::seed_from_u64(15));
    let mut learner = Learner::new(net);
    let ctx = || OfflineContext {
        pattern: 1,
        region: 0,
        imitator: &imitator,
        cost: &cost,
        seeds: vec![seed_state.clone()],
    };
    let hyper = TrainHyper {
        target_sync: 50,
        batch: 8,
        ..toy_hyper()
    };
    offline_train(&mut learner, &[ctx()], &hyper, 50, 1).unwrap();
    let synced = param_values(&learner.net.params);
    assert_eq!(param_values(&learner.net.target), synced);
    offline_train(&mut learner, &[ctx()], &hyper, 30, 2).unwrap();
    assert_eq!(learner.step, 80);
    assert_eq!(param_values(&learner.net.target), synced);
    assert_ne!(param_values(&learner.net.params), synced);
}

#[test]
fn offline_training_is_deterministic_and_checkpoints_round_trip() {
    let tasks = delay_only();
    let layout = TaskLayout::new(&tasks, &devices(2), 1.0);
    let imitator = constant_imitator(&layout, &tasks.delay_ids(), &[1.5]);
    let cost = CostParams::new(1.0, 0.95, &tasks).unwrap();
    let run = || {
        let net = toy_net(16);
        let seed_state = random_state(&net, &mut ChaCha8Rng::seed_from_u64(16));
        let mut learner = Learner::new(net);
        let ctx = OfflineContext {
            pattern: 1,
            region: 1,
            imitator: &imitator,
            cost: &cost,
            seeds: vec![seed_state],
        };
        let curve = offline_train(&mut learner, &[ctx], &toy_hyper(), 120, 5).unwrap();
        (learner, curve)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(ca, cb);
    assert_eq!(param_values(&a.net.params), param_values(&b.net.params));
    assert_eq!(a.counts, b.counts);
    assert_eq!(a.counts.total(), 240);

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path(), "reinwifi").unwrap();
    let back = Learner::load(dir.path(), "reinwifi").unwrap();
    assert_eq!(back.step, a.step);
    assert_eq!(back.counts, a.counts);
    assert_eq!(param_values(&back.net.params), param_values(&a.net.params));
    assert_eq!(param_values(&back.net.target), param_values(&a.net.target));
    assert!(matches!(Learner::load(dir.path(), "missing"), Err(crate::Error::MissingCheckpoint(_))));

    let path = dir.path().join("curve.csv");
    write_curve_csv(&path, &ca).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("step,td_loss,mean_cost,epsilon\n"));
}

#[test]
fn greedy_rollout_is_reproducible_and_checks_pattern() {
    use crate::quantizer::{NormStats, RegionModel};
    use crate::simnet::{InterferenceSpec, LinkSpec, MacTiming, Scenario, TrafficPattern};

    let tasks = with_file();
    let sc = Scenario {
        name: "toy".into(),
        devices: devices(2),
        links: vec![LinkSpec {
            from: DeviceId(1),
            to: DeviceId(0),
            rate_bps: 400e6,
        }],
        pattern: TrafficPattern {
            id: 1,
            active: tasks.iter().map(|t| t.id).collect(),
        },
        tasks: tasks.clone(),
        interference: InterferenceSpec::default(),
        timing: MacTiming {
            period_s: 0.1,
            ..MacTiming::default()
        },
        seed: 0,
    };
    let layout = TaskLayout::new(&tasks, &sc.devices, sc.timing.period_s);
    let space = ActionSpace::standard(&tasks, &sc.devices).unwrap();
    let mut cfg = toy_cfg();
    cfg.regions = 3;
    let net = QNetwork::new(cfg, space, layout, 17).unwrap();
    let rm = RegionModel {
        pattern: 1,
        centers: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        stats: NormStats::IDENTITY,
    };
    let cost = CostParams::new(1.0 / 600e6 / 0.1, 0.95, &tasks).unwrap();
    let testing = SchedulingAction::uniform(&tasks, &sc.devices, CwPair::new(7, 7), 300e6);
    let ctx = OnlineContext {
        scenario: &sc,
        region_model: &rm,
        region_offset: 1,
        cost: &cost,
        testing_action: &testing,
        test_fraction: 0.1,
    };
    let hyper = TrainHyper::default();
    let mut l1 = Learner::new(net);
    let mut l2 = l1.clone();
    let (r1, _) = run_online(&mut l1, &ctx, &hyper, 5, OnlineMode::GREEDY, 21).unwrap();
    let (r2, _) = run_online(&mut l2, &ctx, &hyper, 5, OnlineMode::GREEDY, 21).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(param_values(&l1.net.params), param_values(&l2.net.params));
    assert!(r1.iter().all(|r| r.epsilon == 0.0 && r.td_loss.is_none()));
    let cap = r1[0].action.caps_bps[&TaskId::file(1, 0, 0)];
    for r in &r1 {
        assert!(r.observation.throughput_bits[&TaskId::file(1, 0, 0)] <= cap * 0.1 * 1.0000001 + 1.0);
    }

    let wrong = RegionModel { pattern: 2, ..rm.clone() };
    let bad = OnlineContext {
        region_model: &wrong,
        ..ctx.clone()
    };
    assert!(run_online(&mut l1, &bad, &hyper, 1, OnlineMode::GREEDY, 1).is_err());
}
