//! Offline training against imitators, online training and evaluation
//! against the simulator, checkpoints and training curves.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::explore::{epsilon_greedy, ucb_select, EpsilonSchedule, ReplayBuffer, VisitCounts};
use super::qnet::{td_loss, ExtendedState, QNetConfig, QNetwork, Transition, Triple};
use super::space::ActionSpace;
use crate::encoding::TaskLayout;
use crate::error::{Error, Result};
use crate::imitator::{imitate, ImitatorModel};
use crate::model::{compute_cost, CostParams, QosObservation, SchedulingAction};
use crate::neural::{AdamConfig, ParamStore};
use crate::quantizer::{region_index, RegionModel};
use crate::simnet::{run_period, run_split_period, InterferenceProcess, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub gamma: f64,
    pub lr: f64,
    /// Adam's ε; larger values damp steps once TD errors are tiny.
    pub adam_eps: f64,
    /// Learning rate after `u` updates is `lr · lr_decay^u`.
    pub lr_decay: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    /// Target copy every this many steps (offline) or periods (online).
    pub target_sync: u64,
    /// One gradient update every this many steps.
    pub train_every: u64,
    pub epsilon: EpsilonSchedule,
    /// Weight of the UCB count term.
    pub eta: f64,
    /// Subtract the UCB bonus instead of adding it; untried actions go first.
    pub optimistic: bool,
    pub episode_len: usize,
    /// Curve rows aggregate this many steps.
    pub log_every: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            gamma: 0.95,
            lr: 3e-4,
            adam_eps: 1e-4,
            lr_decay: 1.0,
            batch: 64,
            replay_capacity: 50_000,
            target_sync: 500,
            train_every: 1,
            epsilon: EpsilonSchedule::default(),
            eta: 1e-3,
            optimistic: false,
            episode_len: 64,
            log_every: 100,
        }
    }
}

/// One row of a training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub td_loss: Option<f64>,
    pub mean_cost: f64,
    pub epsilon: f64,
}

pub fn write_curve_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Default)]
struct CurveAcc {
    loss: f64,
    losses: usize,
    cost: f64,
    costs: usize,
}

impl CurveAcc {
    fn row(&mut self, step: u64, epsilon: f64) -> CurveRow {
        let row = CurveRow {
            step,
            td_loss: (self.losses > 0).then(|| self.loss / self.losses as f64),
            mean_cost: self.cost / self.costs.max(1) as f64,
            epsilon,
        };
        *self = CurveAcc::default();
        row
    }
}

/// The Q-network with its exploration state and step counter.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: QNetwork,
    pub counts: VisitCounts,
    /// Offline steps taken so far (the UCB and ε clock).
    pub step: u64,
    pub updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LearnerMeta {
    cfg: QNetConfig,
    space: ActionSpace,
    layout: TaskLayout,
    step: u64,
    updates: u64,
    counts: VisitCounts,
}

impl Learner {
    pub fn new(net: QNetwork) -> Self {
        let counts = VisitCounts::new(net.cfg.regions, &net.space.sizes());
        Learner {
            net,
            counts,
            step: 0,
            updates: 0,
        }
    }

    /// One TD minimization step on a replay sample.
    pub fn update<R: Rng + ?Sized>(&mut self, replay: &ReplayBuffer<Transition>, hyper: &TrainHyper, rng: &mut R) -> Result<f64> {
        let batch = replay.sample(hyper.batch, rng);
        let (loss, grads) = td_loss(&self.net, &batch, hyper.gamma)?;
        self.net.params.adam_step(&grads, &AdamConfig {
            eps: hyper.adam_eps,
            ..AdamConfig::with_lr(hyper.lr * hyper.lr_decay.powf(self.updates as f64))
        })?;
        self.updates += 1;
        Ok(loss)
    }

    pub fn paths(dir: &Path, name: &str) -> [PathBuf; 3] {
        [
            dir.join(format!("{name}.json")),
            dir.join(format!("{name}.phi.bin")),
            dir.join(format!("{name}.target.bin")),
        ]
    }

    /// Writes φ (with optimizer moments), φ̄, counts and counters.
    pub fn save(&self, dir: &Path, name: &str) -> Result<()> {
        let [meta, phi, target] = Self::paths(dir, name);
        let m = LearnerMeta {
            cfg: self.net.cfg,
            space: self.net.space.clone(),
            layout: self.net.layout.clone(),
            step: self.step,
            updates: self.updates,
            counts: self.counts.clone(),
        };
        std::fs::write(&meta, serde_json::to_string(&m)?).map_err(|e| Error::io(&meta, e))?;
        self.net.params.save(&phi, true)?;
        self.net.target.save(&target, false)
    }

    pub fn load(dir: &Path, name: &str) -> Result<Self> {
        let [meta, phi, target] = Self::paths(dir, name);
        if !meta.exists() {
            return Err(Error::MissingCheckpoint(meta));
        }
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let m: LearnerMeta = serde_json::from_str(&text)?;
        let net = QNetwork::from_params(m.cfg, m.space, m.layout, ParamStore::load(&phi)?, ParamStore::load(&target)?)?;
        Ok(Learner {
            net,
            counts: m.counts,
            step: m.step,
            updates: m.updates,
        })
    }
}

/// One imitated region available to offline training.
#[derive(Debug, Clone)]
pub struct OfflineContext<'a> {
    pub pattern: u32,
    /// Region index over all patterns.
    pub region: usize,
    pub imitator: &'a ImitatorModel,
    pub cost: &'a CostParams,
    /// Candidate initial states for episodes in this region.
    pub seeds: Vec<ExtendedState>,
}

/// Runs `steps` offline steps: episodes of `episode_len` steps in a
/// uniformly drawn pattern and region, actions by UCB, next observations
/// from the region's imitator.
pub fn offline_train(learner: &mut Learner, contexts: &[OfflineContext], hyper: &TrainHyper, steps: u64, seed: u64) -> Result<Vec<CurveRow>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    if contexts.is_empty() || contexts.iter().any(|c| c.seeds.is_empty()) {
        return Err(Error::InsufficientData("offline training needs regions with seed states".into()));
    }
    let mut patterns: Vec<(u32, Vec<usize>)> = Vec::new();
    for (i, c) in contexts.iter().enumerate() {
        match patterns.iter_mut().find(|(p, _)| *p == c.pattern) {
            Some((_, v)) => v.push(i),
            None => patterns.push((c.pattern, vec![i])),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replay = ReplayBuffer::new(hyper.replay_capacity);
    let mut curve = Vec::new();
    let mut acc = CurveAcc::default();
    let mut episode: Option<(usize, ExtendedState, usize)> = None;
    for _ in 0..steps {
        let (ci, es, len) = match episode.take() {
            Some(e) if e.2 < hyper.episode_len => e,
            _ => {
                let group = &patterns[rng.gen_range(0..patterns.len())].1;
                let ci = group[rng.gen_range(0..group.len())];
                let seeds = &contexts[ci].seeds;
                (ci, seeds[rng.gen_range(0..seeds.len())].clone(), 0)
            }
        };
        let ctx = &contexts[ci];
        learner.step += 1;
        let t = learner.step;
        let epsilon = hyper.epsilon.value(t);
        let state = learner.net.encode_state(&es)?;
        let tables = learner.net.tables_encoded(&learner.net.params, &state)?;
        let idx = ucb_select(&tables, &mut learner.counts, t, ctx.region, hyper.eta, epsilon, hyper.optimistic, &learner.net.space, &mut rng)?;
        let action = learner.net.space.decode(&idx)?;
        let observation = imitate(ctx.imitator, &action)?;
        let cost = compute_cost(&observation, ctx.cost)?;
        let es = es.pushed(Triple {
            region: ctx.region,
            observation,
            action,
        });
        let next = learner.net.encode_state(&es)?;
        replay.push(Transition {
            state,
            action: idx,
            cost,
            next,
        });
        acc.cost += cost;
        acc.costs += 1;
        if replay.len() >= hyper.batch && t % hyper.train_every.max(1) == 0 {
            let loss = learner.update(&replay, hyper, &mut rng).map_err(|e| match e {
                Error::Diverged(m) => Error::Diverged(format!("offline step {t}: {m}")),
                e => e,
            })?;
            acc.loss += loss;
            acc.losses += 1;
        }
        if t % hyper.target_sync.max(1) == 0 {
            learner.net.sync_target()?;
        }
        if t % hyper.log_every.max(1) == 0 {
            curve.push(acc.row(t, epsilon));
        }
        episode = Some((ci, es, len + 1));
    }
    if acc.costs > 0 {
        curve.push(acc.row(learner.step, hyper.epsilon.value(learner.step)));
    }
    Ok(curve)
}

/// A live scenario for online training or evaluation.
#[derive(Debug, Clone)]
pub struct OnlineContext<'a> {
    pub scenario: &'a Scenario,
    pub region_model: &'a RegionModel,
    /// Offset of this pattern's regions in the global region numbering.
    pub region_offset: usize,
    pub cost: &'a CostParams,
    pub testing_action: &'a SchedulingAction,
    /// Share of each period reserved for the testing action.
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineMode {
    pub learn: bool,
    pub epsilon: EpsilonSchedule,
}

impl OnlineMode {
    pub const GREEDY: OnlineMode = OnlineMode {
        learn: false,
        epsilon: EpsilonSchedule::ZERO,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    /// Region of the period's testing phase (within its pattern).
    pub region: usize,
    pub loads_bps: Vec<f64>,
    pub cost: f64,
    pub epsilon: f64,
    pub td_loss: Option<f64>,
    pub action: SchedulingAction,
    pub observation: QosObservation,
}

/// Streams of per-period interference loads and simulator seeds shared by
/// every policy run with the same seed, so policies can be compared period
/// by period.
pub struct PeriodStream {
    interference: InterferenceProcess,
    seeds: ChaCha8Rng,
}

impl PeriodStream {
    pub fn new(seed: u64) -> Self {
        PeriodStream {
            interference: InterferenceProcess::new(seed),
            seeds: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed),
        }
    }

    pub fn next(&mut self, sc: &Scenario) -> (Vec<f64>, u64) {
        (self.interference.next_period(sc), self.seeds.gen())
    }
}

/// Controls `periods` simulated periods. Each period first applies the
/// testing action for `test_fraction` of the period (its observation fixes
/// the region that enters the next state), then the chosen action; the cost
/// uses the second phase only. N throwaway periods under the testing action
/// fill the initial state. With `mode.learn` transitions are replayed and
/// TD steps taken every period.
pub fn run_online(
    learner: &mut Learner,
    ctx: &OnlineContext,
    hyper: &TrainHyper,
    periods: usize,
    mode: OnlineMode,
    seed: u64,
) -> Result<(Vec<PeriodRecord>, Vec<CurveRow>)> {
    let sc = ctx.scenario;
    if ctx.region_model.pattern != sc.pattern.id {
        return Err(Error::Contract(format!(
            "region model of pattern {} used on scenario with pattern {}",
            ctx.region_model.pattern, sc.pattern.id
        )));
    }
    let mut stream = PeriodStream::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e71_0e71_0e71_0e71);
    let mut es: Option<ExtendedState> = None;
    for _ in 0..learner.net.cfg.history {
        let (loads, s) = stream.next(sc);
        let warm = run_period(sc, ctx.testing_action, sc.timing.period_s, &loads, s)?;
        let triple = Triple {
            region: ctx.region_offset + region_index(&warm.observation, ctx.region_model)?,
            observation: warm.observation,
            action: ctx.testing_action.clone(),
        };
        es = Some(match es {
            Some(w) => w.pushed(triple),
            None => ExtendedState::filled(learner.net.cfg.history, triple),
        });
    }
    let mut es = es.expect("history is positive");
    let mut replay = ReplayBuffer::new(hyper.replay_capacity);
    let mut records = Vec::with_capacity(periods);
    let mut curve = Vec::new();
    let mut acc = CurveAcc::default();
    for period in 1..=periods {
        let t = period as u64;
        let (loads, s) = stream.next(sc);
        let epsilon = mode.epsilon.value(t);
        let state = learner.net.encode_state(&es)?;
        let tables = learner.net.tables_encoded(&learner.net.params, &state)?;
        let idx = epsilon_greedy(&tables, epsilon, &learner.net.space, &mut rng);
        let action = learner.net.space.decode(&idx)?;
        let (test, main) = run_split_period(sc, ctx.testing_action, &action, ctx.test_fraction, &loads, s)?;
        let k = region_index(&test.observation, ctx.region_model)?;
        let cost = compute_cost(&main.observation, ctx.cost)?;
        es.push(Triple {
            region: ctx.region_offset + k,
            observation: main.observation.clone(),
            action: action.clone(),
        });
        let mut td = None;
        if mode.learn {
            replay.push(Transition {
                state,
                action: idx,
                cost,
                next: learner.net.encode_state(&es)?,
            });
            if replay.len() >= hyper.batch && t % hyper.train_every.max(1) == 0 {
                let loss = learner.update(&replay, hyper, &mut rng).map_err(|e| match e {
                    Error::Diverged(m) => Error::Diverged(format!("online period {period}: {m}")),
                    e => e,
                })?;
                acc.loss += loss;
                acc.losses += 1;
                td = Some(loss);
            }
            if t % hyper.target_sync.max(1) == 0 {
                learner.net.sync_target()?;
            }
        }
        acc.cost += cost;
        acc.costs += 1;
        if t % hyper.log_every.max(1) == 0 {
            curve.push(acc.row(t, epsilon));
        }
        records.push(PeriodRecord {
            period,
            region: k,
            loads_bps: loads,
            cost,
            epsilon,
            td_loss: td,
            action,
            observation: main.observation,
        });
    }
    if acc.costs > 0 {
        curve.push(acc.row(periods as u64, mode.epsilon.value(periods as u64)));
    }
    Ok((records, curve))
}

/// Online fine-tuning with the schedule of `hyper`.
pub fn online_train(learner: &mut Learner, ctx: &OnlineContext, hyper: &TrainHyper, periods: usize, seed: u64) -> Result<(Vec<PeriodRecord>, Vec<CurveRow>)> {
    run_online(
        learner,
        ctx,
        hyper,
        periods,
        OnlineMode {
            learn: true,
            epsilon: hyper.epsilon,
        },
        seed,
    )
}
