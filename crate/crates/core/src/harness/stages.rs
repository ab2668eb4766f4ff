//! The pipeline stages. Each reads its inputs from the run directory,
//! writes its artifacts there and returns the files it wrote.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Policy, STANDARD_CW};
use serde::{Deserialize, Serialize};

use crate::agent::{
    offline_train, online_train, run_online, write_curve_csv, ActionSpace, ExtendedState, Learner, OfflineContext, OnlineContext,
    OnlineMode, PeriodRecord, PeriodStream, QNetConfig, QNetwork, Triple,
};
use crate::encoding::TaskLayout;
use crate::error::{Error, Result};
use crate::imitator::{partition, train_imitator, ImitatorModel, PreliminaryRecord};
use crate::model::{compute_cost, CostParams, SchedulingAction, TaskId};
use crate::quantizer::{fit, kmeans, vectorize, NormStats, RegionModel};
use crate::simnet::{run_period, run_split_period, sample_interference, Scenario};

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.jsonl")
    }

    pub fn regions(&self) -> PathBuf {
        self.root.join("regions")
    }

    pub fn region_model(&self, pattern: u32) -> PathBuf {
        self.regions().join(format!("pattern_{pattern}.json"))
    }

    pub fn elbow(&self) -> PathBuf {
        self.regions().join("elbow.csv")
    }

    pub fn imitators(&self) -> PathBuf {
        self.root.join("imitators")
    }

    pub fn imitator_curves(&self) -> PathBuf {
        self.imitators().join("loss_curves.csv")
    }

    pub fn agent(&self) -> PathBuf {
        self.root.join("agent")
    }

    pub fn offline_curve(&self, policy: Policy) -> PathBuf {
        self.agent().join(format!("{policy}_curve.csv"))
    }

    pub fn online(&self) -> PathBuf {
        self.root.join("online")
    }

    pub fn online_stem(policy: Policy, scenario: &str, seed: u64) -> String {
        format!("{policy}_{scenario}_seed{seed}")
    }

    pub fn online_periods(&self) -> PathBuf {
        self.online().join("periods.csv")
    }

    pub fn online_summary(&self) -> PathBuf {
        self.online().join("summary.csv")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn metrics(&self) -> PathBuf {
        self.eval().join("metrics.csv")
    }

    pub fn summary(&self) -> PathBuf {
        self.eval().join("summary.csv")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn flush<W: Write>(w: &mut csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Deterministic sub-seed for a named stream of the experiment.
pub fn derive_seed(master: u64, stream: &str, key: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for part in [stream, key] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(index.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("eight bytes"))
}

/// Q-network input layout shared by every scenario of the experiment.
pub fn experiment_layout(cfg: &ExperimentConfig) -> Result<TaskLayout> {
    let sc = cfg.resolve_scenario(&cfg.collection.scenarios[0])?;
    Ok(TaskLayout::new(&sc.tasks, &sc.devices, sc.timing.period_s))
}

/// Action space of a learned policy.
pub fn policy_space(cfg: &ExperimentConfig, policy: Policy) -> Result<ActionSpace> {
    let (tasks, devices) = cfg.universe()?;
    let full = ActionSpace::standard(&tasks, &devices)?;
    match policy {
        Policy::Reinwifi => Ok(full),
        Policy::RateOnly => full.with_fixed_cw(STANDARD_CW),
        Policy::Edca => Err(Error::Contract("edca has no learned action space".into())),
    }
}

// ---------------------------------------------------------------- collect

/// Runs S periods round-robin over the collection scenarios: the testing
/// action for the first part of each period, a uniformly random action on
/// the grids for the rest. One JSON record per line.
pub fn collect(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let scenarios = cfg.resolve_all(&cfg.collection.scenarios)?;
    let spaces = scenarios
        .iter()
        .map(|sc| ActionSpace::standard(&sc.tasks, &sc.devices))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&run.root)?;
    let path = run.dataset();
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    for i in 0..cfg.collection.records {
        let sc = &scenarios[i % scenarios.len()];
        let space = &spaces[i % scenarios.len()];
        let seed = derive_seed(cfg.seed, "collect", "", i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let loads = sample_interference(sc, &mut rng);
        let idx: Vec<usize> = space.sizes().iter().map(|&n| rng.gen_range(0..n)).collect();
        let random_action = space.decode(&idx)?;
        let testing_action = cfg.testing_action(sc)?;
        let (test, main) = run_split_period(sc, &testing_action, &random_action, cfg.collection.test_fraction, &loads, rng.gen())?;
        let record = PreliminaryRecord {
            scenario: sc.name.clone(),
            pattern: sc.pattern.id,
            seed,
            interference_bps: loads,
            testing_action,
            testing_observation: test.observation,
            random_action,
            observation: main.observation,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    log::info!("collected {} records into {}", cfg.collection.records, path.display());
    Ok(vec![path])
}

pub fn read_dataset(path: &Path) -> Result<Vec<PreliminaryRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

// --------------------------------------------------------------- quantize

/// Active tasks per traffic pattern of the collection scenarios.
pub fn pattern_actives(cfg: &ExperimentConfig) -> Result<BTreeMap<u32, Vec<TaskId>>> {
    Ok(cfg
        .resolve_all(&cfg.collection.scenarios)?
        .into_iter()
        .map(|sc| (sc.pattern.id, sc.pattern.active))
        .collect())
}

/// Fits the region model of every collected traffic pattern on its testing
/// observations, plus an elbow table of K-means inertia against K.
pub fn quantize(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let records = read_dataset(&run.dataset())?;
    let actives = pattern_actives(cfg)?;
    create_dir(&run.regions())?;
    let mut written = Vec::new();
    let elbow_path = run.elbow();
    let mut elbow = csv_writer(&elbow_path)?;
    elbow.write_record(["pattern", "k", "inertia"])?;
    for (&pattern, active) in &actives {
        let obs: Vec<_> = records
            .iter()
            .filter(|r| r.pattern == pattern)
            .map(|r| r.testing_observation.clone())
            .collect();
        let k = cfg.regions_of(pattern)?;
        let ns = NormStats::from_observations(&obs, active)?;
        let seed = derive_seed(cfg.seed, "quantize", "", pattern as u64);
        let model = fit(&obs, k, &ns, pattern, seed)?;
        let path = run.region_model(pattern);
        model.save(&path)?;
        written.push(path);
        let points: Vec<Vec<f64>> = obs.iter().map(|o| vectorize(o, &ns)).collect();
        for k in 1..=cfg.quantizer.elbow_max_k.min(points.len()) {
            let inertia = kmeans(&points, k, seed)?.inertia;
            elbow.write_record([pattern.to_string(), k.to_string(), inertia.to_string()])?;
        }
        log::info!("pattern {pattern}: {} regions from {} observations", model.k(), obs.len());
    }
    flush(&mut elbow, &elbow_path)?;
    written.push(elbow_path);
    Ok(written)
}

pub fn load_region_models(cfg: &ExperimentConfig, run: &RunDir) -> Result<BTreeMap<u32, RegionModel>> {
    pattern_actives(cfg)?
        .keys()
        .map(|&p| {
            let path = run.region_model(p);
            if !path.exists() {
                return Err(Error::MissingCheckpoint(path));
            }
            Ok((p, RegionModel::load(&path)?))
        })
        .collect()
}

// ------------------------------------------------------- train-imitators

/// Trains one imitator per (pattern, region) on the records whose testing
/// observation falls in that region.
pub fn train_imitators(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let records = read_dataset(&run.dataset())?;
    let models = load_region_models(cfg, run)?;
    let actives = pattern_actives(cfg)?;
    let layout = experiment_layout(cfg)?;
    let parts = partition(&records, &models)?;
    create_dir(&run.imitators())?;
    let curve_path = run.imitator_curves();
    let mut curves = csv_writer(&curve_path)?;
    curves.write_record(["pattern", "region", "step", "train_loss", "holdout_loss"])?;
    let mut written = Vec::new();
    for (&pattern, regions) in &parts {
        for (&region, subset) in regions {
            let seed = derive_seed(cfg.seed, "imitator", &pattern.to_string(), region as u64);
            let (model, rows) = train_imitator(subset, &layout, &actives[&pattern], region, &cfg.imitator, seed)?;
            model.save(&run.imitators())?;
            let (meta, bin) = ImitatorModel::paths(&run.imitators(), pattern, region);
            written.extend([meta, bin]);
            for r in rows {
                curves.write_record([
                    pattern.to_string(),
                    region.to_string(),
                    r.step.to_string(),
                    r.train_loss.to_string(),
                    r.holdout_loss.map(|l| l.to_string()).unwrap_or_default(),
                ])?;
            }
            log::info!(
                "imitator p{pattern} r{region}: {} samples, train loss {:.4}",
                model.meta.samples,
                model.meta.train_loss
            );
        }
        for k in 0..models[&pattern].k() {
            if !regions.contains_key(&k) {
                log::warn!("pattern {pattern} region {k} has no records; no imitator");
            }
        }
    }
    flush(&mut curves, &curve_path)?;
    written.push(curve_path);
    Ok(written)
}

// --------------------------------------------------------- train-offline

/// Initial states of a region's episodes: each record gives the history
/// ending in its random action, alternating with the testing action.
pub fn seed_states(subset: &[&PreliminaryRecord], region: usize, history: usize) -> Vec<ExtendedState> {
    subset
        .iter()
        .map(|r| {
            let test = Triple {
                region,
                observation: r.testing_observation.clone(),
                action: r.testing_action.clone(),
            };
            let random = Triple {
                region,
                observation: r.observation.clone(),
                action: r.random_action.clone(),
            };
            let steps = (0..history).map(|i| if (history - 1 - i) % 2 == 0 { random.clone() } else { test.clone() });
            ExtendedState::from_entries(steps).expect("history is positive")
        })
        .collect()
}

pub fn qnet_config(cfg: &ExperimentConfig) -> QNetConfig {
    QNetConfig {
        regions: cfg.total_regions(),
        ..cfg.qnet
    }
}

pub fn pattern_costs(cfg: &ExperimentConfig) -> Result<BTreeMap<u32, CostParams>> {
    cfg.resolve_all(&cfg.collection.scenarios)?
        .iter()
        .map(|sc| Ok((sc.pattern.id, cfg.cost_params(sc)?)))
        .collect()
}

/// Trains the reinwifi and rate_only Q-networks against the imitators.
pub fn train_offline(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let records = read_dataset(&run.dataset())?;
    let models = load_region_models(cfg, run)?;
    let parts = partition(&records, &models)?;
    let offsets = cfg.region_offsets();
    let costs = pattern_costs(cfg)?;
    let mut imitators = Vec::new();
    for (&pattern, regions) in &parts {
        for (&region, subset) in regions {
            let model = ImitatorModel::load(&run.imitators(), pattern, region)?;
            imitators.push((pattern, region, model, seed_states(subset, offsets[&pattern] + region, cfg.qnet.history)));
        }
    }
    let contexts: Vec<OfflineContext> = imitators
        .iter()
        .map(|(pattern, region, model, seeds)| OfflineContext {
            pattern: *pattern,
            region: offsets[pattern] + region,
            imitator: model,
            cost: &costs[pattern],
            seeds: seeds.clone(),
        })
        .collect();
    create_dir(&run.agent())?;
    let layout = experiment_layout(cfg)?;
    let mut written = Vec::new();
    for policy in [Policy::Reinwifi, Policy::RateOnly] {
        let net_seed = derive_seed(cfg.seed, "qnet", policy.name(), 0);
        let net = QNetwork::new(qnet_config(cfg), policy_space(cfg, policy)?, layout.clone(), net_seed)?;
        let mut learner = Learner::new(net);
        let seed = derive_seed(cfg.seed, "offline", policy.name(), 0);
        let curve = offline_train(&mut learner, &contexts, &cfg.offline.hyper, cfg.offline.steps, seed)?;
        learner.save(&run.agent(), policy.name())?;
        written.extend(Learner::paths(&run.agent(), policy.name()));
        let curve_path = run.offline_curve(policy);
        write_curve_csv(&curve_path, &curve)?;
        written.push(curve_path);
        log::info!(
            "offline {policy}: {} steps, final mean cost {:.4}",
            cfg.offline.steps,
            curve.last().map_or(f64::NAN, |r| r.mean_cost)
        );
    }
    Ok(written)
}

pub fn load_policy(run: &RunDir, policy: Policy) -> Result<Learner> {
    Learner::load(&run.agent(), policy.name())
}

// ---------------------------------------------------------- train-online

/// A scenario ready for live control: region model, region offset, cost
/// parameters and testing action.
pub struct LiveScenario {
    pub scenario: Scenario,
    pub region_model: RegionModel,
    pub region_offset: usize,
    pub cost: CostParams,
    pub testing_action: SchedulingAction,
}

impl LiveScenario {
    pub fn new(cfg: &ExperimentConfig, run: &RunDir, reference: &str) -> Result<Self> {
        let scenario = cfg.resolve_scenario(reference)?;
        let path = run.region_model(scenario.pattern.id);
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path));
        }
        let region_offset = *cfg
            .region_offsets()
            .get(&scenario.pattern.id)
            .ok_or_else(|| Error::Config(format!("no regions configured for pattern {}", scenario.pattern.id)))?;
        Ok(LiveScenario {
            region_model: RegionModel::load(&path)?,
            region_offset,
            cost: cfg.cost_params(&scenario)?,
            testing_action: cfg.testing_action(&scenario)?,
            scenario,
        })
    }

    pub fn context(&self, test_fraction: f64) -> OnlineContext<'_> {
        OnlineContext {
            scenario: &self.scenario,
            region_model: &self.region_model,
            region_offset: self.region_offset,
            cost: &self.cost,
            testing_action: &self.testing_action,
            test_fraction,
        }
    }
}

/// Standard EDCA for whole periods on the stream of `seed`. The first
/// `history` draws are skipped so period t sees the same interference and
/// simulator seed as period t of a learned run.
pub fn run_edca(sc: &Scenario, cost: &CostParams, history: usize, periods: usize, seed: u64) -> Result<Vec<PeriodRecord>> {
    let mut stream = PeriodStream::new(seed);
    for _ in 0..history {
        stream.next(sc);
    }
    let action = ExperimentConfig::edca_action(sc);
    (1..=periods)
        .map(|period| {
            let (loads, s) = stream.next(sc);
            let r = run_period(sc, &action, sc.timing.period_s, &loads, s)?;
            Ok(PeriodRecord {
                period,
                region: 0,
                loads_bps: loads,
                cost: compute_cost(&r.observation, cost)?,
                epsilon: 0.0,
                td_loss: None,
                action: action.clone(),
                observation: r.observation,
            })
        })
        .collect()
}

/// Runs `policy` for `periods` periods on the stream of `seed`: EDCA, or the
/// learner greedily without updates.
pub fn run_policy(
    cfg: &ExperimentConfig,
    live: &LiveScenario,
    policy: Policy,
    learner: Option<&mut Learner>,
    periods: usize,
    seed: u64,
) -> Result<Vec<PeriodRecord>> {
    match (policy, learner) {
        (Policy::Edca, _) => run_edca(&live.scenario, &live.cost, cfg.qnet.history, periods, seed),
        (_, Some(l)) => Ok(run_online(l, &live.context(cfg.online.test_fraction), &cfg.online.hyper, periods, OnlineMode::GREEDY, seed)?.0),
        (p, None) => Err(Error::Contract(format!("policy {p} needs a learner"))),
    }
}

/// One line of the online comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineSummaryRow {
    pub policy: Policy,
    pub scenario: String,
    pub seed: u64,
    /// `online`, `offline` or `edca`.
    pub variant: String,
    pub final_mean: f64,
    pub mean: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Fine-tunes the offline checkpoints online on each configured scenario
/// and seed. The same period stream is replayed for the offline-only
/// greedy policy and for EDCA, and the final-window mean costs of the three
/// are tabulated.
pub fn train_online(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let on = &cfg.online;
    create_dir(&run.online())?;
    let periods_path = run.online_periods();
    let summary_path = run.online_summary();
    let mut periods_csv = csv_writer(&periods_path)?;
    periods_csv.write_record(["policy", "scenario", "seed", "variant", "period", "cost", "epsilon", "td_loss"])?;
    let mut summary = csv_writer(&summary_path)?;
    let mut written = Vec::new();
    for reference in &on.scenarios {
        let live = LiveScenario::new(cfg, run, reference)?;
        let name = live.scenario.name.clone();
        let edca_runs = (0..on.seeds)
            .map(|e| run_edca(&live.scenario, &live.cost, cfg.qnet.history, on.periods, derive_seed(cfg.seed, "online", &name, e)))
            .collect::<Result<Vec<_>>>()?;
        for &policy in on.policies.iter().filter(|p| p.is_learned()) {
            for e in 0..on.seeds {
                let seed = derive_seed(cfg.seed, "online", &name, e);
                let mut learner = load_policy(run, policy)?;
                let (online, curve) = online_train(&mut learner, &live.context(on.test_fraction), &on.hyper, on.periods, seed)?;
                let stem = RunDir::online_stem(policy, &name, e);
                learner.save(&run.online(), &stem)?;
                written.extend(Learner::paths(&run.online(), &stem));
                let curve_path = run.online().join(format!("{stem}_curve.csv"));
                write_curve_csv(&curve_path, &curve)?;
                written.push(curve_path);
                let offline = run_policy(cfg, &live, policy, Some(&mut load_policy(run, policy)?), on.periods, seed)?;
                for (variant, records) in [("online", &online), ("offline", &offline), ("edca", &edca_runs[e as usize])] {
                    for r in records.iter() {
                        periods_csv.write_record([
                            policy.name().to_string(),
                            name.clone(),
                            e.to_string(),
                            variant.to_string(),
                            r.period.to_string(),
                            r.cost.to_string(),
                            r.epsilon.to_string(),
                            r.td_loss.map(|l| l.to_string()).unwrap_or_default(),
                        ])?;
                    }
                    let start = records.len().saturating_sub(on.final_window);
                    summary.serialize(OnlineSummaryRow {
                        policy,
                        scenario: name.clone(),
                        seed: e,
                        variant: variant.to_string(),
                        final_mean: mean(records[start..].iter().map(|r| r.cost)),
                        mean: mean(records.iter().map(|r| r.cost)),
                    })?;
                }
                log::info!(
                    "online {policy} {name} seed {e}: final-window cost {:.4} (offline {:.4}, edca {:.4})",
                    mean(online[online.len().saturating_sub(on.final_window)..].iter().map(|r| r.cost)),
                    mean(offline[offline.len().saturating_sub(on.final_window)..].iter().map(|r| r.cost)),
                    mean(edca_runs[e as usize][on.periods.saturating_sub(on.final_window)..].iter().map(|r| r.cost)),
                );
            }
        }
    }
    flush(&mut periods_csv, &periods_path)?;
    flush(&mut summary, &summary_path)?;
    written.extend([periods_path, summary_path]);
    Ok(written)
}

pub fn read_online_summary(path: &Path) -> Result<Vec<OnlineSummaryRow>> {
    read_csv(path)
}

pub(crate) fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file).deserialize().map(|r| r.map_err(Error::from)).collect()
}

// --------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub scenario: String,
    pub policy: Policy,
    /// Mean cost over all periods and seeds.
    pub mean: f64,
    /// Standard deviation of the per-seed mean costs.
    pub std: f64,
    /// Number of seeds.
    pub n: u64,
}

/// Runs every configured policy greedily on every evaluation scenario. All
/// policies of a scenario share each seed's period stream.
pub fn evaluate(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
    let ev = &cfg.evaluation;
    let (tasks, _) = cfg.universe()?;
    create_dir(&run.eval())?;
    let metrics_path = run.metrics();
    let summary_path = run.summary();
    let mut metrics = csv_writer(&metrics_path)?;
    let mut header: Vec<String> = ["period", "policy", "scenario", "seed", "cost"].map(String::from).to_vec();
    for t in tasks.iter() {
        header.push(format!("{}_throughput_bits", t.id));
        header.push(format!("{}_rtt_s", t.id));
    }
    metrics.write_record(&header)?;
    let mut summary = csv_writer(&summary_path)?;
    let mut learners = BTreeMap::new();
    for &p in ev.policies.iter().filter(|p| p.is_learned()) {
        learners.insert(p, load_policy(run, p)?);
    }
    for reference in &ev.scenarios {
        let live = LiveScenario::new(cfg, run, reference)?;
        let name = live.scenario.name.clone();
        for &policy in &ev.policies {
            let mut seed_means = Vec::new();
            let mut all = Vec::new();
            for e in 0..ev.seeds {
                let seed = derive_seed(cfg.seed, "eval", &name, e);
                let records = run_policy(cfg, &live, policy, learners.get_mut(&policy), ev.periods, seed)?;
                for r in &records {
                    let mut row = vec![r.period.to_string(), policy.name().into(), name.clone(), e.to_string(), r.cost.to_string()];
                    for t in tasks.iter() {
                        let cell = |m: &BTreeMap<TaskId, f64>| m.get(&t.id).map(|v| v.to_string()).unwrap_or_default();
                        row.push(cell(&r.observation.throughput_bits));
                        row.push(cell(&r.observation.rtt_s));
                    }
                    metrics.write_record(&row)?;
                    all.push(r.cost);
                }
                seed_means.push(mean(records.iter().map(|r| r.cost)));
            }
            let m = mean(all.iter().copied());
            let std = if seed_means.len() > 1 {
                statrs::statistics::Statistics::std_dev(seed_means.iter())
            } else {
                0.0
            };
            log::info!("evaluate {name} {policy}: mean cost {m:.4} ± {std:.4}");
            summary.serialize(EvalSummaryRow {
                scenario: name.clone(),
                policy,
                mean: m,
                std,
                n: ev.seeds,
            })?;
        }
    }
    flush(&mut metrics, &metrics_path)?;
    flush(&mut summary, &summary_path)?;
    Ok(vec![metrics_path, summary_path])
}

pub fn read_eval_summary(path: &Path) -> Result<Vec<EvalSummaryRow>> {
    read_csv(path)
}
