//! Experiment configuration (TOML). Every section has defaults, so a config
//! file only needs the values it changes.
//!
//! Scenario references are either a built-in scenario number (`"1"` to
//! `"11"`) or a path to a scenario TOML file, relative to the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::scenarios::builtin_scenario;
use crate::agent::{QNetConfig, TrainHyper};
use crate::error::{Error, Result};
use crate::imitator::ImitatorHyper;
use crate::model::{CostParams, CwPair, SchedulingAction, TaskSet};
use crate::simnet::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionConfig {
    /// Scenarios visited round-robin, one record per period.
    pub scenarios: Vec<String>,
    /// Number S of records.
    pub records: usize,
    /// Share of each period under the testing action.
    pub test_fraction: f64,
}

impl Default for CollectionConfig {
    fn default() -> Self {
        CollectionConfig {
            scenarios: (1..=5).map(|i| i.to_string()).collect(),
            records: 500,
            test_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternRegions {
    pub pattern: u32,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub regions: Vec<PatternRegions>,
    /// The elbow table covers K = 1 ..= this value.
    pub elbow_max_k: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            regions: [(1, 3), (2, 6), (3, 6)]
                .into_iter()
                .map(|(pattern, k)| PatternRegions { pattern, k })
                .collect(),
            elbow_max_k: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    pub steps: u64,
    pub hyper: TrainHyper,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            steps: 20_000,
            hyper: TrainHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Scenarios fine-tuned online, each from the offline checkpoint.
    pub scenarios: Vec<String>,
    pub policies: Vec<Policy>,
    pub periods: usize,
    /// Independent online runs per scenario.
    pub seeds: u64,
    /// Share ρ of each period under the testing action.
    pub test_fraction: f64,
    /// Final periods compared in the online summary.
    pub final_window: usize,
    pub hyper: TrainHyper,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            scenarios: vec!["7".into(), "9".into()],
            policies: vec![Policy::Reinwifi],
            periods: 1000,
            seeds: 1,
            test_fraction: 0.1,
            final_window: 100,
            hyper: TrainHyper {
                target_sync: 50,
                log_every: 50,
                ..TrainHyper::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub scenarios: Vec<String>,
    pub policies: Vec<Policy>,
    pub periods: usize,
    pub seeds: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            scenarios: (1..=5).map(|i| i.to_string()).collect(),
            policies: Policy::ALL.to_vec(),
            periods: 200,
            seeds: 10,
        }
    }
}

/// The fixed action applied in the testing phase of every period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestingActionConfig {
    pub cw_vi: u16,
    pub cw_be: u16,
    pub cap_bps: f64,
}

impl Default for TestingActionConfig {
    fn default() -> Self {
        TestingActionConfig {
            cw_vi: 7,
            cw_be: 7,
            cap_bps: 300e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    /// Reward per delivered bit; defaults to 1 / (r_max · T_s) with r_max
    /// the largest file-task rate.
    pub weight: Option<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig { weight: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Reinwifi,
    Edca,
    RateOnly,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Edca, Policy::RateOnly, Policy::Reinwifi];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Reinwifi => "reinwifi",
            Policy::Edca => "edca",
            Policy::RateOnly => "rate_only",
        }
    }

    pub fn is_learned(self) -> bool {
        self != Policy::Edca
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy `{s}` (reinwifi, edca, rate_only)")))
    }
}

/// Standard EDCA contention windows (VI 7, BE 15).
pub const STANDARD_CW: CwPair = CwPair::new(7, 15);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub out: PathBuf,
    pub collection: CollectionConfig,
    pub quantizer: QuantizerConfig,
    pub imitator: ImitatorHyper,
    /// `regions` is ignored and set from the quantizer.
    pub qnet: QNetConfig,
    pub offline: OfflineConfig,
    pub online: OnlineConfig,
    pub evaluation: EvaluationConfig,
    pub testing_action: TestingActionConfig,
    pub cost: CostConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            collection: CollectionConfig::default(),
            quantizer: QuantizerConfig::default(),
            imitator: ImitatorHyper::default(),
            qnet: QNetConfig::default(),
            offline: OfflineConfig::default(),
            online: OnlineConfig::default(),
            evaluation: EvaluationConfig::default(),
            testing_action: TestingActionConfig::default(),
            cost: CostConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base_dir.join(&self.out)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("collection.records", self.collection.records as u64),
            ("offline.steps", self.offline.steps),
            ("online.periods", self.online.periods as u64),
            ("online.seeds", self.online.seeds),
            ("evaluation.periods", self.evaluation.periods as u64),
            ("evaluation.seeds", self.evaluation.seeds),
            ("imitator.steps", self.imitator.steps as u64),
            ("qnet.history", self.qnet.history as u64),
            ("offline.hyper.batch", self.offline.hyper.batch as u64),
            ("online.hyper.batch", self.online.hyper.batch as u64),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, f) in [("collection", self.collection.test_fraction), ("online", self.online.test_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name}.test_fraction {f} outside (0, 1)")));
            }
        }
        if self.collection.scenarios.is_empty() {
            return Err(Error::Config("collection needs at least one scenario".into()));
        }
        if self.quantizer.regions.iter().any(|r| r.k == 0) {
            return Err(Error::Config("region counts must be positive".into()));
        }
        let collected = self.resolve_all(&self.collection.scenarios)?;
        let reference = &collected[0];
        let patterns: Vec<u32> = collected.iter().map(|s| s.pattern.id).collect();
        for p in &patterns {
            self.regions_of(*p)?;
        }
        for sc in collected
            .iter()
            .chain(&self.resolve_all(&self.online.scenarios)?)
            .chain(&self.resolve_all(&self.evaluation.scenarios)?)
        {
            if sc.tasks != reference.tasks || sc.devices != reference.devices {
                return Err(Error::Config(format!(
                    "scenario {} differs from {} in tasks or devices",
                    sc.name, reference.name
                )));
            }
            if !patterns.contains(&sc.pattern.id) {
                return Err(Error::Config(format!(
                    "scenario {} uses traffic pattern {}, which the collection does not cover",
                    sc.name, sc.pattern.id
                )));
            }
        }
        self.testing_action(reference)?;
        Ok(())
    }

    pub fn regions_of(&self, pattern: u32) -> Result<usize> {
        self.quantizer
            .regions
            .iter()
            .find(|r| r.pattern == pattern)
            .map(|r| r.k)
            .ok_or_else(|| Error::Config(format!("no region count configured for traffic pattern {pattern}")))
    }

    pub fn resolve_scenario(&self, reference: &str) -> Result<Scenario> {
        match reference.trim().parse::<u32>() {
            Ok(id) => builtin_scenario(id),
            Err(_) => {
                let path = self.base_dir.join(reference);
                if !path.exists() {
                    return Err(Error::Config(format!("scenario file {} does not exist", path.display())));
                }
                Scenario::load(&path)
            }
        }
    }

    pub fn resolve_all(&self, references: &[String]) -> Result<Vec<Scenario>> {
        references.iter().map(|r| self.resolve_scenario(r)).collect()
    }

    /// Tasks and devices shared by every scenario of the experiment.
    pub fn universe(&self) -> Result<(TaskSet, Vec<crate::model::DeviceId>)> {
        let sc = self.resolve_scenario(&self.collection.scenarios[0])?;
        Ok((sc.tasks, sc.devices))
    }

    pub fn testing_action(&self, sc: &Scenario) -> Result<SchedulingAction> {
        let t = self.testing_action;
        let a = SchedulingAction::uniform(&sc.tasks, &sc.devices, CwPair::new(t.cw_vi, t.cw_be), t.cap_bps);
        a.validate(&sc.tasks, &sc.devices)?;
        Ok(a)
    }

    /// Standard EDCA: CW (7, 15) and caps at each file task's r_max.
    pub fn edca_action(sc: &Scenario) -> SchedulingAction {
        let mut a = SchedulingAction::uniform(&sc.tasks, &sc.devices, STANDARD_CW, 0.0);
        for t in sc.tasks.file_tasks() {
            a.caps_bps.insert(t.id, sc.tasks.max_throughput(&t.id).unwrap_or(0.0));
        }
        a
    }

    /// Cost parameters of a traffic pattern: only its active tasks count.
    pub fn cost_params(&self, sc: &Scenario) -> Result<CostParams> {
        let active = TaskSet::new(sc.tasks.iter().filter(|t| sc.pattern.is_active(&t.id)).cloned().collect())?;
        let weight = match self.cost.weight {
            Some(w) => w,
            None => {
                let r_max = sc.tasks.file_tasks().filter_map(|t| sc.tasks.max_throughput(&t.id)).fold(0.0, f64::max);
                if !(r_max > 0.0) {
                    return Err(Error::Config("cost weight needs a file task or an explicit value".into()));
                }
                CostParams::normalized_weight(r_max, sc.timing.period_s)
            }
        };
        CostParams::new(weight, self.offline.hyper.gamma, &active)
    }

    /// Region offsets in the global numbering, patterns in ascending order.
    pub fn region_offsets(&self) -> BTreeMap<u32, usize> {
        let mut regions = self.quantizer.regions.clone();
        regions.sort_by_key(|r| r.pattern);
        let mut total = 0;
        regions
            .into_iter()
            .map(|r| {
                let off = total;
                total += r.k;
                (r.pattern, off)
            })
            .collect()
    }

    pub fn total_regions(&self) -> usize {
        self.quantizer.regions.iter().map(|r| r.k).sum()
    }
}
