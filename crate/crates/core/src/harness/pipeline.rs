//! Stage ordering, the run manifest and content-hash staleness.
//!
//! A stage's input hash covers its slice of the configuration and the
//! content hashes of the outputs recorded for the stages it depends on. A
//! stage is fresh when its recorded input hash matches and every recorded
//! output still exists with the recorded content hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::stages::{self, RunDir};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Collect,
    Quantize,
    TrainImitators,
    TrainOffline,
    TrainOnline,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Collect,
        Stage::Quantize,
        Stage::TrainImitators,
        Stage::TrainOffline,
        Stage::TrainOnline,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Collect => "collect",
            Stage::Quantize => "quantize",
            Stage::TrainImitators => "train-imitators",
            Stage::TrainOffline => "train-offline",
            Stage::TrainOnline => "train-online",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Collect => &[],
            Stage::Quantize => &[Stage::Collect],
            Stage::TrainImitators => &[Stage::Collect, Stage::Quantize],
            Stage::TrainOffline => &[Stage::Collect, Stage::Quantize, Stage::TrainImitators],
            Stage::TrainOnline | Stage::Evaluate => &[Stage::Quantize, Stage::TrainOffline],
        }
    }

    fn run(self, cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<PathBuf>> {
        match self {
            Stage::Collect => stages::collect(cfg, run),
            Stage::Quantize => stages::quantize(cfg, run),
            Stage::TrainImitators => stages::train_imitators(cfg, run),
            Stage::TrainOffline => stages::train_offline(cfg, run),
            Stage::TrainOnline => stages::train_online(cfg, run),
            Stage::Evaluate => stages::evaluate(cfg, run),
        }
    }

    /// The configuration this stage's outputs depend on.
    fn config_slice(self, cfg: &ExperimentConfig) -> Result<Value> {
        let collected = cfg.resolve_all(&cfg.collection.scenarios)?;
        Ok(match self {
            Stage::Collect => json!({
                "seed": cfg.seed,
                "collection": cfg.collection,
                "scenarios": collected,
                "testing_action": cfg.testing_action,
            }),
            Stage::Quantize => json!({ "seed": cfg.seed, "quantizer": cfg.quantizer, "scenarios": collected }),
            Stage::TrainImitators => json!({ "seed": cfg.seed, "imitator": cfg.imitator, "scenarios": collected }),
            Stage::TrainOffline => json!({
                "seed": cfg.seed,
                "qnet": cfg.qnet,
                "offline": cfg.offline,
                "cost": cfg.cost,
                "regions": cfg.quantizer.regions,
                "scenarios": collected,
            }),
            Stage::TrainOnline => json!({
                "seed": cfg.seed,
                "online": cfg.online,
                "cost": cfg.cost,
                "gamma": cfg.offline.hyper.gamma,
                "testing_action": cfg.testing_action,
                "scenarios": cfg.resolve_all(&cfg.online.scenarios)?,
            }),
            Stage::Evaluate => json!({
                "seed": cfg.seed,
                "evaluation": cfg.evaluation,
                "test_fraction": cfg.online.test_fraction,
                "cost": cfg.cost,
                "gamma": cfg.offline.hyper.gamma,
                "testing_action": cfg.testing_action,
                "scenarios": cfg.resolve_all(&cfg.evaluation.scenarios)?,
            }),
        })
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub input_hash: String,
    /// Output path relative to the run directory → sha256 of its content.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<Stage, StageEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

pub fn file_hash(path: &Path) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    Some(hex::encode(Sha256::digest(bytes)))
}

fn outputs_intact(run: &RunDir, entry: &StageEntry) -> bool {
    entry
        .outputs
        .iter()
        .all(|(rel, hash)| file_hash(&run.root.join(rel)).as_deref() == Some(hash.as_str()))
}

/// Input hash of `stage`, or `None` when an upstream stage has no record or
/// one of its outputs is missing or changed.
pub fn input_hash(cfg: &ExperimentConfig, run: &RunDir, manifest: &Manifest, stage: Stage) -> Result<Option<String>> {
    let mut h = Sha256::new();
    h.update(stage.name().as_bytes());
    h.update(serde_json::to_vec(&stage.config_slice(cfg)?)?);
    for dep in stage.dependencies() {
        let Some(entry) = manifest.stages.get(dep) else {
            return Ok(None);
        };
        if !outputs_intact(run, entry) {
            return Ok(None);
        }
        for (rel, hash) in &entry.outputs {
            h.update(rel.as_bytes());
            h.update(hash.as_bytes());
        }
    }
    Ok(Some(hex::encode(h.finalize())))
}

pub fn is_fresh(cfg: &ExperimentConfig, run: &RunDir, manifest: &Manifest, stage: Stage) -> Result<bool> {
    let Some(entry) = manifest.stages.get(&stage) else {
        return Ok(false);
    };
    Ok(input_hash(cfg, run, manifest, stage)?.as_deref() == Some(entry.input_hash.as_str()) && outputs_intact(run, entry))
}

/// Freshness of every stage against the manifest as it stands now.
pub fn plan(cfg: &ExperimentConfig, run: &RunDir) -> Result<Vec<(Stage, bool)>> {
    let manifest = Manifest::load(&run.manifest())?;
    Stage::ALL.into_iter().map(|s| Ok((s, is_fresh(cfg, run, &manifest, s)?))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

/// Runs one stage unless it is fresh (and `force` is off), then records
/// its input hash and outputs in the manifest. Errors carry the stage name.
pub fn run_stage(cfg: &ExperimentConfig, run: &RunDir, stage: Stage, force: bool) -> Result<Outcome> {
    let wrap = |e: Error| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    };
    stages::create_dir(&run.root).map_err(wrap)?;
    let mut manifest = Manifest::load(&run.manifest()).map_err(wrap)?;
    if !force && is_fresh(cfg, run, &manifest, stage).map_err(wrap)? {
        log::info!("{stage}: up to date");
        return Ok(Outcome::Skipped);
    }
    for dep in stage.dependencies() {
        if !manifest.stages.contains_key(dep) {
            log::warn!("{stage}: upstream stage {dep} has no record in the manifest");
        }
    }
    log::info!("{stage}: running");
    let written = stage.run(cfg, run).map_err(wrap)?;
    let mut outputs = BTreeMap::new();
    for path in written {
        let rel = path.strip_prefix(&run.root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        let hash = file_hash(&path).ok_or_else(|| wrap(Error::MissingCheckpoint(path.clone())))?;
        outputs.insert(rel, hash);
    }
    let input_hash = input_hash(cfg, run, &manifest, stage).map_err(wrap)?.unwrap_or_default();
    manifest.stages.insert(stage, StageEntry { input_hash, outputs });
    manifest.save(&run.manifest()).map_err(wrap)?;
    Ok(Outcome::Ran)
}

/// All stages in order, skipping fresh ones.
pub fn run_pipeline(cfg: &ExperimentConfig, force: bool) -> Result<Vec<(Stage, Outcome)>> {
    cfg.validate()?;
    let run = RunDir::new(cfg.out_dir());
    Stage::ALL.into_iter().map(|s| Ok((s, run_stage(cfg, &run, s, force)?))).collect()
}
