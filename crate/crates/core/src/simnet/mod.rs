//! Discrete-event EDCA network used as the environment: managed devices with
//! VI and BE queues, paced file dispatchers, periodic delay-sensitive
//! packets and unmanaged BE interferers.

mod engine;
mod scenario;

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use scenario::{InterferenceSpec, InterfererSpec, LinkSpec, MacTiming, Scenario, TrafficPattern};

use crate::error::{Error, Result};
use crate::model::{DeviceId, QosObservation, SchedulingAction, TaskId};
use engine::{observation_from, Engine, PhaseStats};
use scenario::to_ns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub duration_s: f64,
    pub airtime_fraction: BTreeMap<DeviceId, f64>,
    pub interferer_airtime_fraction: f64,
    pub collisions: u64,
    pub packets_delivered: BTreeMap<TaskId, u64>,
    /// Mean head-of-line access delay of VI and BE frames of managed devices.
    pub mean_access_delay_vi_s: Option<f64>,
    pub mean_access_delay_be_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodResult {
    pub observation: QosObservation,
    pub diagnostics: Diagnostics,
}

/// Per-interferer offered load (bits/s) for one period.
pub type InterferenceLoad = Vec<f64>;

fn diagnostics_from(sc: &Scenario, stats: &PhaseStats, phase_ns: u64) -> Diagnostics {
    let d = phase_ns as f64;
    let mean = |k: usize| (stats.access_delay_count[k] > 0).then(|| stats.access_delay_sum[k] / stats.access_delay_count[k] as f64);
    Diagnostics {
        duration_s: d / 1e9,
        airtime_fraction: sc
            .devices
            .iter()
            .map(|dev| (*dev, stats.airtime.get(dev).copied().unwrap_or(0) as f64 / d))
            .collect(),
        interferer_airtime_fraction: stats.interferer_airtime as f64 / d,
        collisions: stats.collisions,
        packets_delivered: sc
            .tasks
            .delay_ids()
            .into_iter()
            .map(|id| (id, stats.packets.get(&id).copied().unwrap_or(0)))
            .collect(),
        mean_access_delay_vi_s: mean(0),
        mean_access_delay_be_s: mean(1),
    }
}

fn check_duration(sc: &Scenario, duration_s: f64) -> Result<u64> {
    if !(duration_s > 0.0) || duration_s > sc.timing.period_s + 1e-12 {
        return Err(Error::Config(format!(
            "phase duration {duration_s} s outside (0, {}]",
            sc.timing.period_s
        )));
    }
    Ok(to_ns(duration_s))
}

/// Simulates `duration_s` seconds under `action`. The returned throughputs
/// are normalized to a full period; identical inputs give identical output.
pub fn run_period(
    sc: &Scenario,
    action: &SchedulingAction,
    duration_s: f64,
    loads: &[f64],
    seed: u64,
) -> Result<PeriodResult> {
    let phase = check_duration(sc, duration_s)?;
    let mut engine = Engine::new(sc, action, loads, ChaCha8Rng::seed_from_u64(seed))?;
    engine.run_until(phase);
    let stats = engine.take_stats();
    Ok(PeriodResult {
        observation: observation_from(sc, &stats, action, phase)?,
        diagnostics: diagnostics_from(sc, &stats, phase),
    })
}

/// Runs `test_action` for the first `fraction` of the period and
/// `other_action` for the remainder of the same period, returning both
/// phases' results (each normalized to a full period).
pub fn run_split_period(
    sc: &Scenario,
    test_action: &SchedulingAction,
    other_action: &SchedulingAction,
    fraction: f64,
    loads: &[f64],
    seed: u64,
) -> Result<(PeriodResult, PeriodResult)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("phase fraction {fraction} outside (0, 1)")));
    }
    let period = sc.period_ns();
    let first = check_duration(sc, fraction * sc.timing.period_s)?;
    let mut engine = Engine::new(sc, test_action, loads, ChaCha8Rng::seed_from_u64(seed))?;
    engine.run_until(first);
    let stats1 = engine.take_stats();
    engine.apply_action(other_action, first)?;
    engine.run_until(period);
    let stats2 = engine.take_stats();
    let second = period - first;
    Ok((
        PeriodResult {
            observation: observation_from(sc, &stats1, test_action, first)?,
            diagnostics: diagnostics_from(sc, &stats1, first),
        },
        PeriodResult {
            observation: observation_from(sc, &stats2, other_action, second)?,
            diagnostics: diagnostics_from(sc, &stats2, second),
        },
    ))
}

/// Draws each interferer's offered load uniformly from the configured levels.
pub fn sample_interference<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> InterferenceLoad {
    let levels = &sc.interference.load_levels_bps;
    sc.interference
        .interferers
        .iter()
        .map(|_| levels[rng.gen_range(0..levels.len())])
        .collect()
}

/// Interference that persists across periods: each period keeps the
/// previous loads with the scenario's persistence probability and redraws
/// them otherwise.
#[derive(Debug, Clone)]
pub struct InterferenceProcess {
    rng: ChaCha8Rng,
    current: Option<InterferenceLoad>,
}

impl InterferenceProcess {
    pub fn new(seed: u64) -> Self {
        InterferenceProcess {
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
        }
    }

    pub fn next_period(&mut self, sc: &Scenario) -> InterferenceLoad {
        let keep = self.rng.gen_bool(sc.interference.persistence.clamp(0.0, 1.0));
        let fresh = sample_interference(sc, &mut self.rng);
        match &self.current {
            Some(cur) if keep && cur.len() == fresh.len() => cur.clone(),
            _ => {
                self.current = Some(fresh.clone());
                fresh
            }
        }
    }
}

/// Writes `period,task,metric,value` rows for one period result.
pub fn write_diagnostics_csv<W: Write>(out: &mut csv::Writer<W>, period: usize, result: &PeriodResult) -> Result<()> {
    let p = period.to_string();
    for (id, bits) in &result.observation.throughput_bits {
        out.write_record([p.as_str(), &id.to_string(), "throughput_bits", &bits.to_string()])?;
    }
    for (id, rtt) in &result.observation.rtt_s {
        out.write_record([p.as_str(), &id.to_string(), "rtt_s", &rtt.to_string()])?;
    }
    let d = &result.diagnostics;
    for (id, n) in &d.packets_delivered {
        out.write_record([p.as_str(), &id.to_string(), "packets_delivered", &n.to_string()])?;
    }
    for (dev, f) in &d.airtime_fraction {
        out.write_record([p.as_str(), &format!("device:{dev}"), "airtime_fraction", &f.to_string()])?;
    }
    out.write_record([p.as_str(), "interferers", "airtime_fraction", &d.interferer_airtime_fraction.to_string()])?;
    out.write_record([p.as_str(), "all", "collisions", &d.collisions.to_string()])?;
    Ok(())
}
