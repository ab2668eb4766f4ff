use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceId, LinkId, TaskId, TaskSet};

/// A directed link and its maximum PHY rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: DeviceId,
    pub to: DeviceId,
    pub rate_bps: f64,
}

impl LinkSpec {
    pub fn id(&self) -> LinkId {
        LinkId {
            from: self.from,
            to: self.to,
        }
    }
}

/// Which tasks of the universal set carry traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficPattern {
    pub id: u32,
    pub active: Vec<TaskId>,
}

impl TrafficPattern {
    pub fn is_active(&self, id: &TaskId) -> bool {
        self.active.contains(id)
    }
}

/// An unmanaged transmitter contending with standard BE parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfererSpec {
    pub name: String,
    pub rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceSpec {
    pub interferers: Vec<InterfererSpec>,
    /// Offered loads (bits/s) drawn uniformly per period.
    pub load_levels_bps: Vec<f64>,
    /// Probability that a period keeps the previous period's loads.
    #[serde(default)]
    pub persistence: f64,
}

impl Default for InterferenceSpec {
    fn default() -> Self {
        InterferenceSpec {
            interferers: Vec::new(),
            load_levels_bps: vec![0.0],
            persistence: 0.0,
        }
    }
}

/// Slotted MAC timing. All durations are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacTiming {
    pub period_s: f64,
    pub slot_s: f64,
    pub aifs_vi_slots: u32,
    pub aifs_be_slots: u32,
    pub overhead_s: f64,
    pub max_payload_bits: u32,
    pub ack_latency_s: f64,
    /// Depth of the per-device driver FIFO shared by all access categories
    /// of a managed device. Zero feeds the AC queues directly.
    #[serde(default)]
    pub driver_queue_frames: usize,
    /// Frames an AC queue accepts from the driver FIFO (or, without a FIFO,
    /// frames a dispatcher may have outstanding in a BE queue).
    pub ac_queue_frames: usize,
    /// Contention window used by interferers (standard BE).
    pub interferer_cw: u16,
}

impl Default for MacTiming {
    fn default() -> Self {
        MacTiming {
            period_s: 1.0,
            slot_s: 9e-6,
            aifs_vi_slots: 2,
            aifs_be_slots: 3,
            overhead_s: 100e-6,
            max_payload_bits: 12_000,
            ack_latency_s: 1e-3,
            driver_queue_frames: 0,
            ac_queue_frames: 4,
            interferer_cw: 15,
        }
    }
}

/// Static description of a simulated network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub devices: Vec<DeviceId>,
    pub links: Vec<LinkSpec>,
    pub tasks: TaskSet,
    pub pattern: TrafficPattern,
    #[serde(default)]
    pub interference: InterferenceSpec,
    #[serde(default)]
    pub timing: MacTiming,
    #[serde(default)]
    pub seed: u64,
}

pub(crate) const NS_PER_S: f64 = 1e9;

pub(crate) fn to_ns(seconds: f64) -> u64 {
    (seconds * NS_PER_S).round() as u64
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.timing;
        if !(t.slot_s > 0.0) || !(t.period_s > 0.0) {
            return Err(Error::Config("slot and period lengths must be positive".into()));
        }
        // The engine keeps integer nanoseconds and aligns backoff to the
        // idle interval, so the period only has to hold at least one slot.
        let whole_ns = |x: f64| ((x * NS_PER_S) - (x * NS_PER_S).round()).abs() < 1e-6;
        if t.period_s < t.slot_s || !whole_ns(t.period_s) || !whole_ns(t.slot_s) {
            return Err(Error::Config(format!(
                "period {} s and slot {} s must be whole nanoseconds with period >= slot",
                t.period_s, t.slot_s
            )));
        }
        if t.max_payload_bits == 0 || t.ac_queue_frames == 0 || t.overhead_s < 0.0 || t.ack_latency_s < 0.0 {
            return Err(Error::Config("invalid MAC timing".into()));
        }
        if crate::model::cw_index(t.interferer_cw).is_none() {
            return Err(Error::Config("interferer contention window is off-grid".into()));
        }
        for l in &self.links {
            if !(l.rate_bps > 0.0) {
                return Err(Error::Config(format!("link {} has non-positive rate", l.id())));
            }
            if l.from == l.to || !self.devices.contains(&l.from) || !self.devices.contains(&l.to) {
                return Err(Error::Config(format!("link {} endpoints are not distinct managed devices", l.id())));
            }
        }
        for task in self.tasks.iter() {
            if self.link(task.id.link).is_none() {
                return Err(Error::Config(format!("task {} sits on an undeclared link", task.id)));
            }
        }
        for id in &self.pattern.active {
            if self.tasks.get(id).is_none() {
                return Err(Error::Config(format!("pattern activates unknown task {id}")));
            }
        }
        let i = &self.interference;
        if i.load_levels_bps.is_empty() || i.load_levels_bps.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("interference load levels must be non-empty and non-negative".into()));
        }
        if i.interferers.iter().any(|x| !(x.rate_bps > 0.0)) || !(0.0..=1.0).contains(&i.persistence) {
            return Err(Error::Config("invalid interferer specification".into()));
        }
        Ok(())
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.id() == id)
    }

    pub fn period_ns(&self) -> u64 {
        to_ns(self.timing.period_s)
    }

    pub fn slot_ns(&self) -> u64 {
        to_ns(self.timing.slot_s)
    }
}
