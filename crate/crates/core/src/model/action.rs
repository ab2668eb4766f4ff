use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ids::{DeviceId, TaskId};
use super::task::TaskSet;
use crate::error::{Error, Result};

/// Contention window sizes `2^c - 1` for `c = 1..=10`.
pub const CW_GRID: [u16; 10] = [1, 3, 7, 15, 31, 63, 127, 255, 511, 1023];

/// Number of throughput-cap levels `c/20 · r_max`, `c = 0..=20`.
pub const CAP_LEVELS: usize = 21;

pub fn cw_index(w: u16) -> Option<usize> {
    CW_GRID.iter().position(|&g| g == w)
}

pub fn cap_value(level: usize, r_max: f64) -> f64 {
    level as f64 / (CAP_LEVELS - 1) as f64 * r_max
}

/// Grid level of a cap, if the cap lies on the grid.
pub fn cap_index(cap: f64, r_max: f64) -> Option<usize> {
    let level = (cap / r_max * (CAP_LEVELS - 1) as f64).round();
    if !(0.0..CAP_LEVELS as f64).contains(&level) {
        return None;
    }
    let level = level as usize;
    ((cap_value(level, r_max) - cap).abs() <= 1e-9 * r_max).then_some(level)
}

/// VI and BE contention windows of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CwPair {
    pub vi: u16,
    pub be: u16,
}

impl CwPair {
    pub const fn new(vi: u16, be: u16) -> Self {
        CwPair { vi, be }
    }
}

/// Throughput caps (bits/s) for every file task plus a CW pair per device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SchedulingAction {
    #[serde(rename = "throughput_caps_bps")]
    pub caps_bps: BTreeMap<TaskId, f64>,
    pub cw: BTreeMap<DeviceId, CwPair>,
}

/// One device's share of a [`SchedulingAction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAction {
    pub device: DeviceId,
    pub cw: CwPair,
    pub caps_bps: BTreeMap<TaskId, f64>,
}

impl SchedulingAction {
    /// Every device gets `cw`, every file task is capped at `cap_bps`
    /// (clamped to its own maximum).
    pub fn uniform(tasks: &TaskSet, devices: &[DeviceId], cw: CwPair, cap_bps: f64) -> Self {
        SchedulingAction {
            caps_bps: tasks
                .file_tasks()
                .map(|t| (t.id, cap_bps.min(tasks.max_throughput(&t.id).unwrap_or(cap_bps))))
                .collect(),
            cw: devices.iter().map(|&d| (d, cw)).collect(),
        }
    }

    pub fn cap(&self, id: &TaskId) -> Result<f64> {
        self.caps_bps
            .get(id)
            .copied()
            .ok_or_else(|| Error::Config(format!("action has no cap for {id}")))
    }

    pub fn cw_of(&self, device: DeviceId) -> Result<CwPair> {
        self.cw
            .get(&device)
            .copied()
            .ok_or_else(|| Error::Config(format!("action has no contention window for device {device}")))
    }

    /// Checks grid membership and completeness against the managed devices
    /// and the universal task set.
    pub fn validate(&self, tasks: &TaskSet, devices: &[DeviceId]) -> Result<()> {
        for d in devices {
            let pair = self.cw_of(*d)?;
            if cw_index(pair.vi).is_none() || cw_index(pair.be).is_none() {
                return Err(Error::Config(format!("contention window {pair:?} of device {d} is off-grid")));
            }
        }
        if let Some(d) = self.cw.keys().find(|d| !devices.contains(d)) {
            return Err(Error::Config(format!("action references unknown device {d}")));
        }
        for t in tasks.file_tasks() {
            let cap = self.cap(&t.id)?;
            let r_max = tasks.max_throughput(&t.id).unwrap_or(0.0);
            if cap_index(cap, r_max).is_none() {
                return Err(Error::Config(format!("cap {cap} of {} is off-grid", t.id)));
            }
        }
        if let Some(id) = self.caps_bps.keys().find(|id| tasks.max_throughput(id).is_none()) {
            return Err(Error::Config(format!("action references unknown file task {id}")));
        }
        Ok(())
    }

    /// Splits the action into per-device local actions; file-task caps go to
    /// the transmitting device of the task's link.
    pub fn local_actions(&self) -> Vec<LocalAction> {
        self.cw
            .iter()
            .map(|(&device, &cw)| LocalAction {
                device,
                cw,
                caps_bps: self
                    .caps_bps
                    .iter()
                    .filter(|(id, _)| id.device() == device)
                    .map(|(id, c)| (*id, *c))
                    .collect(),
            })
            .collect()
    }

    pub fn from_local_actions(locals: impl IntoIterator<Item = LocalAction>) -> Result<Self> {
        let mut action = SchedulingAction::default();
        for local in locals {
            if action.cw.insert(local.device, local.cw).is_some() {
                return Err(Error::Contract(format!("device {} appears twice", local.device)));
            }
            for (id, cap) in local.caps_bps {
                if id.device() != local.device || action.caps_bps.insert(id, cap).is_some() {
                    return Err(Error::Contract(format!("cap of {id} assigned to device {}", local.device)));
                }
            }
        }
        Ok(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::task::{Task, TaskSpec};

    fn tasks() -> TaskSet {
        TaskSet::new(vec![
            Task {
                id: TaskId::file(1, 0, 0),
                spec: TaskSpec::FileDelivery {
                    max_throughput_bps: 600e6,
                },
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
        .unwrap()
    }

    #[test]
    fn grids_match_their_definitions() {
        for (c, w) in (1..=10).zip(CW_GRID) {
            assert_eq!(w as u32, (1u32 << c) - 1);
        }
        assert_eq!(cap_index(300e6, 600e6), Some(10));
        assert_eq!(cap_index(600e6, 600e6), Some(20));
        assert_eq!(cap_index(0.0, 600e6), Some(0));
        assert_eq!(cap_index(301e6, 600e6), None);
        assert_eq!(cap_index(630e6, 600e6), None);
    }

    #[test]
    fn local_actions_partition_the_action() {
        let devices = [DeviceId(0), DeviceId(1), DeviceId(2)];
        let action = SchedulingAction::uniform(&tasks(), &devices, CwPair::new(7, 15), 300e6);
        action.validate(&tasks(), &devices).unwrap();
        let locals = action.local_actions();
        assert_eq!(locals.len(), 3);
        assert_eq!(locals.iter().map(|l| l.caps_bps.len()).sum::<usize>(), 1);
        assert_eq!(SchedulingAction::from_local_actions(locals).unwrap(), action);
    }

    #[test]
    fn validation_catches_unknown_and_off_grid_entries() {
        let devices = [DeviceId(1), DeviceId(2)];
        let mut action = SchedulingAction::uniform(&tasks(), &devices, CwPair::new(7, 15), 300e6);
        action.cw.insert(DeviceId(9), CwPair::new(7, 15));
        assert!(action.validate(&tasks(), &devices).is_err());
        let mut action = SchedulingAction::uniform(&tasks(), &devices, CwPair::new(8, 15), 300e6);
        assert!(action.validate(&tasks(), &devices).is_err());
        action = SchedulingAction::uniform(&tasks(), &devices, CwPair::new(7, 15), 310e6);
        assert!(action.validate(&tasks(), &devices).is_err());
    }
}
