//! Per-device local action sets and their index layout.
//!
//! Local index = `cw_pair + n_cw · cap_combo` with `cw_pair = vi + |vi| · be`
//! (grid positions) and `cap_combo` the cap levels of the device's file
//! tasks, first task fastest. CW pairs therefore vary fastest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CwPair, DeviceId, LocalAction, SchedulingAction, TaskId, TaskSet, CAP_LEVELS, CW_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpace {
    pub device: DeviceId,
    pub vi_grid: Vec<u16>,
    pub be_grid: Vec<u16>,
    pub files: Vec<TaskId>,
    pub r_max_bps: Vec<f64>,
    pub cap_levels: usize,
    /// Restricts the device to one CW pair (rate control only).
    #[serde(default)]
    pub fixed_cw: Option<CwPair>,
}

impl DeviceSpace {
    pub fn n_cw(&self) -> usize {
        self.vi_grid.len() * self.be_grid.len()
    }

    pub fn size(&self) -> usize {
        self.n_cw() * self.cap_levels.pow(self.files.len() as u32)
    }

    fn cap_of(&self, level: usize, r_max: f64) -> f64 {
        if self.cap_levels <= 1 {
            r_max
        } else {
            level as f64 / (self.cap_levels - 1) as f64 * r_max
        }
    }

    pub fn decode(&self, idx: usize) -> Result<LocalAction> {
        if idx >= self.size() {
            return Err(Error::Shape(format!("local action {idx} of device {} out of range", self.device)));
        }
        let cw_pair = idx % self.n_cw();
        let mut combo = idx / self.n_cw();
        let cw = CwPair::new(self.vi_grid[cw_pair % self.vi_grid.len()], self.be_grid[cw_pair / self.vi_grid.len()]);
        let mut caps_bps = BTreeMap::new();
        for (id, r_max) in self.files.iter().zip(&self.r_max_bps) {
            caps_bps.insert(*id, self.cap_of(combo % self.cap_levels, *r_max));
            combo /= self.cap_levels;
        }
        Ok(LocalAction {
            device: self.device,
            cw,
            caps_bps,
        })
    }

    pub fn encode(&self, local: &LocalAction) -> Result<usize> {
        let off_grid = || Error::Contract(format!("local action of device {} is off-grid", self.device));
        let vi = self.vi_grid.iter().position(|&w| w == local.cw.vi).ok_or_else(off_grid)?;
        let be = self.be_grid.iter().position(|&w| w == local.cw.be).ok_or_else(off_grid)?;
        let mut combo = 0;
        let mut stride = 1;
        for (id, r_max) in self.files.iter().zip(&self.r_max_bps) {
            let cap = *local.caps_bps.get(id).ok_or_else(off_grid)?;
            let level = (0..self.cap_levels)
                .find(|&l| (self.cap_of(l, *r_max) - cap).abs() <= 1e-9 * r_max)
                .ok_or_else(off_grid)?;
            combo += level * stride;
            stride *= self.cap_levels;
        }
        Ok(vi + self.vi_grid.len() * be + self.n_cw() * combo)
    }

    /// Indices the device may choose from, ascending.
    pub fn allowed(&self) -> Vec<usize> {
        let Some(fixed) = self.fixed_cw else {
            return (0..self.size()).collect();
        };
        let (Some(vi), Some(be)) = (
            self.vi_grid.iter().position(|&w| w == fixed.vi),
            self.be_grid.iter().position(|&w| w == fixed.be),
        ) else {
            return Vec::new();
        };
        let pair = vi + self.vi_grid.len() * be;
        (pair..self.size()).step_by(self.n_cw()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<DeviceSpace>", into = "Vec<DeviceSpace>")]
pub struct ActionSpace {
    devices: Vec<DeviceSpace>,
    offsets: Vec<usize>,
    allowed: Vec<Vec<usize>>,
}

impl From<Vec<DeviceSpace>> for ActionSpace {
    fn from(devices: Vec<DeviceSpace>) -> Self {
        let mut offsets = Vec::with_capacity(devices.len());
        let mut total = 0;
        for d in &devices {
            offsets.push(total);
            total += d.size();
        }
        let allowed = devices.iter().map(DeviceSpace::allowed).collect();
        ActionSpace {
            devices,
            offsets,
            allowed,
        }
    }
}

impl From<ActionSpace> for Vec<DeviceSpace> {
    fn from(s: ActionSpace) -> Self {
        s.devices
    }
}

impl ActionSpace {
    pub fn new(devices: Vec<DeviceSpace>) -> Result<Self> {
        if devices.is_empty() || devices.iter().any(|d| d.size() == 0) {
            return Err(Error::Config("every device needs a non-empty action set".into()));
        }
        let space = ActionSpace::from(devices);
        if space.allowed.iter().any(Vec::is_empty) {
            return Err(Error::Config("fixed contention window is not on the device grid".into()));
        }
        Ok(space)
    }

    /// Full CW grid for both queues and all cap levels for every file task
    /// the device transmits.
    pub fn standard(tasks: &TaskSet, devices: &[DeviceId]) -> Result<Self> {
        Self::new(
            devices
                .iter()
                .map(|&device| {
                    let files = tasks.file_tasks_of(device);
                    DeviceSpace {
                        device,
                        vi_grid: CW_GRID.to_vec(),
                        be_grid: CW_GRID.to_vec(),
                        r_max_bps: files.iter().map(|id| tasks.max_throughput(id).unwrap_or(0.0)).collect(),
                        files,
                        cap_levels: CAP_LEVELS,
                        fixed_cw: None,
                    }
                })
                .collect(),
        )
    }

    /// Same index layout with every device's CW pinned to `cw`.
    pub fn with_fixed_cw(&self, cw: CwPair) -> Result<Self> {
        Self::new(
            self.devices
                .iter()
                .map(|d| DeviceSpace {
                    fixed_cw: Some(cw),
                    ..d.clone()
                })
                .collect(),
        )
    }

    pub fn devices(&self) -> &[DeviceSpace] {
        &self.devices
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.devices.iter().map(DeviceSpace::size).collect()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn total(&self) -> usize {
        self.devices.iter().map(DeviceSpace::size).sum()
    }

    pub fn allowed(&self, device: usize) -> &[usize] {
        &self.allowed[device]
    }

    pub fn is_restricted(&self) -> bool {
        self.devices.iter().any(|d| d.fixed_cw.is_some())
    }

    pub fn decode(&self, idx: &[usize]) -> Result<SchedulingAction> {
        if idx.len() != self.devices.len() {
            return Err(Error::Shape(format!("{} local actions for {} devices", idx.len(), self.devices.len())));
        }
        let locals = self.devices.iter().zip(idx).map(|(d, &i)| d.decode(i)).collect::<Result<Vec<_>>>()?;
        SchedulingAction::from_local_actions(locals)
    }

    pub fn encode(&self, action: &SchedulingAction) -> Result<Vec<usize>> {
        let locals: BTreeMap<DeviceId, LocalAction> = action.local_actions().into_iter().map(|l| (l.device, l)).collect();
        self.devices
            .iter()
            .map(|d| {
                let local = locals
                    .get(&d.device)
                    .ok_or_else(|| Error::Contract(format!("action has no entry for device {}", d.device)))?;
                d.encode(local)
            })
            .collect()
    }
}
