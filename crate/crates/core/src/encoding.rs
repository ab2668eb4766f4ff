//! Fixed-order numeric encodings of actions and observations used as
//! network inputs and targets.
//!
//! Actions: `cap / r_max` per file task, then `log2(w + 1) / 10` for the VI
//! and BE windows of each device. Observations: throughput as a fraction of
//! `r_max · T_s` per file task, then RTT as a multiple of its limit per
//! delay task. Tasks follow task-id order, devices their listed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceId, QosObservation, SchedulingAction, TaskId, TaskSet};

/// Smallest RTT an imitator may report.
const MIN_RTT_S: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLayout {
    pub files: Vec<TaskId>,
    pub r_max_bps: Vec<f64>,
    pub delays: Vec<TaskId>,
    pub rtt_limits_s: Vec<f64>,
    pub devices: Vec<DeviceId>,
    pub period_s: f64,
    pub sentinel_rtt_s: f64,
}

pub fn encode_cw(w: u16) -> f64 {
    (w as f64 + 1.0).log2() / 10.0
}

impl TaskLayout {
    pub fn new(tasks: &TaskSet, devices: &[DeviceId], period_s: f64) -> Self {
        let files = tasks.file_ids();
        let delays = tasks.delay_ids();
        TaskLayout {
            r_max_bps: files.iter().map(|id| tasks.max_throughput(id).expect("file task")).collect(),
            rtt_limits_s: delays.iter().map(|id| tasks.rtt_limit(id).expect("delay task")).collect(),
            files,
            delays,
            devices: devices.to_vec(),
            period_s,
            sentinel_rtt_s: tasks.sentinel_rtt(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.files.len() + 2 * self.devices.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.files.len() + self.delays.len()
    }

    pub fn encode_action(&self, a: &SchedulingAction) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.action_dim());
        for (id, r_max) in self.files.iter().zip(&self.r_max_bps) {
            v.push(a.cap(id)? / r_max);
        }
        for d in &self.devices {
            let cw = a.cw_of(*d)?;
            v.push(encode_cw(cw.vi));
            v.push(encode_cw(cw.be));
        }
        Ok(v)
    }

    /// Observation in normalized units (unclipped).
    pub fn normalize_obs(&self, o: &QosObservation) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(self.obs_dim());
        for (id, r_max) in self.files.iter().zip(&self.r_max_bps) {
            v.push(o.throughput(id)? / (r_max * self.period_s));
        }
        for (id, limit) in self.delays.iter().zip(&self.rtt_limits_s) {
            v.push(o.rtt(id)? / limit);
        }
        Ok(v)
    }

    /// Normalized observation with RTT multiples clipped at `beta`.
    pub fn clipped_obs(&self, o: &QosObservation, beta: f64) -> Result<Vec<f64>> {
        let mut v = self.normalize_obs(o)?;
        for x in &mut v[self.files.len()..] {
            *x = x.min(beta);
        }
        Ok(v)
    }

    /// Loss weights: `alpha` for active file tasks, 1 for active delay tasks,
    /// 0 for inactive tasks.
    pub fn loss_weights(&self, active: &[TaskId], alpha: f64) -> Vec<f64> {
        let files = self.files.iter().map(|id| if active.contains(id) { alpha } else { 0.0 });
        let delays = self.delays.iter().map(|id| if active.contains(id) { 1.0 } else { 0.0 });
        files.chain(delays).collect()
    }

    /// Turns a normalized prediction back into an observation. Throughputs
    /// are clamped to `[0, cap · T_s]`, RTTs to positive values; inactive
    /// tasks take 0 and the sentinel RTT.
    pub fn decode_obs(&self, pred: &[f64], action: &SchedulingAction, active: &[TaskId]) -> Result<QosObservation> {
        if pred.len() != self.obs_dim() {
            return Err(Error::Shape(format!("{} outputs for {} tasks", pred.len(), self.obs_dim())));
        }
        let mut o = QosObservation::default();
        for (i, (id, r_max)) in self.files.iter().zip(&self.r_max_bps).enumerate() {
            let bits = if active.contains(id) {
                let cap_bits = action.cap(id)? * self.period_s;
                (pred[i] * r_max * self.period_s).clamp(0.0, cap_bits)
            } else {
                0.0
            };
            o.throughput_bits.insert(*id, bits);
        }
        let nf = self.files.len();
        for (i, (id, limit)) in self.delays.iter().zip(&self.rtt_limits_s).enumerate() {
            let rtt = if active.contains(id) {
                (pred[nf + i] * limit).max(MIN_RTT_S)
            } else {
                self.sentinel_rtt_s
            };
            o.rtt_s.insert(*id, rtt);
        }
        Ok(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CwPair, Task, TaskSpec};

    fn layout() -> (TaskSet, TaskLayout) {
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
        let devices: Vec<_> = (0..3).map(DeviceId).collect();
        let l = TaskLayout::new(&tasks, &devices, 1.0);
        (tasks, l)
    }

    #[test]
    fn action_encoding() {
        let (tasks, l) = layout();
        let a = SchedulingAction::uniform(&tasks, &l.devices, CwPair::new(7, 1023), 300e6);
        let v = l.encode_action(&a).unwrap();
        assert_eq!(v.len(), l.action_dim());
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.3).abs() < 1e-15);
        assert!((v[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decode_clamps_to_cap_and_fills_inactive() {
        let (tasks, l) = layout();
        let a = SchedulingAction::uniform(&tasks, &l.devices, CwPair::new(7, 15), 0.0);
        let active = vec![TaskId::file(1, 0, 0)];
        let o = l.decode_obs(&[0.7, 1.0], &a, &active).unwrap();
        assert_eq!(o.throughput_bits[&TaskId::file(1, 0, 0)], 0.0);
        assert_eq!(o.rtt_s[&TaskId::delay(2, 0, 0)], tasks.sentinel_rtt());
        let a = SchedulingAction::uniform(&tasks, &l.devices, CwPair::new(7, 15), 600e6);
        let all = vec![TaskId::file(1, 0, 0), TaskId::delay(2, 0, 0)];
        let o = l.decode_obs(&[-0.2, -1.0], &a, &all).unwrap();
        assert_eq!(o.throughput_bits[&TaskId::file(1, 0, 0)], 0.0);
        assert!(o.rtt_s[&TaskId::delay(2, 0, 0)] > 0.0);
    }

    #[test]
    fn normalize_and_clip() {
        let (_, l) = layout();
        let mut o = QosObservation::default();
        o.throughput_bits.insert(TaskId::file(1, 0, 0), 300e6);
        o.rtt_s.insert(TaskId::delay(2, 0, 0), 0.14);
        assert_eq!(l.normalize_obs(&o).unwrap(), vec![0.5, 5.0]);
        assert_eq!(l.clipped_obs(&o, 3.0).unwrap(), vec![0.5, 3.0]);
    }
}
