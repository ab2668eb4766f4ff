use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ids::TaskId;
use super::task::TaskSet;
use crate::error::{Error, Result};

/// Period-aggregated QoS: bits released by each file dispatcher and mean RTT
/// of each delay-sensitive task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct QosObservation {
    #[serde(rename = "file_throughput_bits")]
    pub throughput_bits: BTreeMap<TaskId, f64>,
    #[serde(rename = "delay_rtt_s")]
    pub rtt_s: BTreeMap<TaskId, f64>,
}

impl QosObservation {
    /// The observation of a period in which no task is active.
    pub fn idle(tasks: &TaskSet) -> Self {
        let sentinel = tasks.sentinel_rtt();
        QosObservation {
            throughput_bits: tasks.file_ids().into_iter().map(|id| (id, 0.0)).collect(),
            rtt_s: tasks.delay_ids().into_iter().map(|id| (id, sentinel)).collect(),
        }
    }

    /// Checks that every universal-set task has a well-formed entry.
    pub fn check_complete(&self, tasks: &TaskSet) -> Result<()> {
        for id in tasks.file_ids() {
            match self.throughput_bits.get(&id) {
                Some(r) if r.is_finite() && *r >= 0.0 => {}
                Some(r) => return Err(Error::Contract(format!("throughput of {id} is {r}"))),
                None => return Err(Error::Contract(format!("observation lacks file task {id}"))),
            }
        }
        for id in tasks.delay_ids() {
            match self.rtt_s.get(&id) {
                Some(t) if t.is_finite() && *t > 0.0 => {}
                Some(t) => return Err(Error::Contract(format!("rtt of {id} is {t}"))),
                None => return Err(Error::Contract(format!("observation lacks delay task {id}"))),
            }
        }
        Ok(())
    }

    pub fn throughput(&self, id: &TaskId) -> Result<f64> {
        self.throughput_bits
            .get(id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("observation lacks file task {id}")))
    }

    pub fn rtt(&self, id: &TaskId) -> Result<f64> {
        self.rtt_s
            .get(id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("observation lacks delay task {id}")))
    }
}
