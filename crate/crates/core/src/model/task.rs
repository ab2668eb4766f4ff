use serde::{Deserialize, Serialize};

use super::ids::{DeviceId, TaskId, TaskKind};
use crate::error::{Error, Result};

/// Traffic parameters of one task. Rates are in bits/s, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    FileDelivery {
        max_throughput_bps: f64,
    },
    DelaySensitive {
        arrival_rate_bps: f64,
        arrival_interval_s: f64,
        rtt_limit_s: f64,
    },
}

impl TaskSpec {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskSpec::FileDelivery { .. } => TaskKind::FileDelivery,
            TaskSpec::DelaySensitive { .. } => TaskKind::DelaySensitive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TaskSpec::FileDelivery { max_throughput_bps } => max_throughput_bps > 0.0,
            TaskSpec::DelaySensitive {
                arrival_rate_bps,
                arrival_interval_s,
                rtt_limit_s,
            } => arrival_rate_bps > 0.0 && arrival_interval_s > 0.0 && rtt_limit_s > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("non-positive task parameter in {self:?}")))
        }
    }

    /// Packet size of a delay-sensitive task (rate × interval).
    pub fn packet_bits(&self) -> Option<f64> {
        match *self {
            TaskSpec::DelaySensitive {
                arrival_rate_bps,
                arrival_interval_s,
                ..
            } => Some(arrival_rate_bps * arrival_interval_s),
            TaskSpec::FileDelivery { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    #[serde(flatten)]
    pub spec: TaskSpec,
}

/// The universal task set, kept sorted by [`TaskId`]. File tasks and delay
/// tasks are each enumerated in `TaskId` order; that order is the fixed task
/// order used by every vector encoding in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Task>", into = "Vec<Task>")]
pub struct TaskSet {
    tasks: Vec<Task>,
}

impl TaskSet {
    pub fn new(mut tasks: Vec<Task>) -> Result<Self> {
        tasks.sort_by_key(|t| t.id);
        for pair in tasks.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Config(format!("duplicate task {}", pair[0].id)));
            }
        }
        for t in &tasks {
            if t.id.kind != t.spec.kind() {
                return Err(Error::Config(format!("task {} kind does not match its spec", t.id)));
            }
            if t.id.link.from == t.id.link.to {
                return Err(Error::Config(format!("task {} sits on a self-link", t.id)));
            }
            t.spec.validate()?;
        }
        Ok(TaskSet { tasks })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter()
    }

    pub fn get(&self, id: &TaskId) -> Option<&Task> {
        self.tasks
            .binary_search_by_key(id, |t| t.id)
            .ok()
            .map(|i| &self.tasks[i])
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn file_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| t.id.is_file())
    }

    pub fn delay_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| !t.id.is_file())
    }

    pub fn file_ids(&self) -> Vec<TaskId> {
        self.file_tasks().map(|t| t.id).collect()
    }

    pub fn delay_ids(&self) -> Vec<TaskId> {
        self.delay_tasks().map(|t| t.id).collect()
    }

    pub fn file_tasks_of(&self, device: DeviceId) -> Vec<TaskId> {
        self.file_tasks()
            .filter(|t| t.id.device() == device)
            .map(|t| t.id)
            .collect()
    }

    pub fn max_throughput(&self, id: &TaskId) -> Option<f64> {
        match self.get(id)?.spec {
            TaskSpec::FileDelivery { max_throughput_bps } => Some(max_throughput_bps),
            _ => None,
        }
    }

    pub fn rtt_limit(&self, id: &TaskId) -> Option<f64> {
        match self.get(id)?.spec {
            TaskSpec::DelaySensitive { rtt_limit_s, .. } => Some(rtt_limit_s),
            _ => None,
        }
    }

    /// RTT reported for inactive or starved delay tasks: ten times the
    /// largest RTT limit, so it always violates every limit.
    pub fn sentinel_rtt(&self) -> f64 {
        10.0 * self
            .delay_tasks()
            .filter_map(|t| self.rtt_limit(&t.id))
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Task>> for TaskSet {
    type Error = Error;

    fn try_from(tasks: Vec<Task>) -> Result<Self> {
        TaskSet::new(tasks)
    }
}

impl From<TaskSet> for Vec<Task> {
    fn from(set: TaskSet) -> Self {
        set.tasks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delay(from: u16, limit: f64) -> Task {
        Task {
            id: TaskId::delay(from, 0, 0),
            spec: TaskSpec::DelaySensitive {
                arrival_rate_bps: 25e6,
                arrival_interval_s: 0.016,
                rtt_limit_s: limit,
            },
        }
    }

    #[test]
    fn sentinel_is_ten_times_largest_limit() {
        let set = TaskSet::new(vec![delay(1, 0.016), delay(2, 0.028)]).unwrap();
        assert!((set.sentinel_rtt() - 0.28).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_tasks() {
        assert!(TaskSet::new(vec![delay(1, 0.0)]).is_err());
        assert!(TaskSet::new(vec![delay(1, 0.016), delay(1, 0.016)]).is_err());
        let mismatched = Task {
            id: TaskId::file(1, 0, 0),
            spec: delay(1, 0.01).spec,
        };
        assert!(TaskSet::new(vec![mismatched]).is_err());
    }

    #[test]
    fn packet_size_is_rate_times_interval() {
        assert_eq!(delay(1, 0.016).spec.packet_bits(), Some(25e6 * 0.016));
    }
}
