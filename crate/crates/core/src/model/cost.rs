use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ids::TaskId;
use super::observation::QosObservation;
use super::task::TaskSet;
use crate::error::{Error, Result};

/// Parameters of the per-period cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Reward per delivered bit in a period (1 / bits-per-period).
    pub weight: f64,
    pub gamma: f64,
    pub rtt_limits_s: BTreeMap<TaskId, f64>,
    pub file_tasks: Vec<TaskId>,
}

impl CostParams {
    pub fn new(weight: f64, gamma: f64, tasks: &TaskSet) -> Result<Self> {
        if !(weight > 0.0) || !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("cost weight {weight} / discount {gamma} out of range")));
        }
        Ok(CostParams {
            weight,
            gamma,
            rtt_limits_s: tasks
                .delay_tasks()
                .map(|t| (t.id, tasks.rtt_limit(&t.id).unwrap_or(f64::INFINITY)))
                .collect(),
            file_tasks: tasks.file_ids(),
        })
    }

    /// Weight normalizing a file task running at `r_max_bps` for a whole
    /// period of `period_s` seconds to one unit of cost.
    pub fn normalized_weight(r_max_bps: f64, period_s: f64) -> f64 {
        1.0 / (r_max_bps * period_s)
    }
}

/// Number of delay tasks over their RTT limit minus the weighted file
/// throughput (bits per period).
pub fn compute_cost(obs: &QosObservation, p: &CostParams) -> Result<f64> {
    let mut violations = 0.0;
    for (id, limit) in &p.rtt_limits_s {
        if obs.rtt(id)? > *limit {
            violations += 1.0;
        }
    }
    let mut bits = 0.0;
    for id in &p.file_tasks {
        bits += obs.throughput(id)?;
    }
    Ok(violations - p.weight * bits)
}
