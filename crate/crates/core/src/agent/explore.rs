//! Exploration rules, visit counts and the replay buffer.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::qnet::argmin_over;
use super::space::ActionSpace;
use crate::error::{Error, Result};

/// `ε_t = max(floor, start · decay^t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 0.3,
            decay: 0.99,
            floor: 0.01,
        }
    }
}

impl EpsilonSchedule {
    pub const ZERO: EpsilonSchedule = EpsilonSchedule {
        start: 0.0,
        decay: 1.0,
        floor: 0.0,
    };

    pub fn value(&self, t: u64) -> f64 {
        (self.start * self.decay.powf(t as f64)).max(self.floor)
    }
}

/// Visit counts `T(k, a^i)` per region, device and local action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts {
    counts: Vec<Vec<Vec<u64>>>,
}

impl VisitCounts {
    pub fn new(regions: usize, sizes: &[usize]) -> Self {
        VisitCounts {
            counts: (0..regions).map(|_| sizes.iter().map(|&s| vec![0; s]).collect()).collect(),
        }
    }

    pub fn get(&self, region: usize, device: usize, action: usize) -> u64 {
        self.counts[region][device][action]
    }

    pub fn increment(&mut self, region: usize, device: usize, action: usize) {
        self.counts[region][device][action] += 1;
    }

    pub fn regions(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().flatten().sum()
    }
}

/// Exploration action of Eq.-style UCB: per device, with probability ε a
/// uniform local action, otherwise the argmin of `Q + bonus` with
/// `bonus = sqrt(4η ln t / T)`. `optimistic` subtracts the bonus instead and
/// treats unvisited actions as infinitely attractive (ties among them are
/// broken uniformly); the literal rule counts an unvisited action as one
/// visit. Counts of the chosen actions are incremented.
#[allow(clippy::too_many_arguments)]
pub fn ucb_select<R: Rng + ?Sized>(
    tables: &[Vec<f64>],
    counts: &mut VisitCounts,
    t: u64,
    region: usize,
    eta: f64,
    epsilon: f64,
    optimistic: bool,
    space: &ActionSpace,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::Contract("UCB step counter starts at 1".into()));
    }
    if region >= counts.regions() {
        return Err(Error::Shape(format!("region {region} of {}", counts.regions())));
    }
    let log_t = (t as f64).ln();
    let mut out = Vec::with_capacity(tables.len());
    for (i, table) in tables.iter().enumerate() {
        let allowed = space.allowed(i);
        let a = if rng.gen::<f64>() < epsilon {
            allowed[rng.gen_range(0..allowed.len())]
        } else if optimistic {
            let untried: Vec<usize> = allowed.iter().copied().filter(|&a| counts.get(region, i, a) == 0).collect();
            if untried.is_empty() {
                let score: Vec<f64> = table
                    .iter()
                    .enumerate()
                    .map(|(a, q)| q - (4.0 * eta * log_t / counts.get(region, i, a).max(1) as f64).sqrt())
                    .collect();
                argmin_over(&score, allowed)
            } else {
                untried[rng.gen_range(0..untried.len())]
            }
        } else {
            let score: Vec<f64> = table
                .iter()
                .enumerate()
                .map(|(a, q)| q + (4.0 * eta * log_t / counts.get(region, i, a).max(1) as f64).sqrt())
                .collect();
            argmin_over(&score, allowed)
        };
        counts.increment(region, i, a);
        out.push(a);
    }
    Ok(out)
}

/// Per device: uniform local action with probability ε, else the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(tables: &[Vec<f64>], epsilon: f64, space: &ActionSpace, rng: &mut R) -> Vec<usize> {
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let allowed = space.allowed(i);
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                allowed[rng.gen_range(0..allowed.len())]
            } else {
                argmin_over(t, allowed)
            }
        })
        .collect()
}

/// Fixed-capacity ring buffer; sampling is uniform without replacement
/// within a batch.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&T> {
        let n = batch.min(self.items.len());
        index::sample(rng, self.items.len(), n).into_iter().map(|i| &self.items[i]).collect()
    }
}
