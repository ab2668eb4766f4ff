use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::action::SchedulingAction;
use super::observation::QosObservation;

/// Fixed-length history, oldest entry first. Once built it always holds
/// exactly `len()` entries; pushing evicts the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Window<T> {
    items: VecDeque<T>,
}

impl<T: Clone> Window<T> {
    /// A window of `n` copies of `fill` (the warm-start history).
    pub fn filled(n: usize, fill: T) -> Self {
        assert!(n > 0, "window length must be positive");
        Window {
            items: std::iter::repeat(fill).take(n).collect(),
        }
    }
}

impl<T> Window<T> {
    /// Builds a window from exactly `n` initial entries; `None` if empty.
    pub fn from_entries(entries: impl IntoIterator<Item = T>) -> Option<Self> {
        let items: VecDeque<T> = entries.into_iter().collect();
        (!items.is_empty()).then_some(Window { items })
    }

    pub fn push(&mut self, item: T) {
        self.items.pop_front();
        self.items.push_back(item);
    }

    pub fn pushed(mut self, item: T) -> Self {
        self.push(item);
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &T> {
        self.items.iter()
    }

    pub fn newest(&self) -> &T {
        self.items.back().expect("window is never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateStep {
    pub observation: QosObservation,
    pub action: SchedulingAction,
}

/// The past N (observation, action) pairs.
pub type StateWindow = Window<StateStep>;

/// Appends `(obs, act)` and drops the oldest pair.
pub fn push_window(w: StateWindow, obs: QosObservation, act: SchedulingAction) -> StateWindow {
    w.pushed(StateStep {
        observation: obs,
        action: act,
    })
}
