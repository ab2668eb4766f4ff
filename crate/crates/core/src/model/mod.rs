//! Domain types shared by the simulator, the learners and the harness.

mod action;
mod cost;
mod ids;
mod observation;
mod task;
mod window;

pub use action::{cap_index, cap_value, cw_index, CwPair, LocalAction, SchedulingAction, CAP_LEVELS, CW_GRID};
pub use cost::{compute_cost, CostParams};
pub use ids::{DeviceId, LinkId, TaskId, TaskKind};
pub use observation::QosObservation;
pub use task::{Task, TaskSet, TaskSpec};
pub use window::{push_window, StateStep, StateWindow, Window};
