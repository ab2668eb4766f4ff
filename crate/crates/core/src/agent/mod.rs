//! Factored Q-learning scheduler: action spaces, the Q-network, exploration
//! and the offline and online training loops.

mod explore;
mod qnet;
mod space;
mod train;

pub use explore::{epsilon_greedy, ucb_select, EpsilonSchedule, ReplayBuffer, VisitCounts};
pub use qnet::{greedy_action, greedy_indices, joint_q, q_forward, td_loss, ExtendedState, QNetConfig, QNetwork, Transition, Triple};
pub use space::{ActionSpace, DeviceSpace};
pub use train::{
    offline_train, online_train, run_online, write_curve_csv, CurveRow, Learner, OfflineContext, OnlineContext, OnlineMode, PeriodRecord,
    PeriodStream, TrainHyper,
};

#[cfg(test)]
mod tests;
