//! Built-in simulator renditions of the eleven test scenarios: the
//! universal task set on links (1,0), (2,0), (3,0), one traffic pattern and
//! a triple of maximum link rates each.

use crate::error::{Error, Result};
use crate::model::{DeviceId, Task, TaskId, TaskSet, TaskSpec};
use crate::simnet::{InterferenceSpec, InterfererSpec, LinkSpec, MacTiming, Scenario, TrafficPattern};

/// (traffic pattern, link rates in Mbit/s) of scenarios 1 to 11.
const TABLE: [(u32, [f64; 3]); 11] = [
    (1, [563.0, 499.0, 572.0]),
    (2, [563.0, 499.0, 572.0]),
    (3, [563.0, 499.0, 572.0]),
    (2, [563.0, 370.0, 572.0]),
    (3, [563.0, 370.0, 572.0]),
    (3, [563.0, 499.0, 476.0]),
    (3, [563.0, 424.0, 572.0]),
    (2, [563.0, 400.0, 346.0]),
    (3, [563.0, 400.0, 346.0]),
    (2, [459.0, 499.0, 572.0]),
    (3, [459.0, 499.0, 572.0]),
];

pub const BUILTIN_SCENARIOS: u32 = TABLE.len() as u32;

const FILE_RATE_BPS: f64 = 600e6;
const FRAME_INTERVAL_S: f64 = 0.016;

/// Tasks 1 to 4: a 50 Mbit/s delay task and a file task on (1,0), and a
/// 25 Mbit/s delay task on each of (2,0) and (3,0).
pub fn universal_tasks() -> TaskSet {
    let delay = |from, rate, limit| Task {
        id: TaskId::delay(from, 0, 0),
        spec: TaskSpec::DelaySensitive {
            arrival_rate_bps: rate,
            arrival_interval_s: FRAME_INTERVAL_S,
            rtt_limit_s: limit,
        },
    };
    TaskSet::new(vec![
        delay(1, 50e6, 0.016),
        Task {
            id: TaskId::file(1, 0, 0),
            spec: TaskSpec::FileDelivery {
                max_throughput_bps: FILE_RATE_BPS,
            },
        },
        delay(2, 25e6, 0.028),
        delay(3, 25e6, 0.028),
    ])
    .expect("universal task set is valid")
}

/// Active tasks of traffic pattern 1, 2 or 3.
pub fn pattern_tasks(pattern: u32) -> Result<TrafficPattern> {
    let mut active = vec![TaskId::delay(1, 0, 0), TaskId::file(1, 0, 0)];
    match pattern {
        1 => {}
        2 => active.push(TaskId::delay(2, 0, 0)),
        3 => active.extend([TaskId::delay(2, 0, 0), TaskId::delay(3, 0, 0)]),
        p => return Err(Error::Config(format!("unknown traffic pattern {p}"))),
    }
    active.sort();
    Ok(TrafficPattern { id: pattern, active })
}

pub fn builtin_timing() -> MacTiming {
    MacTiming {
        max_payload_bits: 64_000,
        driver_queue_frames: 32,
        ac_queue_frames: 2,
        ..MacTiming::default()
    }
}

/// One 400 Mbit/s interferer whose offered load is redrawn every period
/// from {0, 50, ..., 400} Mbit/s.
pub fn builtin_interference() -> InterferenceSpec {
    InterferenceSpec {
        interferers: vec![InterfererSpec {
            name: "neighbor".into(),
            rate_bps: 400e6,
        }],
        load_levels_bps: (0..=8).map(|i| i as f64 * 50e6).collect(),
        persistence: 0.0,
    }
}

pub fn builtin_scenario(id: u32) -> Result<Scenario> {
    let (pattern, rates) = *TABLE
        .get((id as usize).wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("built-in scenarios are 1 to {BUILTIN_SCENARIOS}, got {id}")))?;
    let sc = Scenario {
        name: format!("scenario{id}"),
        devices: (0..4).map(DeviceId).collect(),
        links: (1..=3)
            .map(|i| LinkSpec {
                from: DeviceId(i),
                to: DeviceId(0),
                rate_bps: rates[i as usize - 1] * 1e6,
            })
            .collect(),
        tasks: universal_tasks(),
        pattern: pattern_tasks(pattern)?,
        interference: builtin_interference(),
        timing: builtin_timing(),
        seed: id as u64,
    };
    sc.validate()?;
    Ok(sc)
}
