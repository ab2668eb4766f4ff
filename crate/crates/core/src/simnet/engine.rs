//! Slot-level EDCA contention. Time is kept in integer nanoseconds; the
//! engine jumps from one contention resolution to the next instead of
//! stepping every slot.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::scenario::{to_ns, Scenario, NS_PER_S};
use crate::error::Result;
use crate::model::{DeviceId, QosObservation, SchedulingAction, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ac {
    Vi,
    Be,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Managed(DeviceId, Ac),
    Interferer,
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    Delay { source: usize, arrival: u64, last: bool },
    Paced { source: usize },
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    airtime: u64,
    payload: Payload,
}

#[derive(Debug)]
struct Queue {
    owner: Owner,
    aifs: u64,
    cw: u16,
    backoff: u64,
    ready_at: u64,
    head_since: u64,
    frames: VecDeque<Frame>,
}

impl Queue {
    fn tx_time(&self, slot: u64) -> Option<u64> {
        (!self.frames.is_empty()).then(|| self.ready_at + (self.aifs + self.backoff) * slot)
    }
}

/// Shared transmit FIFO of a managed device. Frames leave it in order and
/// only when their AC queue has room, so a full BE queue blocks VI frames
/// queued behind BE frames.
#[derive(Debug, Default)]
struct DriverFifo {
    frames: VecDeque<(usize, Frame)>,
    /// Delay-task frames waiting for FIFO space.
    pending: VecDeque<(usize, Frame)>,
}

#[derive(Debug)]
struct DelaySource {
    task: TaskId,
    queue: usize,
    fifo: Option<usize>,
    next_arrival: u64,
    interval: u64,
    packet_bits: u64,
    link_rate: f64,
}

/// Token-paced release of fixed-size frames into a bounded queue; used for
/// both file dispatchers (rate = cap) and interferers (rate = offered load).
#[derive(Debug)]
struct PacedSource {
    task: Option<TaskId>,
    queue: usize,
    fifo: Option<usize>,
    rate_bps: f64,
    start: u64,
    released_bits: u64,
    frame_bits: u64,
    airtime: u64,
    outstanding: usize,
    limit: usize,
}

impl PacedSource {
    /// Earliest time at which one more frame fits under `rate · elapsed`.
    fn next_release(&self) -> Option<u64> {
        if self.outstanding >= self.limit || !(self.rate_bps > 0.0) {
            return None;
        }
        let needed = (self.released_bits + self.frame_bits) as f64;
        let mut t = self.start + (needed * NS_PER_S / self.rate_bps).ceil() as u64;
        // ceil() can land one nanosecond short after rounding in the product.
        while !self.may_release_at(t) {
            t += 1;
        }
        Some(t)
    }

    fn may_release_at(&self, t: u64) -> bool {
        let budget = self.rate_bps * (t.saturating_sub(self.start)) as f64 / NS_PER_S;
        (self.released_bits + self.frame_bits) as f64 <= budget
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct PhaseStats {
    pub released_bits: BTreeMap<TaskId, u64>,
    pub rtt_sum: BTreeMap<TaskId, f64>,
    pub packets: BTreeMap<TaskId, u64>,
    pub airtime: BTreeMap<DeviceId, u64>,
    pub interferer_airtime: u64,
    pub collisions: u64,
    pub access_delay_sum: [f64; 2],
    pub access_delay_count: [u64; 2],
}

pub(crate) struct Engine<'a> {
    sc: &'a Scenario,
    rng: ChaCha8Rng,
    slot: u64,
    now: u64,
    idle_since: u64,
    queues: Vec<Queue>,
    delay_sources: Vec<DelaySource>,
    paced: Vec<PacedSource>,
    managed_queue: BTreeMap<(DeviceId, u8), usize>,
    fifos: Vec<DriverFifo>,
    pub stats: PhaseStats,
}

fn ac_slot(ac: Ac) -> u8 {
    match ac {
        Ac::Vi => 0,
        Ac::Be => 1,
    }
}

impl<'a> Engine<'a> {
    pub fn new(sc: &'a Scenario, action: &SchedulingAction, loads_bps: &[f64], rng: ChaCha8Rng) -> Result<Self> {
        action.validate(&sc.tasks, &sc.devices)?;
        let t = &sc.timing;
        let slot = sc.slot_ns();
        let mut engine = Engine {
            sc,
            rng,
            slot,
            now: 0,
            idle_since: 0,
            queues: Vec::new(),
            delay_sources: Vec::new(),
            paced: Vec::new(),
            managed_queue: BTreeMap::new(),
            fifos: Vec::new(),
            stats: PhaseStats::default(),
        };
        let use_fifo = t.driver_queue_frames > 0;
        if use_fifo {
            engine.fifos.resize_with(sc.devices.len(), DriverFifo::default);
        }
        let fifo_of = |d: DeviceId| {
            use_fifo
                .then(|| sc.devices.iter().position(|&x| x == d))
                .flatten()
        };
        for &d in &sc.devices {
            let cw = action.cw_of(d)?;
            for (ac, aifs, w) in [(Ac::Vi, t.aifs_vi_slots, cw.vi), (Ac::Be, t.aifs_be_slots, cw.be)] {
                let idx = engine.add_queue(Owner::Managed(d, ac), aifs, w);
                engine.managed_queue.insert((d, ac_slot(ac)), idx);
            }
        }
        let payload = t.max_payload_bits as u64;
        for task in sc.tasks.iter().filter(|t| sc.pattern.is_active(&t.id)) {
            let link_rate = sc.link(task.id.link).map(|l| l.rate_bps).unwrap_or(1.0);
            if let Some(packet_bits) = task.spec.packet_bits() {
                let interval = match task.spec {
                    crate::model::TaskSpec::DelaySensitive { arrival_interval_s, .. } => to_ns(arrival_interval_s),
                    _ => unreachable!(),
                };
                let offset = engine.rng.gen_range(0..interval.max(1));
                engine.delay_sources.push(DelaySource {
                    task: task.id,
                    queue: engine.managed_queue[&(task.id.device(), ac_slot(Ac::Vi))],
                    fifo: fifo_of(task.id.device()),
                    next_arrival: offset,
                    interval,
                    packet_bits: packet_bits.round() as u64,
                    link_rate,
                });
            } else {
                engine.paced.push(PacedSource {
                    task: Some(task.id),
                    queue: engine.managed_queue[&(task.id.device(), ac_slot(Ac::Be))],
                    fifo: fifo_of(task.id.device()),
                    rate_bps: action.cap(&task.id)?,
                    start: 0,
                    released_bits: 0,
                    frame_bits: payload,
                    airtime: engine.airtime(payload, link_rate),
                    outstanding: 0,
                    limit: if use_fifo { usize::MAX } else { t.ac_queue_frames },
                });
            }
        }
        for (spec, &load) in sc.interference.interferers.iter().zip(loads_bps) {
            let q = engine.add_queue(Owner::Interferer, t.aifs_be_slots, t.interferer_cw);
            engine.paced.push(PacedSource {
                task: None,
                queue: q,
                fifo: None,
                rate_bps: load,
                start: 0,
                released_bits: 0,
                frame_bits: payload,
                airtime: engine.airtime(payload, spec.rate_bps),
                outstanding: 0,
                limit: t.ac_queue_frames,
            });
        }
        Ok(engine)
    }

    fn airtime(&self, bits: u64, rate_bps: f64) -> u64 {
        to_ns(self.sc.timing.overhead_s) + (bits as f64 * NS_PER_S / rate_bps).ceil() as u64
    }

    fn add_queue(&mut self, owner: Owner, aifs: u32, cw: u16) -> usize {
        self.queues.push(Queue {
            owner,
            aifs: aifs as u64,
            cw,
            backoff: 0,
            ready_at: 0,
            head_since: 0,
            frames: VecDeque::new(),
        });
        self.queues.len() - 1
    }

    fn draw_backoff(&mut self, q: usize) {
        let cw = self.queues[q].cw as u64;
        self.queues[q].backoff = self.rng.gen_range(0..=cw);
    }

    /// Aligns a wake-up time to the slot grid of the current idle interval.
    fn aligned(&self, t: u64) -> u64 {
        let t = t.max(self.now);
        let since = t - self.idle_since;
        self.idle_since + since.div_ceil(self.slot) * self.slot
    }

    fn enqueue(&mut self, q: usize, frame: Frame, at: u64) {
        if self.queues[q].frames.is_empty() {
            let ready = self.aligned(at);
            self.queues[q].ready_at = ready;
            self.queues[q].head_since = at.max(self.now);
            self.draw_backoff(q);
        }
        self.queues[q].frames.push_back(frame);
    }

    /// Installs a new action at the current time and restarts dispatcher
    /// accounting from `phase_start`.
    pub fn apply_action(&mut self, action: &SchedulingAction, phase_start: u64) -> Result<()> {
        action.validate(&self.sc.tasks, &self.sc.devices)?;
        for &d in &self.sc.devices {
            let cw = action.cw_of(d)?;
            for (ac, w) in [(Ac::Vi, cw.vi), (Ac::Be, cw.be)] {
                let q = self.managed_queue[&(d, ac_slot(ac))];
                if self.queues[q].cw != w {
                    self.queues[q].cw = w;
                    self.draw_backoff(q);
                }
            }
        }
        for src in self.paced.iter_mut() {
            if let Some(task) = src.task {
                src.rate_bps = action.cap(&task)?;
            }
            src.start = phase_start;
            src.released_bits = 0;
        }
        Ok(())
    }

    fn next_source(&self) -> Option<(u64, Source)> {
        let delay = self
            .delay_sources
            .iter()
            .enumerate()
            .map(|(i, s)| (s.next_arrival, Source::Delay(i)));
        let paced = self
            .paced
            .iter()
            .enumerate()
            .filter(|(_, s)| s.fifo.map_or(true, |f| self.fifo_accepts(f)))
            .filter_map(|(i, s)| s.next_release().map(|t| (t.max(self.now), Source::Paced(i))));
        delay.chain(paced).min_by_key(|(t, _)| *t)
    }

    fn fifo_accepts(&self, f: usize) -> bool {
        let fifo = &self.fifos[f];
        fifo.pending.is_empty() && fifo.frames.len() < self.sc.timing.driver_queue_frames
    }

    /// Moves frames from a device's FIFO into its AC queues and refills the
    /// FIFO from waiting delay-task frames.
    fn pump(&mut self, f: usize, t: u64) {
        let depth = self.sc.timing.driver_queue_frames;
        let limit = self.sc.timing.ac_queue_frames;
        loop {
            let mut moved = false;
            while let Some(&(q, _)) = self.fifos[f].frames.front() {
                if self.queues[q].frames.len() >= limit {
                    break;
                }
                let (q, frame) = self.fifos[f].frames.pop_front().expect("front exists");
                self.enqueue(q, frame, t);
                moved = true;
            }
            while self.fifos[f].frames.len() < depth {
                let Some(entry) = self.fifos[f].pending.pop_front() else { break };
                self.fifos[f].frames.push_back(entry);
                moved = true;
            }
            if !moved {
                break;
            }
        }
    }

    fn next_tx(&self) -> Option<u64> {
        self.queues.iter().filter_map(|q| q.tx_time(self.slot)).min()
    }

    fn fire(&mut self, source: Source, t: u64) {
        let payload = self.sc.timing.max_payload_bits as u64;
        match source {
            Source::Delay(i) => {
                let (queue, fifo, packet_bits, rate) = {
                    let s = &mut self.delay_sources[i];
                    s.next_arrival += s.interval;
                    (s.queue, s.fifo, s.packet_bits, s.link_rate)
                };
                let mut remaining = packet_bits;
                while remaining > 0 {
                    let bits = remaining.min(payload);
                    remaining -= bits;
                    let frame = Frame {
                        airtime: self.airtime(bits, rate),
                        payload: Payload::Delay {
                            source: i,
                            arrival: t,
                            last: remaining == 0,
                        },
                    };
                    match fifo {
                        Some(f) => self.fifos[f].pending.push_back((queue, frame)),
                        None => self.enqueue(queue, frame, t),
                    }
                }
                if let Some(f) = fifo {
                    self.pump(f, t);
                }
            }
            Source::Paced(i) => {
                let (queue, fifo, airtime, task) = {
                    let s = &mut self.paced[i];
                    s.released_bits += s.frame_bits;
                    s.outstanding += 1;
                    (s.queue, s.fifo, s.airtime, s.task)
                };
                if let Some(task) = task {
                    *self.stats.released_bits.entry(task).or_default() += self.paced[i].frame_bits;
                }
                let frame = Frame {
                    airtime,
                    payload: Payload::Paced { source: i },
                };
                match fifo {
                    Some(f) => {
                        self.fifos[f].frames.push_back((queue, frame));
                        self.pump(f, t);
                    }
                    None => self.enqueue(queue, frame, t),
                }
            }
        }
    }

    /// Advances the simulation to `until` (nanoseconds since period start).
    pub fn run_until(&mut self, until: u64) {
        loop {
            let src = self.next_source();
            let tx = if self.now < until { self.next_tx() } else { None };
            match (src, tx) {
                (Some((ts, s)), tx) if ts < until && tx.map_or(true, |tx| ts <= tx) => self.fire(s, ts),
                (_, Some(tx)) if tx < until => self.transmit(tx, until),
                _ => break,
            }
        }
        self.now = self.now.max(until);
        if self.queues.iter().all(|q| q.frames.is_empty()) {
            self.idle_since = self.idle_since.max(self.now.min(until));
        }
    }

    fn transmit(&mut self, t_tx: u64, phase_end: u64) {
        let slot = self.slot;
        let mut contenders: Vec<usize> = (0..self.queues.len())
            .filter(|&q| self.queues[q].tx_time(slot) == Some(t_tx))
            .collect();
        // Internal collision: a device's VI queue beats its own BE queue.
        let mut losers = Vec::new();
        contenders.retain(|&q| match self.queues[q].owner {
            Owner::Managed(d, Ac::Be) => {
                let vi = self.managed_queue[&(d, ac_slot(Ac::Vi))];
                if self.queues[vi].tx_time(slot) == Some(t_tx) {
                    losers.push(q);
                    false
                } else {
                    true
                }
            }
            _ => true,
        });
        for q in 0..self.queues.len() {
            if contenders.contains(&q) || self.queues[q].frames.is_empty() {
                continue;
            }
            let queue = &mut self.queues[q];
            let elapsed = t_tx.saturating_sub(queue.ready_at) / slot;
            let counted = elapsed.saturating_sub(queue.aifs);
            queue.backoff -= counted.min(queue.backoff);
        }
        for q in losers {
            self.draw_backoff(q);
        }
        let duration = contenders
            .iter()
            .map(|&q| self.queues[q].frames[0].airtime)
            .max()
            .unwrap_or(0);
        let t_end = t_tx + duration;
        let mut refill = None;
        if contenders.len() == 1 {
            let q = contenders[0];
            let frame = self.queues[q].frames.pop_front().expect("contender has a frame");
            let head_since = std::mem::replace(&mut self.queues[q].head_since, t_end);
            let counted_airtime = t_end.min(phase_end.max(t_tx)) - t_tx;
            match self.queues[q].owner {
                Owner::Managed(d, ac) => {
                    *self.stats.airtime.entry(d).or_default() += counted_airtime;
                    let k = ac_slot(ac) as usize;
                    self.stats.access_delay_sum[k] += (t_tx - head_since.min(t_tx)) as f64 / NS_PER_S;
                    self.stats.access_delay_count[k] += 1;
                }
                Owner::Interferer => self.stats.interferer_airtime += counted_airtime,
            }
            match frame.payload {
                Payload::Delay { source, arrival, last } => {
                    if last {
                        let task = self.delay_sources[source].task;
                        let rtt = (t_end - arrival) as f64 / NS_PER_S + self.sc.timing.ack_latency_s;
                        *self.stats.rtt_sum.entry(task).or_default() += rtt;
                        *self.stats.packets.entry(task).or_default() += 1;
                    }
                }
                Payload::Paced { source } => self.paced[source].outstanding -= 1,
            }
            if !self.queues[q].frames.is_empty() {
                self.draw_backoff(q);
            }
            if let Owner::Managed(d, _) = self.queues[q].owner {
                if !self.fifos.is_empty() {
                    refill = self.sc.devices.iter().position(|&x| x == d);
                }
            }
        } else {
            self.stats.collisions += 1;
            for &q in &contenders {
                self.draw_backoff(q);
            }
        }
        self.now = t_end;
        self.idle_since = t_end;
        for queue in self.queues.iter_mut().filter(|q| !q.frames.is_empty()) {
            queue.ready_at = t_end;
        }
        if let Some(f) = refill {
            self.pump(f, t_end);
        }
    }

    pub fn take_stats(&mut self) -> PhaseStats {
        std::mem::take(&mut self.stats)
    }
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Delay(usize),
    Paced(usize),
}

/// Converts phase statistics into a full-period-equivalent observation.
pub(crate) fn observation_from(
    sc: &Scenario,
    stats: &PhaseStats,
    action: &SchedulingAction,
    phase_ns: u64,
) -> Result<QosObservation> {
    let period = sc.period_ns();
    let scale = period as f64 / phase_ns as f64;
    let sentinel = sc.tasks.sentinel_rtt();
    let mut obs = QosObservation::default();
    for id in sc.tasks.file_ids() {
        let bits = if sc.pattern.is_active(&id) {
            let released = stats.released_bits.get(&id).copied().unwrap_or(0) as f64;
            // The dispatcher never exceeds cap · phase; the min() absorbs the
            // rounding of the rescale to a full period.
            (released * scale).min(action.cap(&id)? * sc.timing.period_s)
        } else {
            0.0
        };
        obs.throughput_bits.insert(id, bits);
    }
    for id in sc.tasks.delay_ids() {
        let rtt = match stats.packets.get(&id) {
            Some(&n) if n > 0 && sc.pattern.is_active(&id) => stats.rtt_sum[&id] / n as f64,
            _ => sentinel,
        };
        obs.rtt_s.insert(id, rtt);
    }
    Ok(obs)
}
