// SPDX-License-Identifier: Apache-2.0

//! Deterministic GSM network simulator.
//!
//! Outbound parts are attempted when sent and, on failure, re-attempted
//! every `retry_interval` until one succeeds or `validity_period` has
//! elapsed since the first attempt. A message is delivered once all of its
//! parts are; if any part expires the whole message expires and the handset
//! never sees it.
//!
//! Inbound messages from handsets are never lost: they are segmented, held
//! back while the sender's region is in an outage, and arrive part by part
//! after a sampled latency, possibly out of order.
//!
//! Time only moves through [`SimulatedNetwork::simulate_step`]; randomness
//! comes from a seeded ChaCha stream, so the same seed, model and inputs
//! always produce the same event log.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_single_message, segment_message, DeliveryReceipt, DeliveryStatus, Gateway, MessageId,
    Segment, SegmentLimits, TransportError,
};
use crate::model::Phone;
use crate::time::{Clock, Timestamp};

/// Phone-prefix to region label, longest prefix wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMap {
    routes: BTreeMap<String, String>,
}

impl Default for RegionMap {
    /// Routes every number to region `default`.
    fn default() -> Self {
        let mut routes = BTreeMap::new();
        routes.insert("+".to_string(), "default".to_string());
        RegionMap { routes }
    }
}

impl RegionMap {
    pub fn empty() -> Self {
        RegionMap {
            routes: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, prefix: impl Into<String>, region: impl Into<String>) {
        self.routes.insert(prefix.into(), region.into());
    }

    pub fn region_of(&self, phone: &Phone) -> Option<&str> {
        self.routes
            .iter()
            .filter(|(prefix, _)| phone.as_str().starts_with(prefix.as_str()))
            .max_by_key(|(prefix, _)| prefix.len())
            .map(|(_, region)| region.as_str())
    }

    pub fn regions(&self) -> BTreeSet<&str> {
        self.routes.values().map(String::as_str).collect()
    }
}

/// A region-wide outage over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outage {
    pub region: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// Chance that a single delivery attempt succeeds.
    pub delivery_probability: f64,
    /// Per-region overrides of `delivery_probability`.
    pub region_probability: BTreeMap<String, f64>,
    pub latency_min: Duration,
    pub latency_max: Duration,
    pub retry_interval: Duration,
    pub validity_period: Duration,
    pub regions: RegionMap,
    pub outages: Vec<Outage>,
    pub limits: SegmentLimits,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            delivery_probability: 1.0,
            region_probability: BTreeMap::new(),
            latency_min: Duration::from_secs(1),
            latency_max: Duration::from_secs(5),
            retry_interval: Duration::from_secs(30 * 60),
            validity_period: Duration::from_secs(48 * 3600),
            regions: RegionMap::default(),
            outages: Vec::new(),
            limits: SegmentLimits::default(),
        }
    }
}

impl NetworkModel {
    fn probability_for(&self, region: &str) -> f64 {
        self.region_probability
            .get(region)
            .copied()
            .unwrap_or(self.delivery_probability)
            .clamp(0.0, 1.0)
    }

    fn outage_end(&self, region: &str, at: Timestamp) -> Option<Timestamp> {
        self.outages
            .iter()
            .filter(|o| o.region == region && o.start <= at && at < o.end)
            .map(|o| o.end)
            .max()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    /// Delivery outcome of an outbound message, for the gateway's owner.
    Receipt(DeliveryReceipt),
    /// One part of a message sent by a handset, arriving at the gateway.
    Inbound {
        phone: Phone,
        segment: Segment,
        at: Timestamp,
    },
    /// An outbound message fully delivered to the handset.
    Handset {
        phone: Phone,
        message_id: MessageId,
        text: String,
        at: Timestamp,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SimStats {
    pub messages_sent: u64,
    pub segments_sent: u64,
    pub attempts: u64,
    pub failed_attempts: u64,
    pub segments_delivered: u64,
    pub segments_expired: u64,
    pub messages_delivered: u64,
    pub messages_expired: u64,
    pub inbound_messages: u64,
    pub inbound_segments: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PartState {
    Pending,
    Delivered,
    Expired,
}

#[derive(Debug)]
struct Outbound {
    destination: Phone,
    region: String,
    first_attempt: Timestamp,
    payloads: Vec<String>,
    parts: Vec<PartState>,
    attempts: Vec<u32>,
    outcome: Option<DeliveryStatus>,
}

#[derive(Debug)]
enum Action {
    Attempt { id: MessageId, part: u16 },
    Arrive { id: MessageId, part: u16 },
    Expire { id: MessageId, part: u16 },
    InboundArrive { phone: Phone, segment: Segment },
}

struct State {
    model: NetworkModel,
    rng: ChaCha8Rng,
    queue: BTreeMap<(Timestamp, u64), Action>,
    seq: u64,
    outbound: BTreeMap<MessageId, Outbound>,
    next_inbound: u64,
    lost: BTreeSet<(MessageId, u16)>,
    log: Vec<String>,
    stats: SimStats,
    last_step: Timestamp,
}

impl State {
    fn schedule(&mut self, at: Timestamp, action: Action) {
        self.seq += 1;
        self.queue.insert((at, self.seq), action);
    }

    fn latency(&mut self) -> Duration {
        let lo = self.model.latency_min.as_millis() as u64;
        let hi = self.model.latency_max.as_millis() as u64;
        if hi <= lo {
            Duration::from_millis(lo)
        } else {
            Duration::from_millis(self.rng.random_range(lo..=hi))
        }
    }

    fn log(&mut self, at: Timestamp, line: std::fmt::Arguments<'_>) {
        let mut s = String::new();
        let _ = write!(s, "{at} {line}");
        self.log.push(s);
    }
}

/// Simulated SMSC and radio network behind the [`Gateway`] port.
pub struct SimulatedNetwork {
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

impl SimulatedNetwork {
    pub fn new(model: NetworkModel, seed: u64, clock: Arc<dyn Clock>) -> Self {
        let now = clock.now();
        SimulatedNetwork {
            clock,
            state: Mutex::new(State {
                model,
                rng: ChaCha8Rng::seed_from_u64(seed),
                queue: BTreeMap::new(),
                seq: 0,
                outbound: BTreeMap::new(),
                next_inbound: 1,
                lost: BTreeSet::new(),
                log: Vec::new(),
                stats: SimStats::default(),
                last_step: now,
            }),
        }
    }

    pub fn model(&self) -> NetworkModel {
        self.state.lock().model.clone()
    }

    /// Makes every attempt to deliver one part of an outbound message fail.
    pub fn inject_loss(&self, id: MessageId, part: u16) {
        self.state.lock().lost.insert((id, part));
    }

    /// Time of the next scheduled network action.
    pub fn next_event_time(&self) -> Option<Timestamp> {
        self.state.lock().queue.keys().next().map(|(t, _)| *t)
    }

    pub fn log(&self) -> Vec<String> {
        self.state.lock().log.clone()
    }

    pub fn stats(&self) -> SimStats {
        self.state.lock().stats
    }

    /// Number of delivery attempts made for one part so far.
    pub fn attempts(&self, id: MessageId, part: u16) -> Option<u32> {
        let st = self.state.lock();
        st.outbound
            .get(&id)
            .and_then(|m| m.attempts.get(part as usize - 1).copied())
    }

    /// True when every outbound part has been delivered or has expired.
    pub fn all_settled(&self) -> bool {
        self.state
            .lock()
            .outbound
            .values()
            .all(|m| m.parts.iter().all(|p| *p != PartState::Pending))
    }

    /// Per-part terminal states: (delivered, expired, pending).
    pub fn part_tally(&self) -> (u64, u64, u64) {
        let st = self.state.lock();
        let mut tally = (0, 0, 0);
        for p in st.outbound.values().flat_map(|m| m.parts.iter()) {
            match p {
                PartState::Delivered => tally.0 += 1,
                PartState::Expired => tally.1 += 1,
                PartState::Pending => tally.2 += 1,
            }
        }
        tally
    }

    /// A handset sends `text` at `at`. Returns the inbound message id.
    pub fn submit_inbound(
        &self,
        phone: &Phone,
        text: &str,
        at: Timestamp,
    ) -> Result<MessageId, TransportError> {
        let mut st = self.state.lock();
        let region = st
            .model
            .regions
            .region_of(phone)
            .ok_or_else(|| TransportError::UnroutableDestination(phone.clone()))?
            .to_string();
        let id = MessageId(st.next_inbound);
        st.next_inbound += 1;
        let limits = st.model.limits;
        let segments = segment_message(id, text, phone, &limits)?;
        let release = st.model.outage_end(&region, at).unwrap_or(at);
        st.stats.inbound_messages += 1;
        st.log(
            at,
            format_args!(
                "inbound-submit in={id} from={phone} parts={} region={region}",
                segments.len()
            ),
        );
        for segment in segments {
            let latency = st.latency();
            st.stats.inbound_segments += 1;
            st.schedule(
                release + latency,
                Action::InboundArrive {
                    phone: phone.clone(),
                    segment,
                },
            );
        }
        Ok(id)
    }

    /// Applies every action due at or before `now`, in time order.
    pub fn simulate_step(&self, now: Timestamp) -> Vec<SimEvent> {
        let mut st = self.state.lock();
        debug_assert!(now >= st.last_step, "virtual clock moved backwards");
        st.last_step = st.last_step.max(now);
        let mut events = Vec::new();
        while let Some(entry) = st.queue.first_entry() {
            let (at, _) = *entry.key();
            if at > now {
                break;
            }
            let action = entry.remove();
            match action {
                Action::Attempt { id, part } => attempt(&mut st, at, id, part),
                Action::Arrive { id, part } => arrive(&mut st, at, id, part, &mut events),
                Action::Expire { id, part } => expire(&mut st, at, id, part, &mut events),
                Action::InboundArrive { phone, segment } => {
                    st.log(
                        at,
                        format_args!(
                            "inbound-arrive in={} from={phone} part={}/{}",
                            segment.message_id, segment.part_index, segment.part_count
                        ),
                    );
                    events.push(SimEvent::Inbound { phone, segment, at });
                }
            }
        }
        events
    }
}

fn attempt(st: &mut State, at: Timestamp, id: MessageId, part: u16) {
    let idx = part as usize - 1;
    let (region, first_attempt, pending) = match st.outbound.get(&id) {
        Some(m) => (
            m.region.clone(),
            m.first_attempt,
            m.parts[idx] == PartState::Pending,
        ),
        None => return,
    };
    if !pending {
        return;
    }
    let roll: f64 = st.rng.random();
    let in_outage = st.model.outage_end(&region, at).is_some();
    let lost = st.lost.contains(&(id, part));
    let success = !in_outage && !lost && roll < st.model.probability_for(&region);
    st.stats.attempts += 1;
    let n = {
        let m = st.outbound.get_mut(&id).expect("message exists");
        m.attempts[idx] += 1;
        m.attempts[idx]
    };
    if success {
        let latency = st.latency();
        st.log(
            at,
            format_args!(
                "attempt msg={id} part={part} n={n} ok latency={}ms",
                latency.as_millis()
            ),
        );
        st.schedule(at + latency, Action::Arrive { id, part });
        return;
    }
    st.stats.failed_attempts += 1;
    let reason = if in_outage {
        "outage"
    } else if lost {
        "lost"
    } else {
        "fail"
    };
    st.log(
        at,
        format_args!("attempt msg={id} part={part} n={n} {reason}"),
    );
    let validity = st.model.validity_period;
    let next = at + st.model.retry_interval;
    if next.since(first_attempt) < validity {
        st.schedule(next, Action::Attempt { id, part });
    } else {
        st.schedule(first_attempt + validity, Action::Expire { id, part });
    }
}

fn arrive(st: &mut State, at: Timestamp, id: MessageId, part: u16, events: &mut Vec<SimEvent>) {
    let Some(m) = st.outbound.get_mut(&id) else {
        return;
    };
    let idx = part as usize - 1;
    if m.parts[idx] != PartState::Pending {
        return;
    }
    m.parts[idx] = PartState::Delivered;
    let complete = m.outcome.is_none() && m.parts.iter().all(|p| *p == PartState::Delivered);
    let phone = m.destination.clone();
    let text: String = m.payloads.concat();
    if complete {
        m.outcome = Some(DeliveryStatus::Delivered);
    }
    st.stats.segments_delivered += 1;
    st.log(at, format_args!("deliver msg={id} part={part}"));
    if complete {
        st.stats.messages_delivered += 1;
        st.log(at, format_args!("receipt msg={id} delivered"));
        events.push(SimEvent::Receipt(DeliveryReceipt {
            message_id: id,
            status: DeliveryStatus::Delivered,
            at,
        }));
        events.push(SimEvent::Handset {
            phone,
            message_id: id,
            text,
            at,
        });
    }
}

fn expire(st: &mut State, at: Timestamp, id: MessageId, part: u16, events: &mut Vec<SimEvent>) {
    let Some(m) = st.outbound.get_mut(&id) else {
        return;
    };
    let idx = part as usize - 1;
    if m.parts[idx] != PartState::Pending {
        return;
    }
    m.parts[idx] = PartState::Expired;
    let first = m.outcome.is_none();
    if first {
        m.outcome = Some(DeliveryStatus::Expired);
    }
    st.stats.segments_expired += 1;
    st.log(at, format_args!("expire msg={id} part={part}"));
    if first {
        st.stats.messages_expired += 1;
        st.log(at, format_args!("receipt msg={id} expired"));
        events.push(SimEvent::Receipt(DeliveryReceipt {
            message_id: id,
            status: DeliveryStatus::Expired,
            at,
        }));
    }
}

impl Gateway for SimulatedNetwork {
    fn send(&self, segments: &[Segment]) -> Result<MessageId, TransportError> {
        let first = check_single_message(segments)?;
        let now = self.clock.now();
        let mut st = self.state.lock();
        let region = st
            .model
            .regions
            .region_of(&first.destination)
            .ok_or_else(|| TransportError::UnroutableDestination(first.destination.clone()))?
            .to_string();
        let id = first.message_id;
        if st.outbound.contains_key(&id) {
            return Err(TransportError::TransportUnavailable(format!(
                "message id {id} already in use"
            )));
        }
        let mut ordered: Vec<&Segment> = segments.iter().collect();
        ordered.sort_by_key(|s| s.part_index);
        let count = ordered.len();
        st.outbound.insert(
            id,
            Outbound {
                destination: first.destination.clone(),
                region: region.clone(),
                first_attempt: now,
                payloads: ordered.iter().map(|s| s.payload.clone()).collect(),
                parts: vec![PartState::Pending; count],
                attempts: vec![0; count],
                outcome: None,
            },
        );
        st.stats.messages_sent += 1;
        st.stats.segments_sent += count as u64;
        st.log(
            now,
            format_args!(
                "send msg={id} to={} parts={count} region={region}",
                first.destination
            ),
        );
        for part in 1..=count as u16 {
            st.schedule(now, Action::Attempt { id, part });
        }
        Ok(id)
    }
}
