// SPDX-License-Identifier: Apache-2.0

//! SMS segmentation and reassembly, the gateway port, and gateway
//! implementations.
//!
//! Characters are counted assuming the GSM 7-bit alphabet: one message holds
//! 160 characters and each part of a concatenated message holds 153, the
//! remainder being taken by the concatenation header.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::model::Phone;
use crate::time::Timestamp;

pub mod sim;

pub use sim::{NetworkModel, Outage, RegionMap, SimEvent, SimStats, SimulatedNetwork};

/// Concatenation reference numbers are at most one octet on the wire but we
/// keep a wider id internally; the ledger uses it to match receipts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// The concatenation header can number at most 255 parts.
pub const MAX_PARTS_ON_WIRE: usize = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLimits {
    /// Capacity of an unsegmented message.
    pub single: usize,
    /// Capacity of each part of a concatenated message.
    pub per_part: usize,
    /// Parts allowed for one outbound prompt or inbound answer.
    pub max_parts: usize,
}

impl Default for SegmentLimits {
    fn default() -> Self {
        SegmentLimits {
            single: 160,
            per_part: 153,
            max_parts: 10,
        }
    }
}

impl SegmentLimits {
    /// Longest text that fits in `max_parts` parts.
    pub fn max_message_chars(&self) -> usize {
        if self.max_parts <= 1 {
            self.single
        } else {
            self.max_parts * self.per_part
        }
    }

    pub fn parts_for(&self, chars: usize) -> usize {
        if chars <= self.single {
            1
        } else {
            chars.div_ceil(self.per_part)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub message_id: MessageId,
    /// 1-based.
    pub part_index: u16,
    pub part_count: u16,
    pub payload: String,
    pub destination: Phone,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("message is empty")]
    EmptyMessage,
    #[error("message needs {0} parts, more than a concatenation header can number")]
    TooLong(usize),
    #[error("no route to {0}")]
    UnroutableDestination(Phone),
    #[error("transport unavailable: {0}")]
    TransportUnavailable(String),
    #[error("segments of one send must share message id and destination")]
    MixedSegments,
}

/// Splits `text` into parts of at most `limits.single` characters (one part)
/// or `limits.per_part` characters each.
pub fn segment_message(
    message_id: MessageId,
    text: &str,
    destination: &Phone,
    limits: &SegmentLimits,
) -> Result<Vec<Segment>, TransportError> {
    if text.is_empty() {
        return Err(TransportError::EmptyMessage);
    }
    let chars: Vec<char> = text.chars().collect();
    let count = limits.parts_for(chars.len());
    if count > MAX_PARTS_ON_WIRE {
        return Err(TransportError::TooLong(count));
    }
    let chunk = if count == 1 {
        chars.len()
    } else {
        limits.per_part
    };
    Ok(chars
        .chunks(chunk)
        .enumerate()
        .map(|(i, part)| Segment {
            message_id,
            part_index: i as u16 + 1,
            part_count: count as u16,
            payload: part.iter().collect(),
            destination: destination.clone(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembly {
    Complete(String),
    Pending,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReassemblyError {
    #[error("segments disagree on part count")]
    ConflictingMetadata,
    #[error("segments belong to different messages")]
    MixedMessages,
    #[error("part {index} is outside 1..={count}")]
    PartOutOfRange { index: u16, count: u16 },
}

/// Reassembles one message from the parts seen so far. Duplicate parts are
/// ignored. Missing parts become `Expired` once more than `validity` has
/// passed since the first part was seen.
pub fn reassemble(
    segments: &[Segment],
    now: Timestamp,
    first_seen: Timestamp,
    validity: Duration,
) -> Result<Reassembly, ReassemblyError> {
    let Some(first) = segments.first() else {
        return Ok(if now.since(first_seen) > validity {
            Reassembly::Expired
        } else {
            Reassembly::Pending
        });
    };
    let mut parts = BTreeMap::new();
    for seg in segments {
        if seg.message_id != first.message_id {
            return Err(ReassemblyError::MixedMessages);
        }
        if seg.part_count != first.part_count {
            return Err(ReassemblyError::ConflictingMetadata);
        }
        if seg.part_index == 0 || seg.part_index > seg.part_count {
            return Err(ReassemblyError::PartOutOfRange {
                index: seg.part_index,
                count: seg.part_count,
            });
        }
        parts.entry(seg.part_index).or_insert(seg.payload.as_str());
    }
    if parts.len() == first.part_count as usize {
        return Ok(Reassembly::Complete(parts.into_values().collect()));
    }
    if now.since(first_seen) > validity {
        Ok(Reassembly::Expired)
    } else {
        Ok(Reassembly::Pending)
    }
}

/// A fully reassembled inbound message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundMessage {
    pub phone: Phone,
    pub message_id: MessageId,
    pub text: String,
    pub segment_count: u16,
}

#[derive(Debug)]
struct Partial {
    first_seen: Timestamp,
    segments: Vec<Segment>,
}

/// Per-sender reassembly state for inbound concatenated messages.
#[derive(Debug, Default)]
pub struct ReassemblyBuffer {
    partial: BTreeMap<(Phone, MessageId), Partial>,
    completed: BTreeMap<(Phone, MessageId), Timestamp>,
}

impl ReassemblyBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one part. Returns the message once its last part arrives.
    /// Parts of already completed messages are dropped.
    pub fn accept(
        &mut self,
        phone: &Phone,
        segment: Segment,
        now: Timestamp,
        validity: Duration,
    ) -> Result<Option<InboundMessage>, ReassemblyError> {
        let key = (phone.clone(), segment.message_id);
        if self.completed.contains_key(&key) {
            return Ok(None);
        }
        let entry = self.partial.entry(key.clone()).or_insert_with(|| Partial {
            first_seen: now,
            segments: Vec::new(),
        });
        if entry
            .segments
            .iter()
            .any(|s| s.part_index == segment.part_index)
        {
            return Ok(None);
        }
        entry.segments.push(segment);
        match reassemble(&entry.segments, now, entry.first_seen, validity) {
            Ok(Reassembly::Complete(text)) => {
                let count = entry.segments[0].part_count;
                self.partial.remove(&key);
                self.completed.insert(key.clone(), now);
                Ok(Some(InboundMessage {
                    phone: key.0,
                    message_id: key.1,
                    text,
                    segment_count: count,
                }))
            }
            Ok(_) => Ok(None),
            Err(e) => {
                entry.segments.pop();
                Err(e)
            }
        }
    }

    /// Drops partial messages older than `validity`, returning their keys.
    pub fn expire(&mut self, now: Timestamp, validity: Duration) -> Vec<(Phone, MessageId)> {
        let expired: Vec<_> = self
            .partial
            .iter()
            .filter(|(_, p)| now.since(p.first_seen) > validity)
            .map(|(k, _)| k.clone())
            .collect();
        for key in &expired {
            self.partial.remove(key);
        }
        self.completed.retain(|_, at| now.since(*at) <= validity);
        expired
    }

    pub fn pending(&self) -> usize {
        self.partial.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeliveryStatus {
    Delivered,
    Failed,
    Expired,
}

impl DeliveryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DeliveryStatus::Delivered => "delivered",
            DeliveryStatus::Failed => "failed",
            DeliveryStatus::Expired => "expired",
        }
    }
}

impl std::str::FromStr for DeliveryStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delivered" => Ok(DeliveryStatus::Delivered),
            "failed" => Ok(DeliveryStatus::Failed),
            "expired" => Ok(DeliveryStatus::Expired),
            other => Err(format!("unknown delivery status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub message_id: MessageId,
    pub status: DeliveryStatus,
    pub at: Timestamp,
}

/// The outbound half of the gateway port. Receipts and inbound segments come
/// back through [`crate::session::SessionEngine::on_receipt`] and
/// [`crate::session::SessionEngine::on_inbound_segment`].
pub trait Gateway: Send + Sync {
    /// Hands all parts of one message to the transport.
    fn send(&self, segments: &[Segment]) -> Result<MessageId, TransportError>;
}

/// Checks that `segments` form one non-empty message.
pub fn check_single_message(segments: &[Segment]) -> Result<&Segment, TransportError> {
    let first = segments.first().ok_or(TransportError::EmptyMessage)?;
    let uniform = segments
        .iter()
        .all(|s| s.message_id == first.message_id && s.destination == first.destination);
    if uniform {
        Ok(first)
    } else {
        Err(TransportError::MixedSegments)
    }
}

/// Writes each outbound segment as a JSON line for an external modem or
/// gateway process to pick up. Receipts and replies are expected back
/// through the HTTP callback endpoints.
#[derive(Debug)]
pub struct OutboxGateway {
    path: PathBuf,
    lock: Mutex<()>,
}

impl OutboxGateway {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        OutboxGateway {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

impl Gateway for OutboxGateway {
    fn send(&self, segments: &[Segment]) -> Result<MessageId, TransportError> {
        let first = check_single_message(segments)?;
        let _guard = self.lock.lock();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| TransportError::TransportUnavailable(e.to_string()))?;
        for seg in segments {
            let line = serde_json::to_string(seg)
                .map_err(|e| TransportError::TransportUnavailable(e.to_string()))?;
            writeln!(file, "{line}")
                .map_err(|e| TransportError::TransportUnavailable(e.to_string()))?;
        }
        Ok(first.message_id)
    }
}

/// Keeps every send in memory. Useful for previews and tests.
#[derive(Debug, Default)]
pub struct RecordingGateway {
    sent: Mutex<Vec<Vec<Segment>>>,
    refuse: BTreeSet<Phone>,
    count: AtomicU64,
}

impl RecordingGateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// A gateway that reports `refuse` as unroutable.
    pub fn refusing(refuse: impl IntoIterator<Item = Phone>) -> Self {
        RecordingGateway {
            refuse: refuse.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn sent(&self) -> Vec<Vec<Segment>> {
        self.sent.lock().clone()
    }

    /// Reassembled text of every send, in order.
    pub fn texts(&self) -> Vec<(Phone, String)> {
        self.sent
            .lock()
            .iter()
            .map(|segs| {
                (
                    segs[0].destination.clone(),
                    segs.iter().map(|s| s.payload.as_str()).collect(),
                )
            })
            .collect()
    }

    pub fn send_count(&self) -> u64 {
        self.count.load(Ordering::SeqCst)
    }
}

impl Gateway for RecordingGateway {
    fn send(&self, segments: &[Segment]) -> Result<MessageId, TransportError> {
        let first = check_single_message(segments)?;
        if self.refuse.contains(&first.destination) {
            return Err(TransportError::UnroutableDestination(
                first.destination.clone(),
            ));
        }
        self.sent.lock().push(segments.to_vec());
        self.count.fetch_add(1, Ordering::SeqCst);
        Ok(first.message_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phone() -> Phone {
        Phone::parse("+2917000001").unwrap()
    }

    fn seg(text: &str) -> Vec<Segment> {
        segment_message(MessageId(1), text, &phone(), &SegmentLimits::default()).unwrap()
    }

    /// Independent chunker: cut at fixed 153-character boundaries.
    fn reference_chunks(text: &str) -> Vec<String> {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() <= 160 {
            return vec![text.to_string()];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let end = (start + 153).min(chars.len());
            out.push(chars[start..end].iter().collect());
            start = end;
        }
        out
    }

    #[test]
    fn boundary_lengths() {
        let t160 = "a".repeat(160);
        let s = seg(&t160);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].payload, t160);
        assert_eq!((s[0].part_index, s[0].part_count), (1, 1));

        let t161 = "b".repeat(161);
        let lens: Vec<usize> = seg(&t161).iter().map(|s| s.payload.len()).collect();
        assert_eq!(lens, vec![153, 8]);
        let oracle: Vec<usize> = reference_chunks(&t161).iter().map(String::len).collect();
        assert_eq!(lens, oracle);

        let t320 = "c".repeat(320);
        let lens: Vec<usize> = seg(&t320).iter().map(|s| s.payload.len()).collect();
        assert_eq!(lens, vec![153, 153, 14]);
        let oracle: Vec<usize> = reference_chunks(&t320).iter().map(String::len).collect();
        assert_eq!(lens, oracle);
    }

    #[test]
    fn counts_characters_not_bytes() {
        let text = "é".repeat(160);
        assert_eq!(seg(&text).len(), 1);
    }

    #[test]
    fn empty_and_oversized() {
        let l = SegmentLimits::default();
        assert_eq!(
            segment_message(MessageId(1), "", &phone(), &l),
            Err(TransportError::EmptyMessage)
        );
        let huge = "x".repeat(153 * 256);
        assert_eq!(
            segment_message(MessageId(1), &huge, &phone(), &l),
            Err(TransportError::TooLong(256))
        );
    }

    #[test]
    fn reassembly_states() {
        let h = Duration::from_secs(3600);
        let t0 = Timestamp(0);
        let parts = seg(&"z".repeat(200));
        assert_eq!(
            reassemble(&parts, t0 + h, t0, 48 * h),
            Ok(Reassembly::Complete("z".repeat(200)))
        );
        assert_eq!(
            reassemble(&parts[..1], t0 + h, t0, 48 * h),
            Ok(Reassembly::Pending)
        );
        assert_eq!(
            reassemble(&parts[..1], t0 + 49 * h, t0, 48 * h),
            Ok(Reassembly::Expired)
        );
        // out of order and duplicated parts
        let shuffled = vec![parts[1].clone(), parts[0].clone(), parts[1].clone()];
        assert_eq!(
            reassemble(&shuffled, t0, t0, 48 * h),
            Ok(Reassembly::Complete("z".repeat(200)))
        );
        let mut bad = parts.clone();
        bad[1].part_count = 3;
        assert_eq!(
            reassemble(&bad, t0, t0, h),
            Err(ReassemblyError::ConflictingMetadata)
        );
    }

    #[test]
    fn buffer_ignores_duplicates_and_expires() {
        let h = Duration::from_secs(3600);
        let p = phone();
        let mut buf = ReassemblyBuffer::new();
        let parts = seg(&"q".repeat(300));
        assert_eq!(
            buf.accept(&p, parts[0].clone(), Timestamp(0), 48 * h),
            Ok(None)
        );
        assert_eq!(
            buf.accept(&p, parts[0].clone(), Timestamp(0), 48 * h),
            Ok(None)
        );
        let done = buf
            .accept(&p, parts[1].clone(), Timestamp(10), 48 * h)
            .unwrap()
            .unwrap();
        assert_eq!(done.text, "q".repeat(300));
        assert_eq!(done.segment_count, 2);
        // late duplicate after completion
        assert_eq!(
            buf.accept(&p, parts[1].clone(), Timestamp(20), 48 * h),
            Ok(None)
        );
        assert_eq!(buf.pending(), 0);

        let other = segment_message(
            MessageId(2),
            &"r".repeat(300),
            &p,
            &SegmentLimits::default(),
        )
        .unwrap();
        buf.accept(&p, other[0].clone(), Timestamp(0), 48 * h)
            .unwrap();
        assert!(buf.expire(Timestamp(0) + 47 * h, 48 * h).is_empty());
        assert_eq!(
            buf.expire(Timestamp(0) + 49 * h, 48 * h),
            vec![(p, MessageId(2))]
        );
    }

    #[test]
    fn recording_gateway_refuses() {
        let gw = RecordingGateway::refusing([phone()]);
        assert_eq!(
            gw.send(&seg("hi")),
            Err(TransportError::UnroutableDestination(phone()))
        );
        assert_eq!(gw.send(&[]), Err(TransportError::EmptyMessage));
    }

    #[test]
    fn outbox_writes_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("outbox.jsonl");
        let gw = OutboxGateway::new(&path);
        assert_eq!(gw.send(&seg(&"x".repeat(170))), Ok(MessageId(1)));
        let body = std::fs::read_to_string(&path).unwrap();
        assert_eq!(body.lines().count(), 2);
        let first: Segment = serde_json::from_str(body.lines().next().unwrap()).unwrap();
        assert_eq!(first.part_count, 2);
    }
}
