// SPDX-License-Identifier: Apache-2.0

//! The SMS ledger. Records are only ever inserted; delivery outcomes live in
//! a second append-only table and are joined in on read.

use std::fmt;
use std::str::FromStr;

use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

use super::{corrupt, Result, Store};
use crate::model::{Phone, SessionId};
use crate::time::Timestamp;
use crate::transport::{DeliveryReceipt, DeliveryStatus, MessageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Inbound,
    Outbound,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Inbound => "inbound",
            Direction::Outbound => "outbound",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "inbound" => Ok(Direction::Inbound),
            "outbound" => Ok(Direction::Outbound),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// Delivery state of a record. Outbound records without a receipt yet are
/// `pending`; inbound records are always `received`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmsStatus {
    Pending,
    Delivered,
    Failed,
    Expired,
    Received,
}

impl SmsStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SmsStatus::Pending => "pending",
            SmsStatus::Delivered => "delivered",
            SmsStatus::Failed => "failed",
            SmsStatus::Expired => "expired",
            SmsStatus::Received => "received",
        }
    }
}

impl fmt::Display for SmsStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<DeliveryStatus> for SmsStatus {
    fn from(s: DeliveryStatus) -> Self {
        match s {
            DeliveryStatus::Delivered => SmsStatus::Delivered,
            DeliveryStatus::Failed => SmsStatus::Failed,
            DeliveryStatus::Expired => SmsStatus::Expired,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsRecord {
    pub seq: u64,
    pub direction: Direction,
    pub phone: Phone,
    pub body: String,
    pub segment_count: u16,
    pub message_id: Option<MessageId>,
    /// Send time for outbound records, arrival time for inbound ones.
    pub recorded_at: Timestamp,
    pub delivery_status: SmsStatus,
    /// Time of the latest receipt, if any.
    pub status_at: Option<Timestamp>,
    pub session_id: Option<SessionId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSms {
    pub direction: Direction,
    pub phone: Phone,
    pub body: String,
    pub segment_count: u16,
    pub message_id: Option<MessageId>,
    pub recorded_at: Timestamp,
    pub session_id: Option<SessionId>,
}

const SELECT: &str = "
    SELECT l.seq, l.direction, l.phone, l.body, l.segment_count, l.message_id,
           l.recorded_at, l.session_id, r.status, r.at
    FROM sms_log l
    LEFT JOIN delivery_receipts r ON r.id = (
        SELECT id FROM delivery_receipts d
        WHERE l.direction = 'outbound' AND d.message_id = l.message_id
        ORDER BY d.id DESC LIMIT 1
    )";

fn record(row: &Row<'_>) -> Result<SmsRecord> {
    let direction: Direction = row.get::<_, String>(1)?.parse().map_err(corrupt)?;
    let status: Option<String> = row.get(8)?;
    let delivery_status = match (direction, status) {
        (Direction::Inbound, _) => SmsStatus::Received,
        (Direction::Outbound, None) => SmsStatus::Pending,
        (Direction::Outbound, Some(s)) => s.parse::<DeliveryStatus>().map_err(corrupt)?.into(),
    };
    Ok(SmsRecord {
        seq: row.get::<_, i64>(0)? as u64,
        direction,
        phone: Phone::parse(&row.get::<_, String>(2)?).map_err(corrupt)?,
        body: row.get(3)?,
        segment_count: row.get::<_, i64>(4)? as u16,
        message_id: row.get::<_, Option<i64>>(5)?.map(|m| MessageId(m as u64)),
        recorded_at: Timestamp(row.get(6)?),
        delivery_status,
        status_at: row.get::<_, Option<i64>>(9)?.map(Timestamp),
        session_id: row.get::<_, Option<i64>>(7)?.map(SessionId),
    })
}

/// Appends inside an existing transaction. The next sequence number is
/// always the current maximum plus one, so numbering has no gaps.
pub(crate) fn append_sms_tx(conn: &Connection, sms: &NewSms) -> Result<u64> {
    let seq: i64 = conn.query_row("SELECT COALESCE(MAX(seq), 0) + 1 FROM sms_log", [], |r| {
        r.get(0)
    })?;
    conn.execute(
        "INSERT INTO sms_log (seq, direction, phone, body, segment_count, message_id, recorded_at, session_id)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
        params![
            seq,
            sms.direction.as_str(),
            sms.phone.as_str(),
            sms.body,
            sms.segment_count as i64,
            sms.message_id.map(|m| m.0 as i64),
            sms.recorded_at.0,
            sms.session_id.map(|s| s.0),
        ],
    )?;
    Ok(seq as u64)
}

pub(crate) fn query_records(
    conn: &Connection,
    condition: &str,
    params: impl rusqlite::Params,
) -> Result<Vec<SmsRecord>> {
    let mut stmt = conn.prepare(&format!("{SELECT} {condition} ORDER BY l.seq"))?;
    let mut rows = stmt.query(params)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        out.push(record(row)?);
    }
    Ok(out)
}

impl Store {
    pub fn append_sms(&self, sms: &NewSms) -> Result<u64> {
        self.write(|tx| append_sms_tx(tx, sms))
    }

    /// Records a delivery outcome. Receipts for unknown message ids are
    /// kept too; the ledger simply never joins them to a record.
    pub fn append_receipt(&self, receipt: &DeliveryReceipt) -> Result<()> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO delivery_receipts (message_id, status, at) VALUES (?1, ?2, ?3)",
                params![
                    receipt.message_id.0 as i64,
                    receipt.status.as_str(),
                    receipt.at.0
                ],
            )?;
            Ok(())
        })
    }

    pub fn sms_record(&self, seq: u64) -> Result<Option<SmsRecord>> {
        self.read(|conn| Ok(query_records(conn, "WHERE l.seq = ?1", [seq as i64])?.pop()))
    }

    pub fn sms_log(&self) -> Result<Vec<SmsRecord>> {
        self.read(|conn| query_records(conn, "", []))
    }

    /// Records with `from <= recorded_at < to`.
    pub fn sms_log_between(&self, from: Timestamp, to: Timestamp) -> Result<Vec<SmsRecord>> {
        self.read(|conn| {
            query_records(
                conn,
                "WHERE l.recorded_at >= ?1 AND l.recorded_at < ?2",
                [from.0, to.0],
            )
        })
    }

    /// The outbound record carrying `id`, if any.
    pub fn outbound_by_message(&self, id: MessageId) -> Result<Option<SmsRecord>> {
        self.read(|conn| {
            Ok(query_records(
                conn,
                "WHERE l.direction = 'outbound' AND l.message_id = ?1",
                [id.0 as i64],
            )?
            .pop())
        })
    }

    /// (outbound, inbound) record counts.
    pub fn sms_counts(&self) -> Result<(u64, u64)> {
        self.read(|conn| {
            let count = |dir: &str| -> Result<u64> {
                Ok(conn.query_row(
                    "SELECT COUNT(*) FROM sms_log WHERE direction = ?1",
                    [dir],
                    |r| r.get::<_, i64>(0),
                )? as u64)
            };
            Ok((count("outbound")?, count("inbound")?))
        })
    }

    /// A message id not yet used by any outbound record.
    pub fn next_message_id(&self) -> Result<MessageId> {
        self.read(|conn| {
            let max: Option<i64> = conn
                .query_row(
                    "SELECT MAX(message_id) FROM sms_log WHERE direction = 'outbound'",
                    [],
                    |r| r.get(0),
                )
                .optional()?
                .flatten();
            Ok(MessageId(max.unwrap_or(0) as u64 + 1))
        })
    }
}
