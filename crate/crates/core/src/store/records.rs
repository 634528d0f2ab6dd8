// SPDX-License-Identifier: Apache-2.0

//! Sessions and responses.

use rusqlite::{params, Connection, OptionalExtension, Row};

use super::{corrupt, is_constraint, Result, Store, StoreError};
use crate::model::{
    ParsedValue, QuestionId, QuestionnaireId, RespondentId, Response, ResponseId, ResponseSource,
    SessionId, StaffId,
};
use crate::session::{Session, SessionState};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq)]
pub struct NewResponse {
    pub respondent_id: RespondentId,
    pub question_id: QuestionId,
    pub questionnaire_id: QuestionnaireId,
    pub session_id: Option<SessionId>,
    pub raw_text: String,
    pub parsed_value: ParsedValue,
    pub received_at: Timestamp,
    pub source: ResponseSource,
    pub sms_record_id: Option<u64>,
}

const SESSION_COLUMNS: &str =
    "id, respondent_id, questionnaire_id, state, ordinal, reprompted, created_at, last_outbound_at";

fn session_row(row: &Row<'_>) -> Result<Session> {
    let state: String = row.get(3)?;
    let ordinal: Option<i64> = row.get(4)?;
    Ok(Session {
        id: SessionId(row.get(0)?),
        respondent_id: RespondentId(row.get(1)?),
        questionnaire_id: QuestionnaireId(row.get(2)?),
        state: SessionState::from_parts(&state, ordinal)
            .ok_or_else(|| corrupt(format!("session state {state:?}/{ordinal:?}")))?,
        reprompted: row.get(5)?,
        created_at: Timestamp(row.get(6)?),
        last_outbound_at: Timestamp(row.get(7)?),
    })
}

fn query_sessions(
    conn: &Connection,
    condition: &str,
    params: impl rusqlite::Params,
) -> Result<Vec<Session>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {SESSION_COLUMNS} FROM sessions {condition} ORDER BY id"
    ))?;
    let mut rows = stmt.query(params)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        out.push(session_row(row)?);
    }
    Ok(out)
}

pub(crate) fn load_session(conn: &Connection, id: SessionId) -> Result<Option<Session>> {
    Ok(query_sessions(conn, "WHERE id = ?1", [id.0])?.pop())
}

const RESPONSE_COLUMNS: &str =
    "id, respondent_id, question_id, questionnaire_id, session_id, raw_text,
     parsed_kind, parsed_value, received_at, source, sms_record_id";

fn response_row(row: &Row<'_>) -> Result<Response> {
    let kind: String = row.get(6)?;
    let value: String = row.get(7)?;
    let source: String = row.get(9)?;
    Ok(Response {
        id: ResponseId(row.get(0)?),
        respondent_id: RespondentId(row.get(1)?),
        question_id: QuestionId(row.get(2)?),
        questionnaire_id: QuestionnaireId(row.get(3)?),
        session_id: row.get::<_, Option<i64>>(4)?.map(SessionId),
        raw_text: row.get(5)?,
        parsed_value: ParsedValue::from_parts(&kind, &value)
            .ok_or_else(|| corrupt(format!("parsed value {kind:?}/{value:?}")))?,
        received_at: Timestamp(row.get(8)?),
        source: source.parse::<ResponseSource>().map_err(corrupt)?,
        sms_record_id: row.get::<_, Option<i64>>(10)?.map(|s| s as u64),
    })
}

pub(crate) fn query_responses(
    conn: &Connection,
    condition: &str,
    params: impl rusqlite::Params,
) -> Result<Vec<Response>> {
    let mut stmt = conn.prepare(&format!(
        "SELECT {RESPONSE_COLUMNS} FROM responses {condition} ORDER BY id"
    ))?;
    let mut rows = stmt.query(params)?;
    let mut out = Vec::new();
    while let Some(row) = rows.next()? {
        out.push(response_row(row)?);
    }
    Ok(out)
}

pub(crate) fn insert_response_tx(conn: &Connection, r: &NewResponse) -> Result<Response> {
    conn.execute(
        "INSERT INTO responses (respondent_id, question_id, questionnaire_id, session_id, raw_text,
             parsed_kind, parsed_value, received_at, source, sms_record_id)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)",
        params![
            r.respondent_id.0,
            r.question_id.0,
            r.questionnaire_id.0,
            r.session_id.map(|s| s.0),
            r.raw_text,
            r.parsed_value.kind(),
            r.parsed_value.render(),
            r.received_at.0,
            r.source.as_str(),
            r.sms_record_id.map(|s| s as i64),
        ],
    )?;
    let id = conn.last_insert_rowid();
    query_responses(conn, "WHERE id = ?1", [id])?
        .pop()
        .ok_or_else(|| StoreError::not_found("response", id))
}

fn record_transition(
    conn: &Connection,
    id: SessionId,
    from: Option<&SessionState>,
    to: &SessionState,
    at: Timestamp,
) -> Result<()> {
    conn.execute(
        "INSERT INTO session_transitions (session_id, from_state, to_state, at) VALUES (?1, ?2, ?3, ?4)",
        params![id.0, from.map(|s| s.to_string()), to.to_string(), at.0],
    )?;
    Ok(())
}

impl Store {
    /// Opens a session. Fails with `OpenSessionExists` if the respondent
    /// already has one that is not terminal.
    pub fn insert_session(
        &self,
        respondent: RespondentId,
        questionnaire: QuestionnaireId,
        state: SessionState,
        now: Timestamp,
    ) -> Result<Session> {
        self.write(|tx| {
            let res = tx.execute(
                "INSERT INTO sessions (respondent_id, questionnaire_id, state, ordinal, reprompted, created_at, last_outbound_at)
                 VALUES (?1, ?2, ?3, ?4, 0, ?5, ?5)",
                params![respondent.0, questionnaire.0, state.as_str(), state.ordinal(), now.0],
            );
            match res {
                Err(e) if is_constraint(&e) => return Err(StoreError::OpenSessionExists(respondent)),
                other => other?,
            };
            let id = SessionId(tx.last_insert_rowid());
            record_transition(tx, id, None, &state, now)?;
            load_session(tx, id)?.ok_or_else(|| StoreError::not_found("session", id.0))
        })
    }

    pub fn session(&self, id: SessionId) -> Result<Option<Session>> {
        self.read(|conn| load_session(conn, id))
    }

    pub fn sessions(&self) -> Result<Vec<Session>> {
        self.read(|conn| query_sessions(conn, "", []))
    }

    pub fn open_session(&self, respondent: RespondentId) -> Result<Option<Session>> {
        self.read(|conn| {
            Ok(query_sessions(
                conn,
                "WHERE respondent_id = ?1 AND state IN ('greeting_sent', 'awaiting_answer')",
                [respondent.0],
            )?
            .pop())
        })
    }

    pub fn open_sessions(&self) -> Result<Vec<Session>> {
        self.read(|conn| {
            query_sessions(
                conn,
                "WHERE state IN ('greeting_sent', 'awaiting_answer')",
                [],
            )
        })
    }

    /// Moves a session from `from` to `to`, but only if it is still in
    /// `from`; otherwise `Conflict`. Terminal sessions never move.
    pub fn transition_session(
        &self,
        id: SessionId,
        from: &SessionState,
        to: SessionState,
        reprompted: bool,
        last_outbound_at: Option<Timestamp>,
        now: Timestamp,
    ) -> Result<Session> {
        self.write(|tx| {
            let n = tx.execute(
                "UPDATE sessions SET state = ?1, ordinal = ?2, reprompted = ?3,
                     last_outbound_at = COALESCE(?4, last_outbound_at)
                 WHERE id = ?5 AND state = ?6 AND ordinal IS ?7
                   AND state NOT IN ('completed', 'opted_out', 'expired')",
                params![
                    to.as_str(),
                    to.ordinal(),
                    reprompted,
                    last_outbound_at.map(|t| t.0),
                    id.0,
                    from.as_str(),
                    from.ordinal()
                ],
            )?;
            if n == 0 {
                return Err(StoreError::Conflict {
                    entity: "session",
                    id: id.0,
                });
            }
            if *from != to {
                record_transition(tx, id, Some(from), &to, now)?;
            }
            load_session(tx, id)?.ok_or_else(|| StoreError::not_found("session", id.0))
        })
    }

    pub fn insert_response(&self, response: &NewResponse) -> Result<Response> {
        self.write(|tx| insert_response_tx(tx, response))
    }

    /// Inserts several responses atomically.
    pub fn insert_responses(&self, responses: &[NewResponse]) -> Result<Vec<Response>> {
        self.write(|tx| {
            responses
                .iter()
                .map(|r| insert_response_tx(tx, r))
                .collect()
        })
    }

    pub fn response(&self, id: ResponseId) -> Result<Option<Response>> {
        self.read(|conn| Ok(query_responses(conn, "WHERE id = ?1", [id.0])?.pop()))
    }

    pub fn responses(&self) -> Result<Vec<Response>> {
        self.read(|conn| query_responses(conn, "", []))
    }

    pub fn responses_for_question(&self, question: QuestionId) -> Result<Vec<Response>> {
        self.read(|conn| query_responses(conn, "WHERE question_id = ?1", [question.0]))
    }

    pub fn responses_for_respondent(&self, respondent: RespondentId) -> Result<Vec<Response>> {
        self.read(|conn| query_responses(conn, "WHERE respondent_id = ?1", [respondent.0]))
    }

    /// Points a response at another question with a re-parsed value and
    /// records the correction. Raw text and ledger link are left alone.
    pub fn reattribute_response(
        &self,
        id: ResponseId,
        question: QuestionId,
        parsed: &ParsedValue,
        staff: StaffId,
        now: Timestamp,
    ) -> Result<Response> {
        self.write(|tx| {
            let old = query_responses(tx, "WHERE id = ?1", [id.0])?
                .pop()
                .ok_or_else(|| StoreError::not_found("response", id.0))?;
            tx.execute(
                "UPDATE responses SET question_id = ?1, parsed_kind = ?2, parsed_value = ?3 WHERE id = ?4",
                params![question.0, parsed.kind(), parsed.render(), id.0],
            )?;
            tx.execute(
                "INSERT INTO response_corrections
                     (response_id, old_question_id, new_question_id, old_parsed, new_parsed, staff_id, at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
                params![
                    id.0,
                    old.question_id.0,
                    question.0,
                    format!("{}:{}", old.parsed_value.kind(), old.parsed_value.render()),
                    format!("{}:{}", parsed.kind(), parsed.render()),
                    staff.0,
                    now.0
                ],
            )?;
            query_responses(tx, "WHERE id = ?1", [id.0])?
                .pop()
                .ok_or_else(|| StoreError::not_found("response", id.0))
        })
    }

    /// Number of corrections recorded against `id`.
    pub fn correction_count(&self, id: ResponseId) -> Result<u64> {
        self.read(|conn| {
            Ok(conn.query_row(
                "SELECT COUNT(*) FROM response_corrections WHERE response_id = ?1",
                [id.0],
                |r| r.get::<_, i64>(0),
            )? as u64)
        })
    }

    /// The session state at the time of the latest transition, for exports.
    pub fn session_state(&self, id: SessionId) -> Result<Option<SessionState>> {
        self.read(|conn| {
            let row = conn
                .query_row(
                    "SELECT state, ordinal FROM sessions WHERE id = ?1",
                    [id.0],
                    |r| Ok((r.get::<_, String>(0)?, r.get::<_, Option<i64>>(1)?)),
                )
                .optional()?;
            Ok(row.and_then(|(s, o)| SessionState::from_parts(&s, o)))
        })
    }
}
