// SPDX-License-Identifier: Apache-2.0

//! SQLite persistence for every entity, the append-only SMS ledger, and
//! CSV import/export.
//!
//! Every statement binds its values as parameters. The ledger tables are
//! guarded by triggers that abort any UPDATE or DELETE, and `Store` exposes
//! no method that would issue one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;

use parking_lot::Mutex;
use rusqlite::types::ValueRef;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Transaction};

use crate::model::{
    AccessLevel, AnswerOption, AttributeHint, GroupId, Phone, Question, QuestionId, Questionnaire,
    QuestionnaireId, Respondent, RespondentId, ResponseType, StaffAccount, StaffId, SystemSettings,
    UserGroup,
};
use crate::time::Timestamp;

pub mod csv;
mod ledger;
mod records;
mod tables;

pub use self::csv::{export_csv, ImportReport, RejectedRow};
pub use ledger::{Direction, NewSms, SmsRecord, SmsStatus};
pub use records::NewResponse;

const SCHEMA: &str = include_str!("schema.sql");

/// Tables in snapshot order.
const SNAPSHOT_TABLES: &[&str] = &[
    "questions",
    "question_options",
    "questionnaires",
    "questionnaire_items",
    "respondents",
    "respondent_attributes",
    "attribute_hints",
    "user_groups",
    "group_members",
    "sessions",
    "session_transitions",
    "responses",
    "response_corrections",
    "sms_log",
    "delivery_receipts",
    "staff",
    "settings",
    "settings_changes",
];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    StorageUnavailable(#[from] rusqlite::Error),
    #[error("{entity} {id} not found")]
    NotFound { entity: &'static str, id: i64 },
    #[error("{entity} {id} was modified concurrently")]
    Conflict { entity: &'static str, id: i64 },
    #[error("an active respondent already uses {0}")]
    DuplicatePhone(Phone),
    #[error("question {0} is part of a questionnaire")]
    QuestionInUse(QuestionId),
    #[error("questionnaire {0} has open sessions")]
    QuestionnaireInUse(QuestionnaireId),
    #[error("respondent {0} already has an open session")]
    OpenSessionExists(RespondentId),
    #[error("staff name {0:?} is taken")]
    DuplicateStaff(String),
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
}

impl StoreError {
    fn not_found(entity: &'static str, id: i64) -> Self {
        StoreError::NotFound { entity, id }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

pub(crate) fn is_constraint(err: &rusqlite::Error) -> bool {
    matches!(err, rusqlite::Error::SqliteFailure(e, _) if e.code == ErrorCode::ConstraintViolation)
}

pub(crate) fn corrupt(what: impl std::fmt::Display) -> StoreError {
    StoreError::Corrupt(what.to_string())
}

pub struct Store {
    conn: Mutex<Connection>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").finish_non_exhaustive()
    }
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Store> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Store> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Store> {
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.execute_batch(SCHEMA)?;
        let store = Store {
            conn: Mutex::new(conn),
        };
        store.write(|tx| {
            tx.execute(
                "INSERT OR IGNORE INTO settings (id, body, version) VALUES (1, ?1, 1)",
                params![settings_json(&SystemSettings::default())?],
            )?;
            Ok(())
        })?;
        Ok(store)
    }

    pub(crate) fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let conn = self.conn.lock();
        f(&conn)
    }

    /// Runs `f` in one transaction; nothing is committed if it fails.
    pub(crate) fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// Deterministic dump of every table, ordered by rowid. Two stores with
    /// the same contents produce the same bytes.
    pub fn snapshot(&self) -> Result<String> {
        self.read(|conn| {
            let mut out = String::new();
            for table in SNAPSHOT_TABLES {
                let _ = writeln!(out, "[{table}]");
                let mut stmt = conn.prepare(&format!("SELECT * FROM {table} ORDER BY rowid"))?;
                let cols = stmt.column_count();
                let mut rows = stmt.query([])?;
                while let Some(row) = rows.next()? {
                    let mut line = String::new();
                    for i in 0..cols {
                        if i > 0 {
                            line.push('|');
                        }
                        match row.get_ref(i)? {
                            ValueRef::Null => line.push_str("NULL"),
                            ValueRef::Integer(n) => {
                                let _ = write!(line, "{n}");
                            }
                            ValueRef::Real(r) => {
                                let _ = write!(line, "{r}");
                            }
                            ValueRef::Text(t) => {
                                let _ = write!(line, "{:?}", String::from_utf8_lossy(t));
                            }
                            ValueRef::Blob(b) => {
                                let _ = write!(line, "x'{}'", hex::encode(b));
                            }
                        }
                    }
                    out.push_str(&line);
                    out.push('\n');
                }
            }
            Ok(out)
        })
    }

    // ---- questions -------------------------------------------------------

    pub fn insert_question(
        &self,
        text: &str,
        response_type: ResponseType,
        options: &[AnswerOption],
        now: Timestamp,
    ) -> Result<Question> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO questions (text, response_type, created_at) VALUES (?1, ?2, ?3)",
                params![text, response_type.as_str(), now.0],
            )?;
            let id = QuestionId(tx.last_insert_rowid());
            insert_options(tx, id, options)?;
            load_question(tx, id)?.ok_or_else(|| StoreError::not_found("question", id.0))
        })
    }

    pub fn question(&self, id: QuestionId) -> Result<Option<Question>> {
        self.read(|conn| load_question(conn, id))
    }

    pub fn questions(&self) -> Result<Vec<Question>> {
        self.read(|conn| {
            let ids = ids(conn, "SELECT id FROM questions ORDER BY id")?;
            ids.into_iter()
                .filter_map(|id| load_question(conn, QuestionId(id)).transpose())
                .collect()
        })
    }

    /// Replaces a question's prompt and options. Every questionnaire holding
    /// the question sees the edit. With `expected_version`, the edit only
    /// applies if nobody changed the question since that version was read.
    pub fn update_question(
        &self,
        id: QuestionId,
        text: &str,
        options: &[AnswerOption],
        expected_version: Option<i64>,
    ) -> Result<Question> {
        self.write(|tx| {
            let current: i64 = tx
                .query_row("SELECT version FROM questions WHERE id = ?1", [id.0], |r| r.get(0))
                .optional()?
                .ok_or_else(|| StoreError::not_found("question", id.0))?;
            if expected_version.is_some_and(|v| v != current) {
                return Err(StoreError::Conflict {
                    entity: "question",
                    id: id.0,
                });
            }
            tx.execute(
                "UPDATE questions SET text = ?1, version = version + 1 WHERE id = ?2 AND version = ?3",
                params![text, id.0, current],
            )?;
            tx.execute("DELETE FROM question_options WHERE question_id = ?1", [id.0])?;
            insert_options(tx, id, options)?;
            load_question(tx, id)?.ok_or_else(|| StoreError::not_found("question", id.0))
        })
    }

    /// Refuses while the question belongs to any questionnaire.
    pub fn delete_question(&self, id: QuestionId) -> Result<()> {
        self.write(|tx| {
            let used: i64 = tx.query_row(
                "SELECT COUNT(*) FROM questionnaire_items WHERE question_id = ?1",
                [id.0],
                |r| r.get(0),
            )?;
            if used > 0 {
                return Err(StoreError::QuestionInUse(id));
            }
            let answered: i64 = tx.query_row(
                "SELECT COUNT(*) FROM responses WHERE question_id = ?1",
                [id.0],
                |r| r.get(0),
            )?;
            if answered > 0 {
                return Err(StoreError::QuestionInUse(id));
            }
            tx.execute(
                "DELETE FROM question_options WHERE question_id = ?1",
                [id.0],
            )?;
            let n = tx.execute("DELETE FROM questions WHERE id = ?1", [id.0])?;
            if n == 0 {
                return Err(StoreError::not_found("question", id.0));
            }
            Ok(())
        })
    }

    // ---- questionnaires --------------------------------------------------

    pub fn insert_questionnaire(
        &self,
        name: &str,
        question_ids: &[QuestionId],
        now: Timestamp,
    ) -> Result<Questionnaire> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO questionnaires (name, created_at) VALUES (?1, ?2)",
                params![name, now.0],
            )?;
            let id = QuestionnaireId(tx.last_insert_rowid());
            insert_items(tx, id, question_ids)?;
            load_questionnaire(tx, id)?.ok_or_else(|| StoreError::not_found("questionnaire", id.0))
        })
    }

    pub fn questionnaire(&self, id: QuestionnaireId) -> Result<Option<Questionnaire>> {
        self.read(|conn| load_questionnaire(conn, id))
    }

    pub fn questionnaires(&self) -> Result<Vec<Questionnaire>> {
        self.read(|conn| {
            let ids = ids(conn, "SELECT id FROM questionnaires ORDER BY id")?;
            ids.into_iter()
                .filter_map(|id| load_questionnaire(conn, QuestionnaireId(id)).transpose())
                .collect()
        })
    }

    /// Replaces the question list. Refused while sessions are open on it.
    pub fn update_questionnaire(
        &self,
        id: QuestionnaireId,
        name: &str,
        question_ids: &[QuestionId],
    ) -> Result<Questionnaire> {
        self.write(|tx| {
            let open: i64 = tx.query_row(
                "SELECT COUNT(*) FROM sessions WHERE questionnaire_id = ?1
                 AND state IN ('greeting_sent', 'awaiting_answer')",
                [id.0],
                |r| r.get(0),
            )?;
            if open > 0 {
                return Err(StoreError::QuestionnaireInUse(id));
            }
            let n = tx.execute(
                "UPDATE questionnaires SET name = ?1 WHERE id = ?2",
                params![name, id.0],
            )?;
            if n == 0 {
                return Err(StoreError::not_found("questionnaire", id.0));
            }
            tx.execute(
                "DELETE FROM questionnaire_items WHERE questionnaire_id = ?1",
                [id.0],
            )?;
            insert_items(tx, id, question_ids)?;
            load_questionnaire(tx, id)?.ok_or_else(|| StoreError::not_found("questionnaire", id.0))
        })
    }

    // ---- respondents -----------------------------------------------------

    pub fn insert_respondent(
        &self,
        phone: &Phone,
        attributes: &BTreeMap<String, String>,
        active: bool,
        needs_review: bool,
        now: Timestamp,
    ) -> Result<Respondent> {
        self.write(|tx| insert_respondent_tx(tx, phone, attributes, active, needs_review, now))
    }

    pub fn respondent(&self, id: RespondentId) -> Result<Option<Respondent>> {
        self.read(|conn| load_respondent(conn, id))
    }

    /// The active profile for `phone`, else the most recent inactive one.
    pub fn respondent_by_phone(&self, phone: &Phone) -> Result<Option<Respondent>> {
        self.read(|conn| respondent_by_phone(conn, phone))
    }

    pub fn respondents(&self) -> Result<Vec<Respondent>> {
        self.read(|conn| {
            let ids = ids(conn, "SELECT id FROM respondents ORDER BY id")?;
            ids.into_iter()
                .filter_map(|id| load_respondent(conn, RespondentId(id)).transpose())
                .collect()
        })
    }

    /// Sets one custom attribute and bumps `last_edit`.
    pub fn set_attribute(
        &self,
        id: RespondentId,
        name: &str,
        value: &str,
        now: Timestamp,
        expected_version: Option<i64>,
    ) -> Result<Respondent> {
        self.write(|tx| {
            touch_respondent(tx, id, now, expected_version)?;
            tx.execute(
                "INSERT INTO respondent_attributes (respondent_id, name, value) VALUES (?1, ?2, ?3)
                 ON CONFLICT (respondent_id, name) DO UPDATE SET value = excluded.value",
                params![id.0, name, value],
            )?;
            load_respondent(tx, id)?.ok_or_else(|| StoreError::not_found("respondent", id.0))
        })
    }

    pub fn remove_attribute(
        &self,
        id: RespondentId,
        name: &str,
        now: Timestamp,
    ) -> Result<Respondent> {
        self.write(|tx| {
            touch_respondent(tx, id, now, None)?;
            tx.execute(
                "DELETE FROM respondent_attributes WHERE respondent_id = ?1 AND name = ?2",
                params![id.0, name],
            )?;
            load_respondent(tx, id)?.ok_or_else(|| StoreError::not_found("respondent", id.0))
        })
    }

    /// Activating a profile fails with `DuplicatePhone` if another active
    /// profile holds the number.
    pub fn set_active(&self, id: RespondentId, active: bool, now: Timestamp) -> Result<Respondent> {
        self.write(|tx| set_active_tx(tx, id, active, now))
    }

    pub fn attribute_hints(&self) -> Result<BTreeMap<String, AttributeHint>> {
        self.read(attribute_hints)
    }

    pub fn set_attribute_hint(&self, name: &str, hint: AttributeHint) -> Result<()> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO attribute_hints (name, hint) VALUES (?1, ?2)
                 ON CONFLICT (name) DO UPDATE SET hint = excluded.hint",
                params![name, hint.as_str()],
            )?;
            Ok(())
        })
    }

    // ---- groups ----------------------------------------------------------

    pub fn insert_group(
        &self,
        name: &str,
        members: &BTreeSet<RespondentId>,
        now: Timestamp,
    ) -> Result<UserGroup> {
        self.write(|tx| {
            tx.execute(
                "INSERT INTO user_groups (name, created_at) VALUES (?1, ?2)",
                params![name, now.0],
            )?;
            let id = GroupId(tx.last_insert_rowid());
            insert_members(tx, id, members)?;
            load_group(tx, id)?.ok_or_else(|| StoreError::not_found("group", id.0))
        })
    }

    pub fn group(&self, id: GroupId) -> Result<Option<UserGroup>> {
        self.read(|conn| load_group(conn, id))
    }

    pub fn groups(&self) -> Result<Vec<UserGroup>> {
        self.read(|conn| {
            let ids = ids(conn, "SELECT id FROM user_groups ORDER BY id")?;
            ids.into_iter()
                .filter_map(|id| load_group(conn, GroupId(id)).transpose())
                .collect()
        })
    }

    pub fn set_group_members(
        &self,
        id: GroupId,
        members: &BTreeSet<RespondentId>,
    ) -> Result<UserGroup> {
        self.write(|tx| {
            if load_group(tx, id)?.is_none() {
                return Err(StoreError::not_found("group", id.0));
            }
            tx.execute("DELETE FROM group_members WHERE group_id = ?1", [id.0])?;
            insert_members(tx, id, members)?;
            load_group(tx, id)?.ok_or_else(|| StoreError::not_found("group", id.0))
        })
    }

    // ---- staff -----------------------------------------------------------

    pub fn insert_staff(
        &self,
        name: &str,
        credential_hash: &str,
        level: AccessLevel,
        now: Timestamp,
    ) -> Result<StaffAccount> {
        self.write(|tx| {
            let res = tx.execute(
                "INSERT INTO staff (name, credential_hash, access_level, created_at) VALUES (?1, ?2, ?3, ?4)",
                params![name, credential_hash, level.as_str(), now.0],
            );
            match res {
                Err(e) if is_constraint(&e) => return Err(StoreError::DuplicateStaff(name.to_string())),
                other => other?,
            };
            let id = StaffId(tx.last_insert_rowid());
            load_staff(tx, "id = ?1", id.0)?.ok_or_else(|| StoreError::not_found("staff", id.0))
        })
    }

    pub fn staff(&self, id: StaffId) -> Result<Option<StaffAccount>> {
        self.read(|conn| load_staff(conn, "id = ?1", id.0))
    }

    pub fn staff_by_name(&self, name: &str) -> Result<Option<StaffAccount>> {
        self.read(|conn| load_staff(conn, "name = ?1", name))
    }

    pub fn staff_accounts(&self) -> Result<Vec<StaffAccount>> {
        self.read(|conn| {
            let ids = ids(conn, "SELECT id FROM staff ORDER BY id")?;
            ids.into_iter()
                .filter_map(|id| load_staff(conn, "id = ?1", id).transpose())
                .collect()
        })
    }

    pub fn update_staff(
        &self,
        id: StaffId,
        level: Option<AccessLevel>,
        active: Option<bool>,
        credential_hash: Option<&str>,
    ) -> Result<StaffAccount> {
        self.write(|tx| {
            let current = load_staff(tx, "id = ?1", id.0)?.ok_or_else(|| StoreError::not_found("staff", id.0))?;
            tx.execute(
                "UPDATE staff SET access_level = ?1, active = ?2, credential_hash = ?3 WHERE id = ?4",
                params![
                    level.unwrap_or(current.access_level).as_str(),
                    active.unwrap_or(current.active),
                    credential_hash.unwrap_or(&current.credential_hash),
                    id.0
                ],
            )?;
            load_staff(tx, "id = ?1", id.0)?.ok_or_else(|| StoreError::not_found("staff", id.0))
        })
    }

    // ---- settings --------------------------------------------------------

    pub fn settings(&self) -> Result<SystemSettings> {
        self.read(|conn| {
            let body: String =
                conn.query_row("SELECT body FROM settings WHERE id = 1", [], |r| r.get(0))?;
            serde_json::from_str(&body).map_err(corrupt)
        })
    }

    /// Atomically replaces the settings and records who changed them.
    pub fn save_settings(
        &self,
        settings: &SystemSettings,
        staff: StaffId,
        now: Timestamp,
    ) -> Result<()> {
        let body = settings_json(settings)?;
        self.write(|tx| {
            tx.execute(
                "UPDATE settings SET body = ?1, version = version + 1 WHERE id = 1",
                params![body],
            )?;
            tx.execute(
                "INSERT INTO settings_changes (staff_id, at, body) VALUES (?1, ?2, ?3)",
                params![staff.0, now.0, body],
            )?;
            Ok(())
        })
    }
}

fn settings_json(settings: &SystemSettings) -> Result<String> {
    serde_json::to_string(settings).map_err(corrupt)
}

pub(crate) fn ids(conn: &Connection, sql: &str) -> Result<Vec<i64>> {
    let mut stmt = conn.prepare(sql)?;
    let ids = stmt
        .query_map([], |r| r.get::<_, i64>(0))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    Ok(ids)
}

fn insert_options(tx: &Connection, id: QuestionId, options: &[AnswerOption]) -> Result<()> {
    let mut stmt = tx.prepare(
        "INSERT INTO question_options (question_id, position, code, meaning) VALUES (?1, ?2, ?3, ?4)",
    )?;
    for (i, opt) in options.iter().enumerate() {
        stmt.execute(params![id.0, i as i64, opt.code.to_string(), opt.meaning])?;
    }
    Ok(())
}

pub(crate) fn load_question(conn: &Connection, id: QuestionId) -> Result<Option<Question>> {
    let row = conn
        .query_row(
            "SELECT text, response_type, created_at, version FROM questions WHERE id = ?1",
            [id.0],
            |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, i64>(2)?,
                    r.get::<_, i64>(3)?,
                ))
            },
        )
        .optional()?;
    let Some((text, ty, created_at, version)) = row else {
        return Ok(None);
    };
    let response_type: ResponseType = ty.parse().map_err(corrupt)?;
    let mut stmt = conn.prepare(
        "SELECT code, meaning FROM question_options WHERE question_id = ?1 ORDER BY position",
    )?;
    let options = stmt
        .query_map([id.0], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))
        })?
        .map(|row| {
            let (code, meaning) = row?;
            let code = code
                .chars()
                .next()
                .ok_or_else(|| corrupt("empty option code"))?;
            Ok(AnswerOption { code, meaning })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Question {
        id,
        text,
        response_type,
        options,
        created_at: Timestamp(created_at),
        version,
    }))
}

fn insert_items(tx: &Connection, id: QuestionnaireId, question_ids: &[QuestionId]) -> Result<()> {
    let mut stmt = tx.prepare(
        "INSERT INTO questionnaire_items (questionnaire_id, position, question_id) VALUES (?1, ?2, ?3)",
    )?;
    for (i, q) in question_ids.iter().enumerate() {
        stmt.execute(params![id.0, i as i64 + 1, q.0])?;
    }
    Ok(())
}

pub(crate) fn load_questionnaire(
    conn: &Connection,
    id: QuestionnaireId,
) -> Result<Option<Questionnaire>> {
    let row = conn
        .query_row(
            "SELECT name, created_at FROM questionnaires WHERE id = ?1",
            [id.0],
            |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)?)),
        )
        .optional()?;
    let Some((name, created_at)) = row else {
        return Ok(None);
    };
    let mut stmt = conn.prepare(
        "SELECT question_id FROM questionnaire_items WHERE questionnaire_id = ?1 ORDER BY position",
    )?;
    let question_ids = stmt
        .query_map([id.0], |r| r.get::<_, i64>(0).map(QuestionId))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    Ok(Some(Questionnaire {
        id,
        name,
        question_ids,
        created_at: Timestamp(created_at),
    }))
}

pub(crate) fn insert_respondent_tx(
    tx: &Connection,
    phone: &Phone,
    attributes: &BTreeMap<String, String>,
    active: bool,
    needs_review: bool,
    now: Timestamp,
) -> Result<Respondent> {
    let res = tx.execute(
        "INSERT INTO respondents (phone, created_at, last_edit, active, needs_review) VALUES (?1, ?2, ?2, ?3, ?4)",
        params![phone.as_str(), now.0, active, needs_review],
    );
    match res {
        Err(e) if is_constraint(&e) => return Err(StoreError::DuplicatePhone(phone.clone())),
        other => other?,
    };
    let id = RespondentId(tx.last_insert_rowid());
    let mut stmt = tx.prepare(
        "INSERT INTO respondent_attributes (respondent_id, name, value) VALUES (?1, ?2, ?3)",
    )?;
    for (name, value) in attributes {
        stmt.execute(params![id.0, name, value])?;
    }
    load_respondent(tx, id)?.ok_or_else(|| StoreError::not_found("respondent", id.0))
}

pub(crate) fn load_respondent(conn: &Connection, id: RespondentId) -> Result<Option<Respondent>> {
    let row = conn
        .query_row(
            "SELECT phone, created_at, last_edit, active, needs_review, version FROM respondents WHERE id = ?1",
            [id.0],
            |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, i64>(1)?,
                    r.get::<_, i64>(2)?,
                    r.get::<_, bool>(3)?,
                    r.get::<_, bool>(4)?,
                    r.get::<_, i64>(5)?,
                ))
            },
        )
        .optional()?;
    let Some((phone, created_at, last_edit, active, needs_review, version)) = row else {
        return Ok(None);
    };
    let mut stmt = conn.prepare(
        "SELECT name, value FROM respondent_attributes WHERE respondent_id = ?1 ORDER BY name",
    )?;
    let attributes = stmt
        .query_map([id.0], |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?))
        })?
        .collect::<rusqlite::Result<BTreeMap<_, _>>>()?;
    Ok(Some(Respondent {
        id,
        phone: Phone::parse(&phone).map_err(corrupt)?,
        created_at: Timestamp(created_at),
        last_edit: Timestamp(last_edit),
        active,
        needs_review,
        attributes,
        version,
    }))
}

pub(crate) fn respondent_by_phone(conn: &Connection, phone: &Phone) -> Result<Option<Respondent>> {
    let id = conn
        .query_row(
            "SELECT id FROM respondents WHERE phone = ?1 ORDER BY active DESC, id DESC LIMIT 1",
            [phone.as_str()],
            |r| r.get::<_, i64>(0),
        )
        .optional()?;
    match id {
        Some(id) => load_respondent(conn, RespondentId(id)),
        None => Ok(None),
    }
}

/// Bumps `last_edit` and `version`, checking `expected_version` first.
fn touch_respondent(
    tx: &Connection,
    id: RespondentId,
    now: Timestamp,
    expected_version: Option<i64>,
) -> Result<()> {
    let (last_edit, version): (i64, i64) = tx
        .query_row(
            "SELECT last_edit, version FROM respondents WHERE id = ?1",
            [id.0],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?
        .ok_or_else(|| StoreError::not_found("respondent", id.0))?;
    if expected_version.is_some_and(|v| v != version) {
        return Err(StoreError::Conflict {
            entity: "respondent",
            id: id.0,
        });
    }
    let next = crate::model::bump_last_edit(Timestamp(last_edit), now);
    tx.execute(
        "UPDATE respondents SET last_edit = ?1, version = version + 1 WHERE id = ?2 AND version = ?3",
        params![next.0, id.0, version],
    )?;
    Ok(())
}

pub(crate) fn set_active_tx(
    tx: &Connection,
    id: RespondentId,
    active: bool,
    now: Timestamp,
) -> Result<Respondent> {
    let current =
        load_respondent(tx, id)?.ok_or_else(|| StoreError::not_found("respondent", id.0))?;
    touch_respondent(tx, id, now, None)?;
    let res = tx.execute(
        "UPDATE respondents SET active = ?1, needs_review = CASE WHEN ?1 THEN 0 ELSE needs_review END WHERE id = ?2",
        params![active, id.0],
    );
    match res {
        Err(e) if is_constraint(&e) => return Err(StoreError::DuplicatePhone(current.phone)),
        other => other?,
    };
    load_respondent(tx, id)?.ok_or_else(|| StoreError::not_found("respondent", id.0))
}

pub(crate) fn attribute_hints(conn: &Connection) -> Result<BTreeMap<String, AttributeHint>> {
    let mut stmt = conn.prepare("SELECT name, hint FROM attribute_hints ORDER BY name")?;
    let rows = stmt
        .query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    rows.into_iter()
        .map(|(name, hint)| Ok((name, hint.parse().map_err(corrupt)?)))
        .collect()
}

fn insert_members(tx: &Connection, id: GroupId, members: &BTreeSet<RespondentId>) -> Result<()> {
    let mut stmt =
        tx.prepare("INSERT INTO group_members (group_id, respondent_id) VALUES (?1, ?2)")?;
    for m in members {
        match stmt.execute(params![id.0, m.0]) {
            Err(e) if is_constraint(&e) => return Err(StoreError::not_found("respondent", m.0)),
            other => other?,
        };
    }
    Ok(())
}

pub(crate) fn load_group(conn: &Connection, id: GroupId) -> Result<Option<UserGroup>> {
    let name = conn
        .query_row("SELECT name FROM user_groups WHERE id = ?1", [id.0], |r| {
            r.get::<_, String>(0)
        })
        .optional()?;
    let Some(name) = name else {
        return Ok(None);
    };
    let mut stmt = conn.prepare("SELECT respondent_id FROM group_members WHERE group_id = ?1")?;
    let member_ids = stmt
        .query_map([id.0], |r| r.get::<_, i64>(0).map(RespondentId))?
        .collect::<rusqlite::Result<BTreeSet<_>>>()?;
    Ok(Some(UserGroup {
        id,
        name,
        member_ids,
    }))
}

fn load_staff(
    conn: &Connection,
    condition: &str,
    key: impl rusqlite::ToSql,
) -> Result<Option<StaffAccount>> {
    let row = conn
        .query_row(
            &format!("SELECT id, name, credential_hash, access_level, active FROM staff WHERE {condition}"),
            [key],
            |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, bool>(4)?,
                ))
            },
        )
        .optional()?;
    row.map(|(id, name, credential_hash, level, active)| {
        Ok(StaffAccount {
            id: StaffId(id),
            name,
            credential_hash,
            access_level: level.parse().map_err(corrupt)?,
            active,
        })
    })
    .transpose()
}
