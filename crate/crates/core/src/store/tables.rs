// SPDX-License-Identifier: Apache-2.0

//! Tabular views used by filtering, CSV export and the admin API.

use std::collections::{BTreeMap, BTreeSet};

use rusqlite::Connection;

use super::ledger::query_records;
use super::{attribute_hints, ids, load_group, load_question, load_questionnaire, Result, Store};
use crate::model::filter::{CellValue, Column, ColumnType, Row, Table, TableData};
use crate::model::{AttributeHint, GroupId, QuestionId, QuestionnaireId};
use crate::render::format_options;
use crate::time::Timestamp;

/// Prefix for respondent attribute columns in the responses table.
pub const USER_PREFIX: &str = "user.";

fn text(s: impl Into<String>) -> CellValue {
    CellValue::Text(s.into())
}

fn num(n: i64) -> CellValue {
    CellValue::Number(n as f64)
}

fn opt_num(n: Option<i64>) -> CellValue {
    n.map_or(CellValue::Null, num)
}

fn ts(ms: i64) -> CellValue {
    CellValue::Timestamp(Timestamp(ms))
}

fn row(id: i64, cells: Vec<(&str, CellValue)>) -> Row {
    Row {
        id,
        cells: cells.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    }
}

fn columns(spec: &[(&str, ColumnType)]) -> Vec<Column> {
    spec.iter().map(|(n, t)| Column::new(*n, *t)).collect()
}

/// Attribute values keyed by respondent, plus each attribute's column type.
struct Attributes {
    by_respondent: BTreeMap<i64, BTreeMap<String, String>>,
    types: BTreeMap<String, ColumnType>,
}

/// A declared hint wins. Without one, a column whose values all read as
/// numbers is numeric, one whose values all read as dates is a date, and
/// anything else is text.
fn infer_type(values: &[&str]) -> ColumnType {
    let filled: Vec<&str> = values
        .iter()
        .copied()
        .filter(|v| !v.trim().is_empty())
        .collect();
    if filled.is_empty() {
        return ColumnType::Text;
    }
    let all = |ty| {
        filled
            .iter()
            .all(|v| CellValue::from_typed_str(ty, v) != CellValue::Null)
    };
    if all(ColumnType::Number) {
        ColumnType::Number
    } else if all(ColumnType::Date) {
        ColumnType::Date
    } else {
        ColumnType::Text
    }
}

fn load_attributes(conn: &Connection) -> Result<Attributes> {
    let mut stmt = conn.prepare(
        "SELECT respondent_id, name, value FROM respondent_attributes ORDER BY respondent_id, name",
    )?;
    let rows = stmt
        .query_map([], |r| {
            Ok((
                r.get::<_, i64>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
            ))
        })?
        .collect::<rusqlite::Result<Vec<_>>>()?;
    let hints = attribute_hints(conn)?;
    let mut by_respondent: BTreeMap<i64, BTreeMap<String, String>> = BTreeMap::new();
    let mut values: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for (id, name, value) in &rows {
        values.entry(name.clone()).or_default().push(value);
        by_respondent
            .entry(*id)
            .or_default()
            .insert(name.clone(), value.clone());
    }
    let types = values
        .iter()
        .map(|(name, vals)| {
            let ty = match hints.get(name) {
                Some(AttributeHint::String) => ColumnType::Text,
                Some(AttributeHint::Number) => ColumnType::Number,
                Some(AttributeHint::Date) => ColumnType::Date,
                None => infer_type(vals),
            };
            (name.clone(), ty)
        })
        .collect();
    Ok(Attributes {
        by_respondent,
        types,
    })
}

fn users(conn: &Connection) -> Result<TableData> {
    let attrs = load_attributes(conn)?;
    let mut cols = columns(&[
        ("id", ColumnType::Number),
        ("phone", ColumnType::Text),
        ("created_at", ColumnType::Timestamp),
        ("last_edit", ColumnType::Timestamp),
        ("active", ColumnType::Bool),
        ("needs_review", ColumnType::Bool),
    ]);
    cols.extend(attrs.types.iter().map(|(n, t)| Column::new(n.clone(), *t)));
    let mut stmt = conn.prepare(
        "SELECT id, phone, created_at, last_edit, active, needs_review FROM respondents ORDER BY id",
    )?;
    let mut rows_out = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(r) = rows.next()? {
        let id: i64 = r.get(0)?;
        let mut row = row(
            id,
            vec![
                ("id", num(id)),
                ("phone", text(r.get::<_, String>(1)?)),
                ("created_at", ts(r.get(2)?)),
                ("last_edit", ts(r.get(3)?)),
                ("active", CellValue::Bool(r.get(4)?)),
                ("needs_review", CellValue::Bool(r.get(5)?)),
            ],
        );
        if let Some(values) = attrs.by_respondent.get(&id) {
            for (name, value) in values {
                row.cells.insert(
                    name.clone(),
                    CellValue::from_typed_str(attrs.types[name], value),
                );
            }
        }
        rows_out.push(row);
    }
    Ok(TableData {
        table: Table::Users,
        columns: cols,
        rows: rows_out,
    })
}

fn questions(conn: &Connection) -> Result<TableData> {
    let mut rows = Vec::new();
    for id in ids(conn, "SELECT id FROM questions ORDER BY id")? {
        let Some(q) = load_question(conn, QuestionId(id))? else {
            continue;
        };
        rows.push(row(
            id,
            vec![
                ("id", num(id)),
                ("text", text(q.text)),
                ("response_type", text(q.response_type.as_str())),
                ("options", text(format_options(&q.options))),
                ("created_at", ts(q.created_at.0)),
                ("version", num(q.version)),
            ],
        ));
    }
    Ok(TableData {
        table: Table::Questions,
        columns: columns(&[
            ("id", ColumnType::Number),
            ("text", ColumnType::Text),
            ("response_type", ColumnType::Text),
            ("options", ColumnType::Text),
            ("created_at", ColumnType::Timestamp),
            ("version", ColumnType::Number),
        ]),
        rows,
    })
}

fn join_ids<T: ToString>(ids: impl IntoIterator<Item = T>) -> String {
    ids.into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn questionnaires(conn: &Connection) -> Result<TableData> {
    let mut rows = Vec::new();
    for id in ids(conn, "SELECT id FROM questionnaires ORDER BY id")? {
        let Some(q) = load_questionnaire(conn, QuestionnaireId(id))? else {
            continue;
        };
        rows.push(row(
            id,
            vec![
                ("id", num(id)),
                ("name", text(q.name)),
                ("length", num(q.question_ids.len() as i64)),
                ("question_ids", text(join_ids(q.question_ids))),
                ("created_at", ts(q.created_at.0)),
            ],
        ));
    }
    Ok(TableData {
        table: Table::Questionnaires,
        columns: columns(&[
            ("id", ColumnType::Number),
            ("name", ColumnType::Text),
            ("length", ColumnType::Number),
            ("question_ids", ColumnType::Text),
            ("created_at", ColumnType::Timestamp),
        ]),
        rows,
    })
}

fn groups(conn: &Connection) -> Result<TableData> {
    let mut rows = Vec::new();
    for id in ids(conn, "SELECT id FROM user_groups ORDER BY id")? {
        let Some(g) = load_group(conn, GroupId(id))? else {
            continue;
        };
        rows.push(row(
            id,
            vec![
                ("id", num(id)),
                ("name", text(g.name)),
                ("size", num(g.member_ids.len() as i64)),
                ("member_ids", text(join_ids(g.member_ids))),
            ],
        ));
    }
    Ok(TableData {
        table: Table::Groups,
        columns: columns(&[
            ("id", ColumnType::Number),
            ("name", ColumnType::Text),
            ("size", ColumnType::Number),
            ("member_ids", ColumnType::Text),
        ]),
        rows,
    })
}

fn responses(conn: &Connection) -> Result<TableData> {
    let attrs = load_attributes(conn)?;
    let mut cols = columns(&[
        ("id", ColumnType::Number),
        ("respondent_id", ColumnType::Number),
        ("phone", ColumnType::Text),
        ("questionnaire_id", ColumnType::Number),
        ("question_id", ColumnType::Number),
        ("question_ordinal", ColumnType::Number),
        ("session_id", ColumnType::Number),
        ("session_state", ColumnType::Text),
        ("raw_text", ColumnType::Text),
        ("parsed_kind", ColumnType::Text),
        ("parsed_value", ColumnType::Text),
        ("source", ColumnType::Text),
        ("received_at", ColumnType::Timestamp),
        ("sms_record_id", ColumnType::Number),
    ]);
    cols.extend(
        attrs
            .types
            .iter()
            .map(|(n, t)| Column::new(format!("{USER_PREFIX}{n}"), *t)),
    );
    let mut stmt = conn.prepare(
        "SELECT r.id, r.respondent_id, p.phone, r.questionnaire_id, r.question_id, i.position,
                r.session_id, s.state, r.raw_text, r.parsed_kind, r.parsed_value, r.source,
                r.received_at, r.sms_record_id
         FROM responses r
         JOIN respondents p ON p.id = r.respondent_id
         LEFT JOIN questionnaire_items i
           ON i.questionnaire_id = r.questionnaire_id AND i.question_id = r.question_id
         LEFT JOIN sessions s ON s.id = r.session_id
         ORDER BY r.id",
    )?;
    let mut rows_out = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(r) = rows.next()? {
        let id: i64 = r.get(0)?;
        let respondent: i64 = r.get(1)?;
        let mut row = row(
            id,
            vec![
                ("id", num(id)),
                ("respondent_id", num(respondent)),
                ("phone", text(r.get::<_, String>(2)?)),
                ("questionnaire_id", num(r.get(3)?)),
                ("question_id", num(r.get(4)?)),
                ("question_ordinal", opt_num(r.get(5)?)),
                ("session_id", opt_num(r.get(6)?)),
                (
                    "session_state",
                    r.get::<_, Option<String>>(7)?.map_or(CellValue::Null, text),
                ),
                ("raw_text", text(r.get::<_, String>(8)?)),
                ("parsed_kind", text(r.get::<_, String>(9)?)),
                ("parsed_value", text(r.get::<_, String>(10)?)),
                ("source", text(r.get::<_, String>(11)?)),
                ("received_at", ts(r.get(12)?)),
                ("sms_record_id", opt_num(r.get(13)?)),
            ],
        );
        if let Some(values) = attrs.by_respondent.get(&respondent) {
            for (name, value) in values {
                row.cells.insert(
                    format!("{USER_PREFIX}{name}"),
                    CellValue::from_typed_str(attrs.types[name], value),
                );
            }
        }
        rows_out.push(row);
    }
    Ok(TableData {
        table: Table::Responses,
        columns: cols,
        rows: rows_out,
    })
}

fn sms_log(conn: &Connection) -> Result<TableData> {
    let rows = query_records(conn, "", [])?
        .into_iter()
        .map(|r| {
            let seq = r.seq as i64;
            row(
                seq,
                vec![
                    ("seq", num(seq)),
                    ("direction", text(r.direction.as_str())),
                    ("phone", text(r.phone.as_str())),
                    ("body", text(r.body)),
                    ("segment_count", num(r.segment_count as i64)),
                    ("message_id", opt_num(r.message_id.map(|m| m.0 as i64))),
                    ("recorded_at", ts(r.recorded_at.0)),
                    ("delivery_status", text(r.delivery_status.as_str())),
                    (
                        "status_at",
                        r.status_at.map_or(CellValue::Null, |t| ts(t.0)),
                    ),
                    ("session_id", opt_num(r.session_id.map(|s| s.0))),
                ],
            )
        })
        .collect();
    Ok(TableData {
        table: Table::SmsLog,
        columns: columns(&[
            ("seq", ColumnType::Number),
            ("direction", ColumnType::Text),
            ("phone", ColumnType::Text),
            ("body", ColumnType::Text),
            ("segment_count", ColumnType::Number),
            ("message_id", ColumnType::Number),
            ("recorded_at", ColumnType::Timestamp),
            ("delivery_status", ColumnType::Text),
            ("status_at", ColumnType::Timestamp),
            ("session_id", ColumnType::Number),
        ]),
        rows,
    })
}

fn staff(conn: &Connection) -> Result<TableData> {
    let mut stmt =
        conn.prepare("SELECT id, name, access_level, active, created_at FROM staff ORDER BY id")?;
    let mut rows_out = Vec::new();
    let mut rows = stmt.query([])?;
    while let Some(r) = rows.next()? {
        let id: i64 = r.get(0)?;
        rows_out.push(row(
            id,
            vec![
                ("id", num(id)),
                ("name", text(r.get::<_, String>(1)?)),
                ("access_level", text(r.get::<_, String>(2)?)),
                ("active", CellValue::Bool(r.get(3)?)),
                ("created_at", ts(r.get(4)?)),
            ],
        ));
    }
    Ok(TableData {
        table: Table::Staff,
        columns: columns(&[
            ("id", ColumnType::Number),
            ("name", ColumnType::Text),
            ("access_level", ColumnType::Text),
            ("active", ColumnType::Bool),
            ("created_at", ColumnType::Timestamp),
        ]),
        rows: rows_out,
    })
}

impl Store {
    /// Materialises `table` from one consistent read.
    pub fn load_table(&self, table: Table) -> Result<TableData> {
        self.read(|conn| match table {
            Table::Users => users(conn),
            Table::Questions => questions(conn),
            Table::Questionnaires => questionnaires(conn),
            Table::Groups => groups(conn),
            Table::Responses => responses(conn),
            Table::SmsLog => sms_log(conn),
            Table::Staff => staff(conn),
        })
    }

    /// Names of every attribute set on at least one respondent.
    pub fn attribute_names(&self) -> Result<BTreeSet<String>> {
        self.read(|conn| {
            let mut stmt =
                conn.prepare("SELECT DISTINCT name FROM respondent_attributes ORDER BY name")?;
            let names = stmt
                .query_map([], |r| r.get::<_, String>(0))?
                .collect::<rusqlite::Result<BTreeSet<_>>>()?;
            Ok(names)
        })
    }
}
