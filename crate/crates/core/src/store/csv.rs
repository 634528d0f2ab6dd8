// SPDX-License-Identifier: Apache-2.0

//! CSV export of any table view and import of responses collected offline.
//!
//! Output is UTF-8 without a byte-order mark, LF line endings, and quotes
//! only where a field needs them.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};

use rusqlite::{params, Connection};
use serde::Serialize;

use super::records::{insert_response_tx, NewResponse};
use super::{
    insert_respondent_tx, load_question, load_questionnaire, respondent_by_phone, Result, Store,
    StoreError,
};
use crate::model::filter::{Column, Row};
use crate::model::{Phone, QuestionId, QuestionnaireId, ResponseSource};
use crate::parse::{parse_answer, sanitize_input, YesNoVocabulary};
use crate::time::Timestamp;
use crate::transport::SegmentLimits;

/// Serialises `rows` under `columns`; cells missing from a row are empty.
pub fn export_csv(columns: &[Column], rows: &[Row]) -> Result<String> {
    let mut w = ::csv::WriterBuilder::new()
        .terminator(::csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let write_err = |e: ::csv::Error| StoreError::Corrupt(e.to_string());
    w.write_record(columns.iter().map(|c| c.name.as_str()))
        .map_err(write_err)?;
    for row in rows {
        w.write_record(columns.iter().map(|c| row.get(&c.name).render()))
            .map_err(write_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| StoreError::Corrupt(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number in the document, header being line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: Vec<RejectedRow>,
    pub created_respondents: u64,
}

struct Layout {
    phone: usize,
    questionnaire: usize,
    question_id: Option<usize>,
    ordinal: Option<usize>,
    raw: usize,
    received_at: Option<usize>,
}

impl Layout {
    fn from_headers(headers: &::csv::StringRecord) -> Result<Layout> {
        let find = |names: &[&str]| {
            headers
                .iter()
                .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
        };
        let need = |names: &[&str]| {
            find(names)
                .ok_or_else(|| StoreError::MalformedCsv(format!("missing column {:?}", names[0])))
        };
        let layout = Layout {
            phone: need(&["phone"])?,
            questionnaire: need(&["questionnaire_id", "questionnaire"])?,
            question_id: find(&["question_id"]),
            ordinal: find(&["question_ordinal", "ordinal"]),
            raw: need(&["raw_text", "raw_answer", "answer"])?,
            received_at: find(&["received_at"]),
        };
        if layout.question_id.is_none() && layout.ordinal.is_none() {
            return Err(StoreError::MalformedCsv(
                "missing column \"question_id\" or \"question_ordinal\"".into(),
            ));
        }
        Ok(layout)
    }
}

/// One row resolved against the store, ready to insert.
struct Resolved {
    phone: Phone,
    questionnaire: QuestionnaireId,
    question: QuestionId,
    raw: String,
    received_at: Option<Timestamp>,
}

fn resolve(
    conn: &Connection,
    layout: &Layout,
    rec: &::csv::StringRecord,
) -> Result<Result<Resolved, String>> {
    let field = |i: usize| rec.get(i).unwrap_or("").trim();
    let opt_field = |i: Option<usize>| i.map(field).filter(|s| !s.is_empty());
    let phone = match Phone::parse(field(layout.phone)) {
        Ok(p) => p,
        Err(e) => return Ok(Err(format!("phone: {e}"))),
    };
    let Ok(qn_id) = field(layout.questionnaire).parse::<i64>() else {
        return Ok(Err(format!(
            "questionnaire id {:?} is not a number",
            field(layout.questionnaire)
        )));
    };
    let Some(questionnaire) = load_questionnaire(conn, QuestionnaireId(qn_id))? else {
        return Ok(Err(format!("unknown questionnaire {qn_id}")));
    };
    let question = if let Some(raw_id) = opt_field(layout.question_id) {
        let Ok(id) = raw_id.parse::<i64>() else {
            return Ok(Err(format!("question id {raw_id:?} is not a number")));
        };
        let id = QuestionId(id);
        if questionnaire.ordinal_of(id).is_none() {
            return Ok(Err(format!(
                "unknown question {id} in questionnaire {qn_id}"
            )));
        }
        id
    } else if let Some(raw_ord) = opt_field(layout.ordinal) {
        let Some(id) = raw_ord
            .parse::<u32>()
            .ok()
            .and_then(|o| questionnaire.question_at(o))
        else {
            return Ok(Err(format!(
                "unknown question ordinal {raw_ord:?} in questionnaire {qn_id}"
            )));
        };
        id
    } else {
        return Ok(Err("no question id or ordinal".into()));
    };
    let received_at = match opt_field(layout.received_at) {
        None => None,
        Some(s) => match s.parse::<Timestamp>() {
            Ok(t) => Some(t),
            Err(e) => return Ok(Err(format!("received_at: {e}"))),
        },
    };
    let raw = sanitize_input(
        rec.get(layout.raw).unwrap_or(""),
        SegmentLimits::default().max_message_chars(),
    )
    .text;
    Ok(Ok(Resolved {
        phone,
        questionnaire: questionnaire.id,
        question,
        raw,
        received_at,
    }))
}

/// True if a response with the same phone, question, raw text and receipt
/// time exists. Without a receipt time, any earlier CSV import of the same
/// phone, question and text counts.
fn already_stored(conn: &Connection, r: &Resolved) -> Result<bool> {
    let n: i64 = match r.received_at {
        Some(at) => conn.query_row(
            "SELECT COUNT(*) FROM responses x JOIN respondents p ON p.id = x.respondent_id
             WHERE p.phone = ?1 AND x.question_id = ?2 AND x.raw_text = ?3 AND x.received_at = ?4",
            params![r.phone.as_str(), r.question.0, r.raw, at.0],
            |row| row.get(0),
        )?,
        None => conn.query_row(
            "SELECT COUNT(*) FROM responses x JOIN respondents p ON p.id = x.respondent_id
             WHERE p.phone = ?1 AND x.question_id = ?2 AND x.raw_text = ?3 AND x.source = 'csv_import'",
            params![r.phone.as_str(), r.question.0, r.raw],
            |row| row.get(0),
        )?,
    };
    Ok(n > 0)
}

impl Store {
    /// Imports responses collected outside the SMS channel. Rows that fail
    /// to resolve are reported and skipped; the rest land in one
    /// transaction. Unknown phones get an inactive profile flagged for
    /// review.
    pub fn import_responses_csv(
        &self,
        document: &str,
        vocabulary: &YesNoVocabulary,
        now: Timestamp,
    ) -> Result<ImportReport> {
        let mut reader = ::csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(document.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| StoreError::MalformedCsv(e.to_string()))?
            .clone();
        let layout = Layout::from_headers(&headers)?;
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| StoreError::MalformedCsv(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            records.push((line, rec));
        }
        self.write(|tx| {
            let mut report = ImportReport::default();
            let mut seen = HashSet::new();
            let mut questions = BTreeMap::new();
            for (line, rec) in &records {
                let resolved = match resolve(tx, &layout, rec)? {
                    Ok(r) => r,
                    Err(reason) => {
                        report.rejected.push(RejectedRow {
                            line: *line,
                            reason,
                        });
                        continue;
                    }
                };
                let key = (
                    resolved.phone.clone(),
                    resolved.question,
                    resolved.raw.clone(),
                    resolved.received_at,
                );
                if !seen.insert(key) || already_stored(tx, &resolved)? {
                    report.duplicates += 1;
                    continue;
                }
                let respondent = match respondent_by_phone(tx, &resolved.phone)? {
                    Some(r) => r,
                    None => {
                        report.created_respondents += 1;
                        insert_respondent_tx(
                            tx,
                            &resolved.phone,
                            &BTreeMap::new(),
                            false,
                            true,
                            now,
                        )?
                    }
                };
                let question = match questions.entry(resolved.question) {
                    Entry::Occupied(e) => e.into_mut(),
                    Entry::Vacant(e) => {
                        e.insert(load_question(tx, resolved.question)?.ok_or_else(|| {
                            StoreError::not_found("question", resolved.question.0)
                        })?)
                    }
                };
                let parsed = parse_answer(question, &resolved.raw, vocabulary).into_value();
                insert_response_tx(
                    tx,
                    &NewResponse {
                        respondent_id: respondent.id,
                        question_id: resolved.question,
                        questionnaire_id: resolved.questionnaire,
                        session_id: None,
                        raw_text: resolved.raw,
                        parsed_value: parsed,
                        received_at: resolved.received_at.unwrap_or(now),
                        source: ResponseSource::CsvImport,
                        sms_record_id: None,
                    },
                )?;
                report.accepted += 1;
            }
            Ok(report)
        })
    }
}
