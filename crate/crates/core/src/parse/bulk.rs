// SPDX-License-Identifier: Apache-2.0

//! Enumerator bulk-response format.
//!
//! One message carries answers for consecutive questions of one
//! questionnaire on behalf of one respondent:
//!
//! ```text
//! U24F102Q1;A;12;C;More time with family
//! ```
//!
//! `U` is the respondent id, `F` the questionnaire ("form") id and `Q` the
//! 1-based ordinal of the first answered question. Answers are separated by
//! `;` and cannot themselves contain one; there is no escape sequence.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub const SEPARATOR: char = ';';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkRecord {
    pub respondent_id: u64,
    pub questionnaire_id: u64,
    pub start_question_ordinal: u32,
    pub answers: Vec<String>,
}

impl BulkRecord {
    /// `(ordinal, answer)` pairs in order.
    pub fn ordinals(&self) -> impl Iterator<Item = (u32, &str)> + '_ {
        self.answers
            .iter()
            .enumerate()
            .map(|(i, a)| (self.start_question_ordinal + i as u32, a.as_str()))
    }

    pub fn last_ordinal(&self) -> u32 {
        self.start_question_ordinal + self.answers.len().saturating_sub(1) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BulkError {
    #[error("bulk header is malformed: {0}")]
    MalformedHeader(String),
    #[error("bulk message carries no answers")]
    EmptyAnswerList,
    #[error("bulk encoding is disabled")]
    DisabledFeature,
    #[error("answer {0} contains a semicolon")]
    SemicolonInAnswer(usize),
}

fn header_number<T: std::str::FromStr + PartialEq + Default>(
    rest: &str,
    tag: char,
) -> Result<(T, &str), BulkError> {
    let rest = rest
        .strip_prefix(tag)
        .ok_or_else(|| BulkError::MalformedHeader(format!("expected {tag:?}")))?;
    let end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    let value: T = rest[..end]
        .parse()
        .map_err(|_| BulkError::MalformedHeader(format!("{tag:?} needs a decimal number")))?;
    if value == T::default() {
        return Err(BulkError::MalformedHeader(format!(
            "{tag:?} must be positive"
        )));
    }
    Ok((value, &rest[end..]))
}

/// Decodes one bulk message. `enabled` mirrors the superuser toggle.
pub fn decode_bulk(body: &str, enabled: bool) -> Result<BulkRecord, BulkError> {
    if !enabled {
        return Err(BulkError::DisabledFeature);
    }
    let (respondent_id, rest) = header_number::<u64>(body, 'U')?;
    let (questionnaire_id, rest) = header_number::<u64>(rest, 'F')?;
    let (start_question_ordinal, rest) = header_number::<u32>(rest, 'Q')?;
    if rest.is_empty() {
        return Err(BulkError::EmptyAnswerList);
    }
    let answers = rest
        .strip_prefix(SEPARATOR)
        .ok_or_else(|| BulkError::MalformedHeader("expected ';' after header".into()))?;
    Ok(BulkRecord {
        respondent_id,
        questionnaire_id,
        start_question_ordinal,
        answers: answers.split(SEPARATOR).map(str::to_string).collect(),
    })
}

pub fn encode_bulk(record: &BulkRecord) -> Result<String, BulkError> {
    if record.answers.is_empty() {
        return Err(BulkError::EmptyAnswerList);
    }
    if let Some(i) = record.answers.iter().position(|a| a.contains(SEPARATOR)) {
        return Err(BulkError::SemicolonInAnswer(i));
    }
    let mut out = format!(
        "U{}F{}Q{}",
        record.respondent_id, record.questionnaire_id, record.start_question_ordinal
    );
    for answer in &record.answers {
        let _ = write!(out, "{SEPARATOR}{answer}");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = "U24F102Q1;A;12;C;More time with family";

    fn rec(u: u64, f: u64, q: u32, answers: &[&str]) -> BulkRecord {
        BulkRecord {
            respondent_id: u,
            questionnaire_id: f,
            start_question_ordinal: q,
            answers: answers.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn decodes_enumerator_example() {
        let r = decode_bulk(EXAMPLE, true).unwrap();
        assert_eq!(
            r,
            rec(24, 102, 1, &["A", "12", "C", "More time with family"])
        );
        let pairs: Vec<_> = r.ordinals().collect();
        assert_eq!(pairs[3], (4, "More time with family"));
        assert_eq!(r.last_ordinal(), 4);
    }

    #[test]
    fn single_answer() {
        assert_eq!(decode_bulk("U5F7Q3;B", true).unwrap(), rec(5, 7, 3, &["B"]));
        assert_eq!(encode_bulk(&rec(5, 7, 3, &["B"])).unwrap(), "U5F7Q3;B");
    }

    #[test]
    fn encodes_enumerator_example() {
        let r = rec(24, 102, 1, &["A", "12", "C", "More time with family"]);
        assert_eq!(encode_bulk(&r).unwrap(), EXAMPLE);
    }

    #[test]
    fn malformed() {
        assert!(matches!(
            decode_bulk("U24Q1;A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_bulk("u24f102q1;A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_bulk("U0F1Q1;A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_bulk("UF1Q1;A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_bulk("U1F1Q1 A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert!(matches!(
            decode_bulk("U99999999999999999999999F1Q1;A", true),
            Err(BulkError::MalformedHeader(_))
        ));
        assert_eq!(decode_bulk("U1F1Q1", true), Err(BulkError::EmptyAnswerList));
        assert_eq!(decode_bulk(EXAMPLE, false), Err(BulkError::DisabledFeature));
    }

    #[test]
    fn semicolon_in_answer() {
        assert_eq!(
            encode_bulk(&rec(1, 1, 1, &["a;b"])),
            Err(BulkError::SemicolonInAnswer(0))
        );
    }
}
