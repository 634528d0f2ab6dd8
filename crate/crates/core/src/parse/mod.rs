// SPDX-License-Identifier: Apache-2.0

//! Answer normalisation against a question's response contract.
//!
//! All normalisers are total: malformed input yields
//! [`ParseOutcome::Failed`], never an error.

use serde::{Deserialize, Serialize};

use crate::model::{AnswerOption, ParsedValue, Question, ResponseType, SystemSettings};

pub mod bulk;

pub use bulk::{decode_bulk, encode_bulk, BulkError, BulkRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ParseOutcome {
    Ok { value: ParsedValue },
    Failed { reason: String },
}

impl ParseOutcome {
    fn ok(value: ParsedValue) -> Self {
        ParseOutcome::Ok { value }
    }

    fn failed(reason: impl Into<String>) -> Self {
        ParseOutcome::Failed {
            reason: reason.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ParseOutcome::Ok { .. })
    }

    /// The parsed value, or `Unparsed` on failure.
    pub fn into_value(self) -> ParsedValue {
        match self {
            ParseOutcome::Ok { value } => value,
            ParseOutcome::Failed { .. } => ParsedValue::Unparsed,
        }
    }
}

fn is_edge_junk(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation()
}

/// Removes leading and trailing whitespace and ASCII punctuation.
pub fn strip_edges(raw: &str) -> &str {
    raw.trim_matches(is_edge_junk)
}

pub fn normalize_categorical(raw: &str, options: &[AnswerOption]) -> ParseOutcome {
    let answer = strip_edges(raw).to_lowercase();
    if answer.is_empty() {
        return ParseOutcome::failed("empty answer");
    }
    let mut chars = answer.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(opt) = options
            .iter()
            .find(|o| o.code.to_lowercase().eq(c.to_lowercase()))
        {
            return ParseOutcome::ok(ParsedValue::Code(opt.code));
        }
    }
    match options
        .iter()
        .find(|o| strip_edges(&o.meaning).to_lowercase() == answer)
    {
        Some(opt) => ParseOutcome::ok(ParsedValue::Code(opt.code)),
        None => ParseOutcome::failed(format!("{:?} matches no option", strip_edges(raw))),
    }
}

/// Accepts an optional sign, digits and at most one decimal point. No number
/// words, exponents or thousands separators.
pub fn normalize_numeric(raw: &str) -> ParseOutcome {
    let s = raw
        .trim_end_matches(is_edge_junk)
        .trim_start_matches(|c: char| is_edge_junk(c) && !matches!(c, '+' | '-' | '.'));
    let unsigned = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = unsigned.split_once('.').unwrap_or((unsigned, ""));
    let digits_only = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    let well_formed = !(int.is_empty() && frac.is_empty()) && digits_only(int) && digits_only(frac);
    if !well_formed {
        return ParseOutcome::failed(format!("{:?} is not a number", raw.trim()));
    }
    match s.parse::<f64>() {
        Ok(n) if n.is_finite() => {
            ParseOutcome::ok(ParsedValue::Number(if n == 0.0 { 0.0 } else { n }))
        }
        _ => ParseOutcome::failed(format!("{:?} is out of range", raw.trim())),
    }
}

/// Words accepted for yes/no questions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct YesNoVocabulary {
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

impl YesNoVocabulary {
    pub fn from_settings(settings: &SystemSettings) -> Self {
        YesNoVocabulary {
            yes: settings.yes_synonyms.clone(),
            no: settings.no_synonyms.clone(),
        }
    }
}

pub fn normalize_yes_no(raw: &str, vocabulary: &YesNoVocabulary) -> ParseOutcome {
    let answer = strip_edges(raw).to_lowercase();
    let hit = |builtin: &[&str], extra: &[String]| {
        builtin.contains(&answer.as_str())
            || extra
                .iter()
                .any(|w| strip_edges(w).to_lowercase() == answer)
    };
    if hit(&["y", "yes"], &vocabulary.yes) {
        ParseOutcome::ok(ParsedValue::Yes)
    } else if hit(&["n", "no"], &vocabulary.no) {
        ParseOutcome::ok(ParsedValue::No)
    } else {
        ParseOutcome::failed(format!("{:?} is neither yes nor no", strip_edges(raw)))
    }
}

/// Free text keeps its internal punctuation; only the edges are stripped.
pub fn normalize_free_text(raw: &str) -> ParseOutcome {
    let text = strip_edges(raw);
    if text.is_empty() {
        ParseOutcome::failed("empty answer")
    } else {
        ParseOutcome::ok(ParsedValue::Text(text.to_string()))
    }
}

/// Parses `raw` under `question`'s response type.
pub fn parse_answer(question: &Question, raw: &str, vocabulary: &YesNoVocabulary) -> ParseOutcome {
    match question.response_type {
        ResponseType::Categorical => normalize_categorical(raw, &question.options),
        ResponseType::Numeric => normalize_numeric(raw),
        ResponseType::YesNo => normalize_yes_no(raw, vocabulary),
        ResponseType::FreeText => normalize_free_text(raw),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sanitized {
    pub text: String,
    pub truncated: bool,
}

/// Drops control characters (other than newline and tab) and caps the
/// length at `max_chars` characters.
///
/// Stored values are still bound through statement parameters; this only
/// bounds what reaches the store.
pub fn sanitize_input(raw: &str, max_chars: usize) -> Sanitized {
    let mut text = String::with_capacity(raw.len().min(max_chars * 4));
    let mut kept = 0;
    let mut truncated = false;
    for c in raw.chars() {
        if c.is_control() && c != '\n' && c != '\t' {
            continue;
        }
        if kept == max_chars {
            truncated = true;
            break;
        }
        text.push(c);
        kept += 1;
    }
    Sanitized { text, truncated }
}
