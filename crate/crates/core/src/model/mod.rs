// SPDX-License-Identifier: Apache-2.0

//! Persistent vocabulary: questions, questionnaires, respondents, groups,
//! responses, staff and settings, together with their validation rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

pub mod filter;
mod phone;
mod settings;

pub use phone::{Phone, PhoneError};
pub use settings::{SettingsError, SystemSettings, DEFAULT_OPT_OUT_CONFIRMATION};

macro_rules! id_type {
    ($($name:ident),* $(,)?) => {$(
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub i64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    )*};
}

id_type!(
    QuestionId,
    QuestionnaireId,
    RespondentId,
    GroupId,
    ResponseId,
    SessionId,
    StaffId
);

/// Options beyond `Z` cannot be given a letter code.
pub const MAX_OPTIONS: usize = 26;

/// Attribute names that address fixed respondent columns.
pub const PROTECTED_FIELDS: &[&str] = &[
    "id",
    "phone",
    "created_at",
    "last_edit",
    "active",
    "needs_review",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Numeric,
    FreeText,
    Categorical,
    YesNo,
}

impl ResponseType {
    pub const ALL: [ResponseType; 4] = [
        ResponseType::Numeric,
        ResponseType::FreeText,
        ResponseType::Categorical,
        ResponseType::YesNo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseType::Numeric => "numeric",
            ResponseType::FreeText => "free_text",
            ResponseType::Categorical => "categorical",
            ResponseType::YesNo => "yes_no",
        }
    }
}

impl fmt::Display for ResponseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown response type {0:?}")]
pub struct UnknownResponseType(pub String);

impl FromStr for ResponseType {
    type Err = UnknownResponseType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "numeric" | "number" | "numerical" => Ok(ResponseType::Numeric),
            "free_text" | "text" => Ok(ResponseType::FreeText),
            "categorical" | "options" => Ok(ResponseType::Categorical),
            "yes_no" | "yesno" => Ok(ResponseType::YesNo),
            _ => Err(UnknownResponseType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub code: char,
    pub meaning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    pub response_type: ResponseType,
    pub options: Vec<AnswerOption>,
    pub created_at: Timestamp,
    pub version: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuestionError {
    #[error("question text is empty")]
    EmptyText,
    #[error("categorical questions need answer options")]
    OptionsRequired,
    #[error("only categorical questions take answer options")]
    UnexpectedOptions,
    #[error("categorical questions need at least two options")]
    TooFewOptions,
    #[error("at most {MAX_OPTIONS} options can be coded A-Z, got {0}")]
    TooManyOptions(usize),
    #[error("option meanings must be non-empty")]
    EmptyMeaning,
    #[error("option meaning {0:?} is given twice")]
    DuplicateMeaning(String),
    #[error("option meaning {0:?} reads as another option's code")]
    AmbiguousMeaning(String),
    #[error("rendered prompt is {len} characters, the limit is {max}")]
    PromptTooLong { len: usize, max: usize },
}

/// Validates question content and assigns option codes A, B, C, ... in order.
pub fn build_options(
    text: &str,
    response_type: ResponseType,
    meanings: Option<&[String]>,
) -> Result<Vec<AnswerOption>, QuestionError> {
    if text.trim().is_empty() {
        return Err(QuestionError::EmptyText);
    }
    let meanings = match (response_type, meanings) {
        (ResponseType::Categorical, None) => return Err(QuestionError::OptionsRequired),
        (ResponseType::Categorical, Some(m)) => m,
        (_, Some(m)) if !m.is_empty() => return Err(QuestionError::UnexpectedOptions),
        (_, _) => return Ok(Vec::new()),
    };
    if meanings.is_empty() {
        return Err(QuestionError::OptionsRequired);
    }
    if meanings.len() < 2 {
        return Err(QuestionError::TooFewOptions);
    }
    if meanings.len() > MAX_OPTIONS {
        return Err(QuestionError::TooManyOptions(meanings.len()));
    }
    let mut seen = BTreeSet::new();
    let mut options = Vec::with_capacity(meanings.len());
    for (i, meaning) in meanings.iter().enumerate() {
        let meaning = meaning.trim();
        let key = crate::parse::strip_edges(meaning).to_lowercase();
        if key.is_empty() {
            return Err(QuestionError::EmptyMeaning);
        }
        if !seen.insert(key) {
            return Err(QuestionError::DuplicateMeaning(meaning.to_string()));
        }
        options.push(AnswerOption {
            code: option_code(i),
            meaning: meaning.to_string(),
        });
    }
    // A meaning that strips to a single letter would shadow that letter's code.
    for opt in &options {
        let key = crate::parse::strip_edges(&opt.meaning).to_ascii_uppercase();
        let mut chars = key.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c != opt.code && options.iter().any(|o| o.code == c) {
                return Err(QuestionError::AmbiguousMeaning(opt.meaning.clone()));
            }
        }
    }
    Ok(options)
}

/// Letter code of the option at zero-based `index`.
pub fn option_code(index: usize) -> char {
    (b'A' + index as u8) as char
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub id: QuestionnaireId,
    pub name: String,
    pub question_ids: Vec<QuestionId>,
    pub created_at: Timestamp,
}

impl Questionnaire {
    pub fn len(&self) -> usize {
        self.question_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.question_ids.is_empty()
    }

    /// Question at 1-based `ordinal`.
    pub fn question_at(&self, ordinal: u32) -> Option<QuestionId> {
        (ordinal as usize)
            .checked_sub(1)
            .and_then(|i| self.question_ids.get(i))
            .copied()
    }

    pub fn ordinal_of(&self, question: QuestionId) -> Option<u32> {
        self.question_ids
            .iter()
            .position(|q| *q == question)
            .map(|i| i as u32 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuestionnaireError {
    #[error("questionnaire name is empty")]
    EmptyName,
    #[error("questionnaire has no questions")]
    Empty,
    #[error("questionnaire has {len} questions, the maximum is {max}")]
    ExceedsMaxLength { len: usize, max: u32 },
    #[error("question {0} appears twice")]
    DuplicateQuestion(QuestionId),
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
}

pub fn validate_questionnaire(
    name: &str,
    question_ids: &[QuestionId],
    max_len: u32,
    question_exists: impl Fn(QuestionId) -> bool,
) -> Result<(), QuestionnaireError> {
    if name.trim().is_empty() {
        return Err(QuestionnaireError::EmptyName);
    }
    if question_ids.is_empty() {
        return Err(QuestionnaireError::Empty);
    }
    if question_ids.len() > max_len as usize {
        return Err(QuestionnaireError::ExceedsMaxLength {
            len: question_ids.len(),
            max: max_len,
        });
    }
    let mut seen = BTreeSet::new();
    for id in question_ids {
        if !seen.insert(*id) {
            return Err(QuestionnaireError::DuplicateQuestion(*id));
        }
    }
    if let Some(missing) = question_ids.iter().find(|id| !question_exists(**id)) {
        return Err(QuestionnaireError::UnknownQuestion(*missing));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Respondent {
    pub id: RespondentId,
    pub phone: Phone,
    pub created_at: Timestamp,
    pub last_edit: Timestamp,
    pub active: bool,
    /// Set on profiles created implicitly by a CSV import.
    pub needs_review: bool,
    pub attributes: BTreeMap<String, String>,
    pub version: i64,
}

impl Respondent {
    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    /// Enumerators are marked by the custom attribute `staff = "true"`.
    pub fn is_staff(&self) -> bool {
        self.attribute("staff")
            .is_some_and(|v| v.trim().eq_ignore_ascii_case("true"))
    }
}

/// Next `last_edit` value: `now`, but always strictly after `previous`.
pub fn bump_last_edit(previous: Timestamp, now: Timestamp) -> Timestamp {
    if now > previous {
        now
    } else {
        Timestamp(previous.0 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttributeError {
    #[error("{0:?} is a protected profile field")]
    ProtectedField(String),
    #[error("attribute name {0:?} must be non-empty letters, digits or underscores")]
    InvalidName(String),
}

pub fn validate_attribute_name(name: &str) -> Result<(), AttributeError> {
    if PROTECTED_FIELDS
        .iter()
        .any(|p| p.eq_ignore_ascii_case(name.trim()))
    {
        return Err(AttributeError::ProtectedField(name.to_string()));
    }
    let valid = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    if valid {
        Ok(())
    } else {
        Err(AttributeError::InvalidName(name.to_string()))
    }
}

/// Optional type hint on a custom attribute, used for filtering and chart
/// suggestions only. Values are always stored as strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeHint {
    #[default]
    String,
    Number,
    Date,
}

impl AttributeHint {
    pub fn as_str(self) -> &'static str {
        match self {
            AttributeHint::String => "string",
            AttributeHint::Number => "number",
            AttributeHint::Date => "date",
        }
    }
}

impl FromStr for AttributeHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "string" => Ok(AttributeHint::String),
            "number" => Ok(AttributeHint::Number),
            "date" => Ok(AttributeHint::Date),
            other => Err(format!("unknown attribute hint {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserGroup {
    pub id: GroupId,
    pub name: String,
    pub member_ids: BTreeSet<RespondentId>,
}

/// A normalised answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParsedValue {
    Code(char),
    Number(f64),
    Yes,
    No,
    Text(String),
    Unparsed,
}

impl ParsedValue {
    pub fn kind(&self) -> &'static str {
        match self {
            ParsedValue::Code(_) => "code",
            ParsedValue::Number(_) => "number",
            ParsedValue::Yes => "yes",
            ParsedValue::No => "no",
            ParsedValue::Text(_) => "text",
            ParsedValue::Unparsed => "unparsed",
        }
    }

    /// Canonical rendering; empty for `Unparsed`.
    pub fn render(&self) -> String {
        match self {
            ParsedValue::Code(c) => c.to_string(),
            ParsedValue::Number(n) => format_number(*n),
            ParsedValue::Yes => "yes".into(),
            ParsedValue::No => "no".into(),
            ParsedValue::Text(t) => t.clone(),
            ParsedValue::Unparsed => String::new(),
        }
    }

    /// Rebuilds a value from its `kind()` and `render()` forms.
    pub fn from_parts(kind: &str, value: &str) -> Option<ParsedValue> {
        Some(match kind {
            "code" => ParsedValue::Code(value.chars().next()?),
            "number" => ParsedValue::Number(value.parse().ok()?),
            "yes" => ParsedValue::Yes,
            "no" => ParsedValue::No,
            "text" => ParsedValue::Text(value.to_string()),
            "unparsed" => ParsedValue::Unparsed,
            _ => return None,
        })
    }

    pub fn matches_type(&self, ty: ResponseType) -> bool {
        matches!(
            (self, ty),
            (ParsedValue::Unparsed, _)
                | (ParsedValue::Code(_), ResponseType::Categorical)
                | (ParsedValue::Number(_), ResponseType::Numeric)
                | (ParsedValue::Yes | ParsedValue::No, ResponseType::YesNo)
                | (ParsedValue::Text(_), ResponseType::FreeText)
        )
    }

    pub fn is_parsed(&self) -> bool {
        !matches!(self, ParsedValue::Unparsed)
    }
}

/// Shortest decimal form that reads back to the same value.
pub fn format_number(n: f64) -> String {
    if n == 0.0 {
        // -0 and 0 render alike
        return "0".into();
    }
    format!("{n}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    SmsDirect,
    BulkEnumerator,
    CsvImport,
}

impl ResponseSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseSource::SmsDirect => "sms_direct",
            ResponseSource::BulkEnumerator => "bulk_enumerator",
            ResponseSource::CsvImport => "csv_import",
        }
    }
}

impl FromStr for ResponseSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sms_direct" => Ok(ResponseSource::SmsDirect),
            "bulk_enumerator" => Ok(ResponseSource::BulkEnumerator),
            "csv_import" => Ok(ResponseSource::CsvImport),
            other => Err(format!("unknown response source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: ResponseId,
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

/// Staff access levels, weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessLevel {
    ReadOnly,
    Add,
    Edit,
    Send,
    Superuser,
}

impl AccessLevel {
    pub const ALL: [AccessLevel; 5] = [
        AccessLevel::ReadOnly,
        AccessLevel::Add,
        AccessLevel::Edit,
        AccessLevel::Send,
        AccessLevel::Superuser,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessLevel::ReadOnly => "read_only",
            AccessLevel::Add => "add",
            AccessLevel::Edit => "edit",
            AccessLevel::Send => "send",
            AccessLevel::Superuser => "superuser",
        }
    }
}

impl FromStr for AccessLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AccessLevel::ALL
            .into_iter()
            .find(|l| l.as_str() == s.trim().to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| format!("unknown access level {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaffAccount {
    pub id: StaffId,
    pub name: String,
    #[serde(skip)]
    pub credential_hash: String,
    pub access_level: AccessLevel,
    pub active: bool,
}
