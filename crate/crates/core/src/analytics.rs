// SPDX-License-Identifier: Apache-2.0

//! Dashboard summaries: per-question aggregates, attribute distributions,
//! free-text word frequencies and the send/receive timeline.
//!
//! Everything here is a read over the store. Unparsed answers are always
//! reported as a count of their own.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::filter::{filter_rows, CellValue, ColumnType, FilterError, Predicate, Table};
use crate::model::{format_number, ParsedValue, QuestionId, Response, ResponseType};
use crate::store::{Direction, Store, StoreError};
use crate::time::Timestamp;

/// Histogram resolution for numeric questions.
pub const HISTOGRAM_BUCKETS: usize = 10;

/// Attributes with at most this many distinct values suggest a pie chart.
pub const PIE_MAX_CATEGORIES: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("question {0} not found")]
    UnknownQuestion(QuestionId),
    #[error("no respondent has attribute {0:?}")]
    UnknownAttribute(String),
    #[error("invalid timeline range: {0}")]
    InvalidRange(String),
}

pub type Result<T, E = AnalyticsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub code: char,
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Histogram {
        buckets: Vec<HistogramBucket>,
    },
    CategoryCounts {
        categories: Vec<CategoryCount>,
    },
    YesNoCounts {
        yes: u64,
        no: u64,
    },
    /// Token counts, most frequent first; ties by token.
    WordFrequencies {
        words: Vec<(String, u64)>,
    },
}

impl Distribution {
    pub fn kind(&self) -> &'static str {
        match self {
            Distribution::Histogram { .. } => "histogram",
            Distribution::CategoryCounts { .. } => "category_counts",
            Distribution::YesNoCounts { .. } => "yes_no_counts",
            Distribution::WordFrequencies { .. } => "word_frequencies",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub question_id: QuestionId,
    pub total_responses: u64,
    pub unparsed_count: u64,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Pie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub attribute: String,
    /// Advisory; the dashboard may show another chart.
    pub suggestion: ChartKind,
    pub total: u64,
    /// Value counts ordered by value.
    pub values: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub start: Timestamp,
    pub sent: u64,
    pub received: u64,
}

/// Lowercased alphanumeric runs of at least two characters, minus stop words.
pub fn tokenize<'a>(
    text: &'a str,
    stop_words: &'a BTreeSet<String>,
) -> impl Iterator<Item = String> + 'a {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .filter(move |t| !stop_words.contains(t))
}

fn histogram(values: &[f64]) -> Vec<HistogramBucket> {
    let Some(min) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let max = values.iter().copied().fold(min, f64::max);
    if min == max {
        return vec![HistogramBucket {
            lower: min,
            upper: max,
            count: values.len() as u64,
        }];
    }
    let width = (max - min) / HISTOGRAM_BUCKETS as f64;
    let mut buckets: Vec<HistogramBucket> = (0..HISTOGRAM_BUCKETS)
        .map(|i| HistogramBucket {
            lower: min + width * i as f64,
            upper: if i + 1 == HISTOGRAM_BUCKETS {
                max
            } else {
                min + width * (i + 1) as f64
            },
            count: 0,
        })
        .collect();
    for v in values {
        let idx = (((v - min) / width) as usize).min(HISTOGRAM_BUCKETS - 1);
        buckets[idx].count += 1;
    }
    buckets
}

/// Aggregates the responses to `question` that also satisfy `filter`, a
/// conjunction over the responses table.
pub fn summarize_question(
    store: &Store,
    question: QuestionId,
    filter: &[Predicate],
) -> Result<QuestionSummary> {
    let q = store
        .question(question)?
        .ok_or(AnalyticsError::UnknownQuestion(question))?;
    let mut responses = store.responses_for_question(question)?;
    if !filter.is_empty() {
        let table = store.load_table(Table::Responses)?;
        let keep: BTreeSet<i64> = filter_rows(&table, filter)?
            .into_iter()
            .map(|r| r.id)
            .collect();
        responses.retain(|r| keep.contains(&r.id.0));
    }
    let stop_words: BTreeSet<String> = store
        .settings()?
        .stop_words
        .iter()
        .map(|w| w.to_lowercase())
        .collect();
    Ok(summarize_responses(
        question,
        q.response_type,
        &q.options,
        &responses,
        &stop_words,
    ))
}

fn summarize_responses(
    question: QuestionId,
    ty: ResponseType,
    options: &[crate::model::AnswerOption],
    responses: &[Response],
    stop_words: &BTreeSet<String>,
) -> QuestionSummary {
    let unparsed = responses
        .iter()
        .filter(|r| !r.parsed_value.matches_type(ty) || !r.parsed_value.is_parsed())
        .count() as u64;
    let parsed = || {
        responses
            .iter()
            .map(|r| &r.parsed_value)
            .filter(|v| v.is_parsed() && v.matches_type(ty))
    };
    let distribution = match ty {
        ResponseType::Numeric => {
            let values: Vec<f64> = parsed()
                .filter_map(|v| match v {
                    ParsedValue::Number(n) => Some(*n),
                    _ => None,
                })
                .collect();
            Distribution::Histogram {
                buckets: histogram(&values),
            }
        }
        ResponseType::Categorical => {
            let mut counts: BTreeMap<char, u64> = BTreeMap::new();
            for v in parsed() {
                if let ParsedValue::Code(c) = v {
                    *counts.entry(*c).or_default() += 1;
                }
            }
            let label = |c: char| {
                options
                    .iter()
                    .find(|o| o.code == c)
                    .map_or_else(String::new, |o| o.meaning.clone())
            };
            Distribution::CategoryCounts {
                categories: counts
                    .into_iter()
                    .map(|(code, count)| CategoryCount {
                        code,
                        label: label(code),
                        count,
                    })
                    .collect(),
            }
        }
        ResponseType::YesNo => Distribution::YesNoCounts {
            yes: parsed().filter(|v| **v == ParsedValue::Yes).count() as u64,
            no: parsed().filter(|v| **v == ParsedValue::No).count() as u64,
        },
        ResponseType::FreeText => {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for v in parsed() {
                if let ParsedValue::Text(t) = v {
                    for token in tokenize(t, stop_words) {
                        *counts.entry(token).or_default() += 1;
                    }
                }
            }
            let mut words: Vec<(String, u64)> = counts.into_iter().collect();
            words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            Distribution::WordFrequencies { words }
        }
    };
    QuestionSummary {
        question_id: question,
        total_responses: responses.len() as u64,
        unparsed_count: unparsed,
        distribution,
    }
}

/// Value counts of one respondent attribute across all profiles that have it.
pub fn summarize_attribute(store: &Store, attribute: &str) -> Result<AttributeSummary> {
    let users = store.load_table(Table::Users)?;
    let column = users
        .column(attribute)
        .filter(|c| {
            !crate::model::PROTECTED_FIELDS.contains(&c.name.as_str()) && c.name != "needs_review"
        })
        .ok_or_else(|| AnalyticsError::UnknownAttribute(attribute.to_string()))?
        .clone();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0;
    for row in &users.rows {
        let cell = row.get(attribute);
        if *cell == CellValue::Null {
            continue;
        }
        total += 1;
        *counts.entry(cell.render()).or_default() += 1;
    }
    if total == 0 {
        return Err(AnalyticsError::UnknownAttribute(attribute.to_string()));
    }
    let suggestion = if counts.len() <= PIE_MAX_CATEGORIES && column.ty != ColumnType::Number {
        ChartKind::Pie
    } else {
        ChartKind::Bar
    };
    Ok(AttributeSummary {
        attribute: attribute.to_string(),
        suggestion,
        total,
        values: counts.into_iter().collect(),
    })
}

/// Sent and received ledger counts per bucket over `[from, to)`. Buckets
/// start at `from` and are contiguous; the last one may run past `to`.
pub fn timeline(
    store: &Store,
    from: Timestamp,
    to: Timestamp,
    bucket: Duration,
) -> Result<Vec<TimelinePoint>> {
    let width = bucket.as_millis() as i64;
    if width <= 0 {
        return Err(AnalyticsError::InvalidRange(
            "bucket size must be positive".into(),
        ));
    }
    if to <= from {
        return Err(AnalyticsError::InvalidRange(format!(
            "{to} is not after {from}"
        )));
    }
    let span = to.0 - from.0;
    let n = (span + width - 1) / width;
    let mut points: Vec<TimelinePoint> = (0..n)
        .map(|i| TimelinePoint {
            start: Timestamp(from.0 + i * width),
            sent: 0,
            received: 0,
        })
        .collect();
    for record in store.sms_log_between(from, to)? {
        let idx = ((record.recorded_at.0 - from.0) / width) as usize;
        match record.direction {
            Direction::Outbound => points[idx].sent += 1,
            Direction::Inbound => points[idx].received += 1,
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SummaryTarget {
    Question { question_id: QuestionId },
    Attribute { attribute: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub key: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub count: u64,
}

/// The exported summary document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub target: SummaryTarget,
    pub kind: String,
    pub generated_at: Timestamp,
    pub total: u64,
    pub unparsed: u64,
    pub entries: Vec<SummaryEntry>,
}

fn sort_entries(entries: &mut [SummaryEntry]) {
    entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.key.cmp(&b.key)));
}

impl SummaryDocument {
    pub fn from_question(summary: &QuestionSummary, generated_at: Timestamp) -> SummaryDocument {
        let entry = |key: String, label: Option<String>, count| SummaryEntry { key, label, count };
        let mut entries: Vec<SummaryEntry> = match &summary.distribution {
            Distribution::Histogram { buckets } => buckets
                .iter()
                .map(|b| {
                    entry(
                        format!("{}..{}", format_number(b.lower), format_number(b.upper)),
                        None,
                        b.count,
                    )
                })
                .collect(),
            Distribution::CategoryCounts { categories } => categories
                .iter()
                .map(|c| entry(c.code.to_string(), Some(c.label.clone()), c.count))
                .collect(),
            Distribution::YesNoCounts { yes, no } => {
                vec![
                    entry("yes".into(), None, *yes),
                    entry("no".into(), None, *no),
                ]
            }
            Distribution::WordFrequencies { words } => words
                .iter()
                .map(|(w, c)| entry(w.clone(), None, *c))
                .collect(),
        };
        sort_entries(&mut entries);
        SummaryDocument {
            target: SummaryTarget::Question {
                question_id: summary.question_id,
            },
            kind: summary.distribution.kind().to_string(),
            generated_at,
            total: summary.total_responses,
            unparsed: summary.unparsed_count,
            entries,
        }
    }

    pub fn from_attribute(summary: &AttributeSummary, generated_at: Timestamp) -> SummaryDocument {
        let mut entries: Vec<SummaryEntry> = summary
            .values
            .iter()
            .map(|(v, c)| SummaryEntry {
                key: v.clone(),
                label: None,
                count: *c,
            })
            .collect();
        sort_entries(&mut entries);
        let kind = match summary.suggestion {
            ChartKind::Bar => "attribute_bar",
            ChartKind::Pie => "attribute_pie",
        };
        SummaryDocument {
            target: SummaryTarget::Attribute {
                attribute: summary.attribute.clone(),
            },
            kind: kind.to_string(),
            generated_at,
            total: summary.total,
            unparsed: 0,
            entries,
        }
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

/// Builds the summary document for `target`.
pub fn export_summary_json(
    store: &Store,
    target: &SummaryTarget,
    generated_at: Timestamp,
) -> Result<SummaryDocument> {
    match target {
        SummaryTarget::Question { question_id } => Ok(SummaryDocument::from_question(
            &summarize_question(store, *question_id, &[])?,
            generated_at,
        )),
        SummaryTarget::Attribute { attribute } => Ok(SummaryDocument::from_attribute(
            &summarize_attribute(store, attribute)?,
            generated_at,
        )),
    }
}
