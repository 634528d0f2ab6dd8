// SPDX-License-Identifier: Apache-2.0

//! Tabular views of the store and conjunctive row filtering.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::format_number;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Users,
    Questions,
    Questionnaires,
    Groups,
    Responses,
    SmsLog,
    Staff,
}

impl Table {
    pub const ALL: [Table; 7] = [
        Table::Users,
        Table::Questions,
        Table::Questionnaires,
        Table::Groups,
        Table::Responses,
        Table::SmsLog,
        Table::Staff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::Users => "users",
            Table::Questions => "questions",
            Table::Questionnaires => "questionnaires",
            Table::Groups => "groups",
            Table::Responses => "responses",
            Table::SmsLog => "sms_log",
            Table::Staff => "staff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown table {0:?}")]
pub struct UnknownTable(pub String);

impl FromStr for Table {
    type Err = UnknownTable;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let norm = match norm.as_str() {
            "respondents" => "users",
            "sms" | "ledger" => "sms_log",
            other => other,
        }
        .to_string();
        Table::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| UnknownTable(s.to_string()))
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Text,
    Number,
    Date,
    Timestamp,
    Bool,
}

impl ColumnType {
    fn is_ordered(self) -> bool {
        matches!(
            self,
            ColumnType::Number | ColumnType::Date | ColumnType::Timestamp
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Text(String),
    Number(f64),
    Date(NaiveDate),
    Timestamp(Timestamp),
    Bool(bool),
    Null,
}

impl CellValue {
    /// Interprets a stored string under a column type; unreadable values
    /// become `Null`.
    pub fn from_typed_str(ty: ColumnType, raw: &str) -> CellValue {
        match ty {
            ColumnType::Text => CellValue::Text(raw.to_string()),
            ColumnType::Number => raw
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|n| n.is_finite())
                .map_or(CellValue::Null, CellValue::Number),
            ColumnType::Date => NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
                .map_or(CellValue::Null, CellValue::Date),
            ColumnType::Timestamp => raw
                .parse::<Timestamp>()
                .map_or(CellValue::Null, CellValue::Timestamp),
            ColumnType::Bool => match raw.trim().to_ascii_lowercase().as_str() {
                "true" | "1" => CellValue::Bool(true),
                "false" | "0" => CellValue::Bool(false),
                _ => CellValue::Null,
            },
        }
    }

    pub fn render(&self) -> String {
        match self {
            CellValue::Text(s) => s.clone(),
            CellValue::Number(n) => format_number(*n),
            CellValue::Date(d) => d.format("%Y-%m-%d").to_string(),
            CellValue::Timestamp(t) => t.to_rfc3339(),
            CellValue::Bool(b) => b.to_string(),
            CellValue::Null => String::new(),
        }
    }

    fn compare(&self, other: &CellValue) -> Option<Ordering> {
        match (self, other) {
            (CellValue::Number(a), CellValue::Number(b)) => a.partial_cmp(b),
            (CellValue::Date(a), CellValue::Date(b)) => Some(a.cmp(b)),
            (CellValue::Timestamp(a), CellValue::Timestamp(b)) => Some(a.cmp(b)),
            (CellValue::Text(a), CellValue::Text(b)) => Some(a.cmp(b)),
            (CellValue::Bool(a), CellValue::Bool(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

impl Serialize for CellValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CellValue::Number(n) => serializer.serialize_f64(*n),
            CellValue::Bool(b) => serializer.serialize_bool(*b),
            CellValue::Null => serializer.serialize_none(),
            other => serializer.serialize_str(&other.render()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub id: i64,
    pub cells: BTreeMap<String, CellValue>,
}

impl Row {
    pub fn get(&self, column: &str) -> &CellValue {
        self.cells.get(column).unwrap_or(&CellValue::Null)
    }
}

/// A materialised table: column schema plus rows ordered by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableData {
    pub table: Table,
    pub columns: Vec<Column>,
    pub rows: Vec<Row>,
}

impl TableData {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Comparator {
    Equals {
        value: String,
    },
    Contains {
        value: String,
    },
    Lt {
        value: String,
    },
    Gt {
        value: String,
    },
    /// Inclusive on both ends.
    Range {
        min: String,
        max: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    #[serde(flatten)]
    pub cmp: Comparator,
}

impl Predicate {
    pub fn equals(column: &str, value: &str) -> Self {
        Predicate {
            column: column.into(),
            cmp: Comparator::Equals {
                value: value.into(),
            },
        }
    }

    pub fn contains(column: &str, value: &str) -> Self {
        Predicate {
            column: column.into(),
            cmp: Comparator::Contains {
                value: value.into(),
            },
        }
    }

    pub fn lt(column: &str, value: &str) -> Self {
        Predicate {
            column: column.into(),
            cmp: Comparator::Lt {
                value: value.into(),
            },
        }
    }

    pub fn gt(column: &str, value: &str) -> Self {
        Predicate {
            column: column.into(),
            cmp: Comparator::Gt {
                value: value.into(),
            },
        }
    }

    pub fn range(column: &str, min: &str, max: &str) -> Self {
        Predicate {
            column: column.into(),
            cmp: Comparator::Range {
                min: min.into(),
                max: max.into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FilterError {
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("cannot apply {op} to {column:?} of type {ty:?}")]
    TypeMismatch {
        column: String,
        op: &'static str,
        ty: ColumnType,
    },
    #[error("value {value:?} is not a valid {ty:?} for column {column:?}")]
    BadValue {
        column: String,
        value: String,
        ty: ColumnType,
    },
    #[error("cannot parse filter {0:?}; expected col=v, col~v, col<v, col>v or col:lo..hi")]
    Syntax(String),
}

/// Parses the CLI form: `col=v`, `col~v` (contains), `col<v`, `col>v`,
/// `col:lo..hi` (inclusive range).
impl FromStr for Predicate {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let split = s
            .find(['=', '~', '<', '>', ':'])
            .ok_or_else(|| FilterError::Syntax(s.to_string()))?;
        let column = s[..split].trim();
        if column.is_empty() {
            return Err(FilterError::Syntax(s.to_string()));
        }
        let value = &s[split + 1..];
        let pred = match &s[split..=split] {
            "=" => Predicate::equals(column, value),
            "~" => Predicate::contains(column, value),
            "<" => Predicate::lt(column, value),
            ">" => Predicate::gt(column, value),
            _ => {
                let (min, max) = value
                    .split_once("..")
                    .ok_or_else(|| FilterError::Syntax(s.to_string()))?;
                Predicate::range(column, min, max)
            }
        };
        Ok(pred)
    }
}

enum Compiled {
    Equals(CellValue),
    Contains(String),
    Lt(CellValue),
    Gt(CellValue),
    Range(CellValue, CellValue),
}

fn compile(table: &TableData, pred: &Predicate) -> Result<(String, Compiled), FilterError> {
    let col = table
        .column(&pred.column)
        .ok_or_else(|| FilterError::UnknownColumn(pred.column.clone()))?;
    let mismatch = |op| FilterError::TypeMismatch {
        column: col.name.clone(),
        op,
        ty: col.ty,
    };
    let value = |raw: &str| match CellValue::from_typed_str(col.ty, raw) {
        CellValue::Null => Err(FilterError::BadValue {
            column: col.name.clone(),
            value: raw.to_string(),
            ty: col.ty,
        }),
        v => Ok(v),
    };
    let compiled = match &pred.cmp {
        Comparator::Equals { value: v } => Compiled::Equals(value(v)?),
        Comparator::Contains { value: v } => {
            if col.ty != ColumnType::Text {
                return Err(mismatch("contains"));
            }
            Compiled::Contains(v.to_lowercase())
        }
        Comparator::Lt { value: v } => {
            if !col.ty.is_ordered() {
                return Err(mismatch("<"));
            }
            Compiled::Lt(value(v)?)
        }
        Comparator::Gt { value: v } => {
            if !col.ty.is_ordered() {
                return Err(mismatch(">"));
            }
            Compiled::Gt(value(v)?)
        }
        Comparator::Range { min, max } => {
            if !col.ty.is_ordered() {
                return Err(mismatch("range"));
            }
            Compiled::Range(value(min)?, value(max)?)
        }
    };
    Ok((col.name.clone(), compiled))
}

fn matches(cell: &CellValue, cmp: &Compiled) -> bool {
    if *cell == CellValue::Null {
        return false;
    }
    match cmp {
        Compiled::Equals(v) => cell.compare(v) == Some(Ordering::Equal),
        Compiled::Contains(needle) => cell.render().to_lowercase().contains(needle.as_str()),
        Compiled::Lt(v) => cell.compare(v) == Some(Ordering::Less),
        Compiled::Gt(v) => cell.compare(v) == Some(Ordering::Greater),
        Compiled::Range(lo, hi) => {
            matches!(cell.compare(lo), Some(Ordering::Greater | Ordering::Equal))
                && matches!(cell.compare(hi), Some(Ordering::Less | Ordering::Equal))
        }
    }
}

/// Rows satisfying every predicate. All predicates are checked against the
/// schema before any row is examined.
pub fn filter_rows(table: &TableData, predicates: &[Predicate]) -> Result<Vec<Row>, FilterError> {
    let compiled = predicates
        .iter()
        .map(|p| compile(table, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(table
        .rows
        .iter()
        .filter(|row| compiled.iter().all(|(col, c)| matches(row.get(col), c)))
        .cloned()
        .collect())
}
