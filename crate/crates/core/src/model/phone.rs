// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A phone number in canonical E.164 form (`+` followed by 7 to 15 digits).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Phone(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PhoneError {
    #[error("phone number is empty")]
    Empty,
    #[error("phone number {0:?} has no international prefix")]
    MissingCountryCode(String),
    #[error("phone number contains invalid character {0:?}")]
    InvalidCharacter(char),
    #[error("phone number has {0} digits, expected 7 to 15")]
    BadLength(usize),
    #[error("country code cannot start with 0")]
    LeadingZero,
}

impl Phone {
    /// Canonicalises `raw`. Spaces, dashes, dots, slashes and parentheses are
    /// dropped and a leading `00` is read as `+`.
    pub fn parse(raw: &str) -> Result<Phone, PhoneError> {
        let compact: String = raw
            .trim()
            .chars()
            .filter(|c| !matches!(c, ' ' | '-' | '.' | '/' | '(' | ')' | '\t'))
            .collect();
        if compact.is_empty() {
            return Err(PhoneError::Empty);
        }
        let digits = if let Some(rest) = compact.strip_prefix('+') {
            rest
        } else if let Some(rest) = compact.strip_prefix("00") {
            rest
        } else {
            return Err(PhoneError::MissingCountryCode(raw.to_string()));
        };
        if let Some(bad) = digits.chars().find(|c| !c.is_ascii_digit()) {
            return Err(PhoneError::InvalidCharacter(bad));
        }
        if !(7..=15).contains(&digits.len()) {
            return Err(PhoneError::BadLength(digits.len()));
        }
        if digits.starts_with('0') {
            return Err(PhoneError::LeadingZero);
        }
        Ok(Phone(format!("+{digits}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Phone {
    type Err = PhoneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phone::parse(s)
    }
}

impl Serialize for Phone {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Phone {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Phone::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_forms_agree() {
        let a = Phone::parse("+291 7 123 456").unwrap();
        let b = Phone::parse("00291-7-123-456").unwrap();
        let c = Phone::parse("(+291) 7123456").unwrap();
        assert_eq!(a.as_str(), "+2917123456");
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn rejects_bad_numbers() {
        assert_eq!(Phone::parse("  "), Err(PhoneError::Empty));
        assert!(matches!(
            Phone::parse("07123456789"),
            Err(PhoneError::MissingCountryCode(_))
        ));
        assert_eq!(
            Phone::parse("+44abc1234"),
            Err(PhoneError::InvalidCharacter('a'))
        );
        assert_eq!(Phone::parse("+123"), Err(PhoneError::BadLength(3)));
        assert_eq!(Phone::parse("+0123456789"), Err(PhoneError::LeadingZero));
    }
}
