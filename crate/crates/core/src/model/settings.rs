// SPDX-License-Identifier: Apache-2.0

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::QuestionnaireId;
use crate::time::humantime_duration;

pub const DEFAULT_OPT_OUT_CONFIRMATION: &str =
    "You have been unsubscribed and will receive no further questions.";

/// Campaign policy owned by superusers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemSettings {
    pub greeting: Option<String>,
    pub thank_you: Option<String>,
    pub opt_out_keyword: Option<String>,
    /// Sent after an opt-out; [`DEFAULT_OPT_OUT_CONFIRMATION`] when unset.
    pub opt_out_confirmation: Option<String>,
    pub sign_up_keyword: Option<String>,
    pub sign_up_questionnaire_id: Option<QuestionnaireId>,
    pub max_questionnaire_length: u32,
    #[serde(with = "humantime_duration")]
    pub validity_period: Duration,
    pub bulk_encoding_enabled: bool,
    pub combined_sms_enabled: bool,
    pub reprompt_on_parse_failure: bool,
    /// Extra words accepted as "yes" beyond `y`/`yes`.
    pub yes_synonyms: Vec<String>,
    /// Extra words accepted as "no" beyond `n`/`no`.
    pub no_synonyms: Vec<String>,
    /// Words left out of free-text word frequencies.
    pub stop_words: Vec<String>,
}

impl Default for SystemSettings {
    fn default() -> Self {
        SystemSettings {
            greeting: None,
            thank_you: None,
            opt_out_keyword: None,
            opt_out_confirmation: None,
            sign_up_keyword: None,
            sign_up_questionnaire_id: None,
            max_questionnaire_length: 20,
            validity_period: Duration::from_secs(48 * 3600),
            bulk_encoding_enabled: false,
            combined_sms_enabled: false,
            reprompt_on_parse_failure: true,
            yes_synonyms: Vec::new(),
            no_synonyms: Vec::new(),
            stop_words: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SettingsError {
    #[error("opt-out and sign-up keywords must differ")]
    KeywordCollision,
    #[error("keyword {0:?} must be a single token without whitespace or semicolons")]
    InvalidKeyword(String),
    #[error("maximum questionnaire length must be positive")]
    NonPositiveMaxLength,
    #[error("validity period must be positive")]
    ZeroValidity,
    #[error("sign-up questionnaire {0} does not exist")]
    UnknownSignUpQuestionnaire(QuestionnaireId),
}

impl SystemSettings {
    /// The greeting, if configured and non-blank.
    pub fn greeting_text(&self) -> Option<&str> {
        non_blank(self.greeting.as_deref())
    }

    pub fn thank_you_text(&self) -> Option<&str> {
        non_blank(self.thank_you.as_deref())
    }

    pub fn opt_out_confirmation_text(&self) -> &str {
        non_blank(self.opt_out_confirmation.as_deref()).unwrap_or(DEFAULT_OPT_OUT_CONFIRMATION)
    }

    pub fn validate(
        &self,
        questionnaire_exists: impl Fn(QuestionnaireId) -> bool,
    ) -> Result<(), SettingsError> {
        for keyword in [&self.opt_out_keyword, &self.sign_up_keyword]
            .into_iter()
            .flatten()
        {
            let valid =
                !keyword.is_empty() && !keyword.chars().any(|c| c.is_whitespace() || c == ';');
            if !valid {
                return Err(SettingsError::InvalidKeyword(keyword.clone()));
            }
        }
        if let (Some(out), Some(up)) = (&self.opt_out_keyword, &self.sign_up_keyword) {
            if out.to_lowercase() == up.to_lowercase() {
                return Err(SettingsError::KeywordCollision);
            }
        }
        if self.max_questionnaire_length == 0 {
            return Err(SettingsError::NonPositiveMaxLength);
        }
        if self.validity_period.is_zero() {
            return Err(SettingsError::ZeroValidity);
        }
        if let Some(id) = self.sign_up_questionnaire_id {
            if !questionnaire_exists(id) {
                return Err(SettingsError::UnknownSignUpQuestionnaire(id));
            }
        }
        Ok(())
    }
}

fn non_blank(s: Option<&str>) -> Option<&str> {
    s.filter(|s| !s.trim().is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validity_is_two_days() {
        assert_eq!(
            SystemSettings::default().validity_period,
            Duration::from_secs(172_800)
        );
    }

    #[test]
    fn keyword_rules() {
        let mut s = SystemSettings {
            opt_out_keyword: Some("STOP".into()),
            sign_up_keyword: Some("stop".into()),
            ..Default::default()
        };
        assert_eq!(s.validate(|_| true), Err(SettingsError::KeywordCollision));
        s.sign_up_keyword = Some("JOIN US".into());
        assert!(matches!(
            s.validate(|_| true),
            Err(SettingsError::InvalidKeyword(_))
        ));
        s.sign_up_keyword = Some("JOIN;".into());
        assert!(matches!(
            s.validate(|_| true),
            Err(SettingsError::InvalidKeyword(_))
        ));
        s.sign_up_keyword = Some("JOIN".into());
        assert_eq!(s.validate(|_| true), Ok(()));
    }

    #[test]
    fn sign_up_questionnaire_must_exist() {
        let s = SystemSettings {
            sign_up_questionnaire_id: Some(QuestionnaireId(9)),
            ..Default::default()
        };
        assert_eq!(
            s.validate(|id| id.0 == 1),
            Err(SettingsError::UnknownSignUpQuestionnaire(QuestionnaireId(
                9
            )))
        );
        assert_eq!(s.validate(|_| true), Ok(()));
    }

    #[test]
    fn zero_length_rejected() {
        let s = SystemSettings {
            max_questionnaire_length: 0,
            ..Default::default()
        };
        assert_eq!(
            s.validate(|_| true),
            Err(SettingsError::NonPositiveMaxLength)
        );
    }

    #[test]
    fn blank_greeting_is_not_sent() {
        let s = SystemSettings {
            greeting: Some("   ".into()),
            ..Default::default()
        };
        assert_eq!(s.greeting_text(), None);
        assert_eq!(s.opt_out_confirmation_text(), DEFAULT_OPT_OUT_CONFIRMATION);
    }

    #[test]
    fn json_uses_humantime_durations() {
        let json = serde_json::to_value(SystemSettings::default()).unwrap();
        assert_eq!(json["validity_period"], "2days");
        let back: SystemSettings =
            serde_json::from_str(r#"{"validity_period":"36h","combined_sms_enabled":true}"#)
                .unwrap();
        assert_eq!(back.validity_period, Duration::from_secs(36 * 3600));
        assert!(back.combined_sms_enabled);
    }
}
