// SPDX-License-Identifier: Apache-2.0

//! Outbound text. Previews and live sends both go through these functions,
//! so a preview shows exactly the bytes a respondent will receive.

use crate::model::{AnswerOption, Question, QuestionError, ResponseType, SystemSettings};
use crate::transport::SegmentLimits;

/// `A=Everyday, B=Weekly, ...`
pub fn format_options(options: &[AnswerOption]) -> String {
    options
        .iter()
        .map(|o| format!("{}={}", o.code, o.meaning))
        .collect::<Vec<_>>()
        .join(", ")
}

/// The prompt as sent. Categorical options follow the text after a space.
pub fn render_question(question: &Question) -> String {
    match question.response_type {
        ResponseType::Categorical if !question.options.is_empty() => {
            format!(
                "{} {}",
                question.text.trim_end(),
                format_options(&question.options)
            )
        }
        _ => question.text.clone(),
    }
}

/// Rejects prompts too long to send as one (possibly concatenated) message.
pub fn check_prompt(question: &Question, limits: &SegmentLimits) -> Result<(), QuestionError> {
    let len = render_question(question).chars().count();
    let max = limits.max_message_chars();
    if len > max {
        return Err(QuestionError::PromptTooLong { len, max });
    }
    Ok(())
}

/// Messages opening a session: the greeting, if any, then the first
/// question; joined by a newline into one message when combined SMS is on.
pub fn opening_messages(first: &Question, settings: &SystemSettings) -> Vec<String> {
    let question = render_question(first);
    match settings.greeting_text() {
        Some(g) if settings.combined_sms_enabled => vec![format!("{g}\n{question}")],
        Some(g) => vec![g.to_string(), question],
        None => vec![question],
    }
}

/// Every message a fully compliant respondent would receive, in order.
pub fn preview_questionnaire(questions: &[Question], settings: &SystemSettings) -> Vec<String> {
    let Some((first, rest)) = questions.split_first() else {
        return Vec::new();
    };
    let mut out = opening_messages(first, settings);
    out.extend(rest.iter().map(render_question));
    out.extend(settings.thank_you_text().map(str::to_string));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_options, QuestionId};
    use crate::time::Timestamp;

    fn question(text: &str, ty: ResponseType, opts: &[&str]) -> Question {
        let meanings: Vec<String> = opts.iter().map(|s| s.to_string()).collect();
        Question {
            id: QuestionId(1),
            text: text.into(),
            response_type: ty,
            options: build_options(text, ty, (!opts.is_empty()).then_some(&meanings[..])).unwrap(),
            created_at: Timestamp(0),
            version: 1,
        }
    }

    #[test]
    fn stove_prompt() {
        let q = question(
            "How often do you cook on the stove?",
            ResponseType::Categorical,
            &["Everyday", "Weekly", "Monthly", "Never"],
        );
        assert_eq!(
            render_question(&q),
            "How often do you cook on the stove? A=Everyday, B=Weekly, C=Monthly, D=Never"
        );
    }

    #[test]
    fn greeting_combines_only_when_enabled() {
        let q = question("Household size?", ResponseType::Numeric, &[]);
        let mut s = SystemSettings {
            greeting: Some("Hello from GreenCo".into()),
            thank_you: Some("Thanks!".into()),
            ..SystemSettings::default()
        };
        assert_eq!(
            opening_messages(&q, &s),
            vec!["Hello from GreenCo", "Household size?"]
        );
        s.combined_sms_enabled = true;
        assert_eq!(
            opening_messages(&q, &s),
            vec!["Hello from GreenCo\nHousehold size?"]
        );
        let qs = vec![q.clone(), q.clone(), q];
        assert_eq!(
            preview_questionnaire(&qs, &s),
            vec![
                "Hello from GreenCo\nHousehold size?",
                "Household size?",
                "Household size?",
                "Thanks!"
            ]
        );
    }

    #[test]
    fn long_prompts_rejected() {
        let q = question(&"x".repeat(1531), ResponseType::FreeText, &[]);
        assert!(matches!(
            check_prompt(&q, &SegmentLimits::default()),
            Err(QuestionError::PromptTooLong {
                len: 1531,
                max: 1530
            })
        ));
    }
}
