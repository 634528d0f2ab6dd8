// SPDX-License-Identifier: Apache-2.0

//! The per-respondent questionnaire state machine.
//!
//! ```text
//! greeting_sent ──► awaiting_answer(1) ──► … ──► awaiting_answer(n) ──► completed
//!        │                  │                          │
//!        └──────────────────┴──────► opted_out / expired ◄┘
//! ```
//!
//! A session only moves forward when an answer to the question it is
//! waiting on has been stored, so question k+1 is never sent before an
//! answer to question k. Terminal states never change.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::model::{
    GroupId, ParsedValue, Phone, Question, QuestionId, Questionnaire, QuestionnaireId, Respondent,
    RespondentId, Response, ResponseId, ResponseSource, SessionId, StaffId, SystemSettings,
};
use crate::parse::{decode_bulk, parse_answer, sanitize_input, strip_edges, YesNoVocabulary};
use crate::render::{opening_messages, render_question};
use crate::store::{Direction, NewResponse, NewSms, Store, StoreError};
use crate::time::{Clock, Timestamp};
use crate::transport::{
    segment_message, DeliveryReceipt, Gateway, MessageId, ReassemblyBuffer, ReassemblyError,
    RegionMap, Segment, SegmentLimits, TransportError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", content = "ordinal", rename_all = "snake_case")]
pub enum SessionState {
    GreetingSent,
    /// 1-based position of the question awaiting an answer.
    AwaitingAnswer(u32),
    Completed,
    OptedOut,
    Expired,
}

impl SessionState {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionState::GreetingSent => "greeting_sent",
            SessionState::AwaitingAnswer(_) => "awaiting_answer",
            SessionState::Completed => "completed",
            SessionState::OptedOut => "opted_out",
            SessionState::Expired => "expired",
        }
    }

    pub fn ordinal(&self) -> Option<i64> {
        match self {
            SessionState::AwaitingAnswer(k) => Some(*k as i64),
            _ => None,
        }
    }

    pub fn from_parts(state: &str, ordinal: Option<i64>) -> Option<SessionState> {
        Some(match (state, ordinal) {
            ("greeting_sent", None) => SessionState::GreetingSent,
            ("awaiting_answer", Some(k)) if k >= 1 => {
                SessionState::AwaitingAnswer(u32::try_from(k).ok()?)
            }
            ("completed", None) => SessionState::Completed,
            ("opted_out", None) => SessionState::OptedOut,
            ("expired", None) => SessionState::Expired,
            _ => return None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            SessionState::Completed | SessionState::OptedOut | SessionState::Expired
        )
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionState::AwaitingAnswer(k) => write!(f, "awaiting_answer({k})"),
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub respondent_id: RespondentId,
    pub questionnaire_id: QuestionnaireId,
    pub state: SessionState,
    /// Whether the awaited question has already been re-sent once.
    pub reprompted: bool,
    pub created_at: Timestamp,
    pub last_outbound_at: Timestamp,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Reassembly(#[from] ReassemblyError),
    #[error("questionnaire {0} not found")]
    UnknownQuestionnaire(QuestionnaireId),
    #[error("questionnaire {0} has no questions")]
    QuestionnaireEmpty(QuestionnaireId),
    #[error("group {0} not found")]
    UnknownGroup(GroupId),
    #[error("group {0} has no active members")]
    EmptyGroup(GroupId),
    #[error("response {0} not found")]
    UnknownResponse(ResponseId),
    #[error("question {0} not found")]
    UnknownQuestion(QuestionId),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    OpenSession,
    Inactive,
    /// The opening message could not be handed to the gateway.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedMember {
    pub respondent_id: RespondentId,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub questionnaire_id: QuestionnaireId,
    pub group_id: GroupId,
    pub sessions: Vec<Session>,
    pub skipped: Vec<SkippedMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum InboundOutcome {
    OptedOut {
        respondent_id: RespondentId,
    },
    SignedUp {
        respondent_id: RespondentId,
        created: bool,
        session_id: Option<SessionId>,
    },
    BulkApplied {
        respondent_id: RespondentId,
        responses: usize,
    },
    BulkRejected {
        reason: String,
    },
    Answered {
        session_id: SessionId,
        question_id: QuestionId,
        parsed: ParsedValue,
        completed: bool,
    },
    Reprompted {
        session_id: SessionId,
        question_id: QuestionId,
    },
    LedgerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InboundResult {
    /// Ledger sequence number of the inbound record.
    pub seq: u64,
    #[serde(flatten)]
    pub outcome: InboundOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuspectedCause {
    Network,
    NonResponse,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StallReport {
    pub region: String,
    pub stalled: u64,
    /// Sessions in the region considered, opted-out ones excluded.
    pub sessions: u64,
    pub window_start: Timestamp,
    pub window_end: Timestamp,
    pub suspected_cause: SuspectedCause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub regions: RegionMap,
    pub limits: SegmentLimits,
    /// Stalled fraction of a region at or above which the network is blamed.
    pub network_threshold: f64,
    /// Stalled fraction at or below which silence is put down to individuals.
    pub isolated_threshold: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            regions: RegionMap::default(),
            limits: SegmentLimits::default(),
            network_threshold: 0.9,
            isolated_threshold: 0.2,
        }
    }
}

/// Drives sessions against a store and a gateway.
pub struct SessionEngine {
    store: Arc<Store>,
    gateway: Arc<dyn Gateway>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    phone_locks: Mutex<HashMap<Phone, Arc<Mutex<()>>>>,
    send_lock: Mutex<()>,
    reassembly: Mutex<ReassemblyBuffer>,
}

impl fmt::Debug for SessionEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionEngine")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// What the next step of a session sends and where it lands.
struct Advance {
    text: Option<String>,
    next: SessionState,
}

impl SessionEngine {
    pub fn new(
        store: Arc<Store>,
        gateway: Arc<dyn Gateway>,
        clock: Arc<dyn Clock>,
        config: EngineConfig,
    ) -> Self {
        SessionEngine {
            store,
            gateway,
            clock,
            config,
            phone_locks: Mutex::new(HashMap::new()),
            send_lock: Mutex::new(()),
            reassembly: Mutex::new(ReassemblyBuffer::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn phone_lock(&self, phone: &Phone) -> Arc<Mutex<()>> {
        self.phone_locks
            .lock()
            .entry(phone.clone())
            .or_default()
            .clone()
    }

    /// Segments `text`, hands it to the gateway and appends the ledger
    /// record. Nothing reaches the ledger if the gateway refuses.
    fn send(
        &self,
        phone: &Phone,
        text: &str,
        session: Option<SessionId>,
        now: Timestamp,
    ) -> Result<u64> {
        let _guard = self.send_lock.lock();
        let id = self.store.next_message_id()?;
        let segments = segment_message(id, text, phone, &self.config.limits)?;
        self.gateway.send(&segments)?;
        let seq = self.store.append_sms(&NewSms {
            direction: Direction::Outbound,
            phone: phone.clone(),
            body: text.to_string(),
            segment_count: segments.len() as u16,
            message_id: Some(id),
            recorded_at: now,
            session_id: session,
        })?;
        tracing::debug!(%phone, msg = %id, seq, "sent");
        Ok(seq)
    }

    fn load_questionnaire(&self, id: QuestionnaireId) -> Result<(Questionnaire, Vec<Question>)> {
        let qn = self
            .store
            .questionnaire(id)?
            .ok_or(EngineError::UnknownQuestionnaire(id))?;
        if qn.is_empty() {
            return Err(EngineError::QuestionnaireEmpty(id));
        }
        let questions = qn
            .question_ids
            .iter()
            .map(|q| {
                self.store
                    .question(*q)?
                    .ok_or(EngineError::UnknownQuestion(*q))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((qn, questions))
    }

    /// Opens a session and sends its opening messages. The caller holds the
    /// respondent's phone lock.
    fn start_session(
        &self,
        respondent: &Respondent,
        questionnaire: &Questionnaire,
        first: &Question,
        settings: &SystemSettings,
        now: Timestamp,
    ) -> Result<Option<Session>> {
        let messages = opening_messages(first, settings);
        let initial = if messages.len() > 1 {
            SessionState::GreetingSent
        } else {
            SessionState::AwaitingAnswer(1)
        };
        let session = match self
            .store
            .insert_session(respondent.id, questionnaire.id, initial, now)
        {
            Ok(s) => s,
            Err(StoreError::OpenSessionExists(_)) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        for text in &messages {
            if let Err(e) = self.send(&respondent.phone, text, Some(session.id), now) {
                tracing::warn!(phone = %respondent.phone, error = %e, "opening message not sent");
                self.store.transition_session(
                    session.id,
                    &session.state,
                    SessionState::Expired,
                    false,
                    None,
                    now,
                )?;
                return Err(e);
            }
        }
        let session = self.store.transition_session(
            session.id,
            &session.state,
            SessionState::AwaitingAnswer(1),
            false,
            Some(now),
            now,
        )?;
        Ok(Some(session))
    }

    /// Starts `questionnaire` for every active member of `group` that has no
    /// open session.
    pub fn dispatch(
        &self,
        questionnaire: QuestionnaireId,
        group: GroupId,
        now: Timestamp,
    ) -> Result<DispatchReport> {
        let (qn, questions) = self.load_questionnaire(questionnaire)?;
        let group_row = self
            .store
            .group(group)?
            .ok_or(EngineError::UnknownGroup(group))?;
        let settings = self.store.settings()?;
        let members = group_row
            .member_ids
            .iter()
            .map(|id| self.store.respondent(*id))
            .collect::<Result<Vec<_>, _>>()?;
        if !members.iter().flatten().any(|r| r.active) {
            return Err(EngineError::EmptyGroup(group));
        }
        let mut report = DispatchReport {
            questionnaire_id: questionnaire,
            group_id: group,
            sessions: Vec::new(),
            skipped: Vec::new(),
        };
        for member in members.into_iter().flatten() {
            let lock = self.phone_lock(&member.phone);
            let _guard = lock.lock();
            // re-read under the lock; an opt-out may have just landed
            let Some(member) = self.store.respondent(member.id)? else {
                continue;
            };
            let skip = |reason| SkippedMember {
                respondent_id: member.id,
                reason,
            };
            if !member.active {
                report.skipped.push(skip(SkipReason::Inactive));
                continue;
            }
            match self.start_session(&member, &qn, &questions[0], &settings, now) {
                Ok(Some(session)) => report.sessions.push(session),
                Ok(None) => report.skipped.push(skip(SkipReason::OpenSession)),
                Err(EngineError::Transport(_)) => {
                    report.skipped.push(skip(SkipReason::Unreachable))
                }
                Err(e) => return Err(e),
            }
        }
        tracing::info!(
            questionnaire = %questionnaire,
            group = %group,
            started = report.sessions.len(),
            skipped = report.skipped.len(),
            "dispatch"
        );
        Ok(report)
    }

    /// Feeds one inbound segment through reassembly; a completed message is
    /// handled at once.
    pub fn on_inbound_segment(
        &self,
        phone: &Phone,
        segment: Segment,
        now: Timestamp,
    ) -> Result<Option<InboundResult>> {
        let validity = self.store.settings()?.validity_period;
        let message = self
            .reassembly
            .lock()
            .accept(phone, segment, now, validity)?;
        match message {
            Some(m) => self
                .handle_inbound_message(&m.phone, &m.text, Some(m.message_id), m.segment_count, now)
                .map(Some),
            None => Ok(None),
        }
    }

    pub fn on_receipt(&self, receipt: &DeliveryReceipt) -> Result<()> {
        self.store.append_receipt(receipt)?;
        Ok(())
    }

    /// Handles one complete inbound message.
    pub fn handle_inbound(
        &self,
        phone: &Phone,
        text: &str,
        now: Timestamp,
    ) -> Result<InboundResult> {
        let segments = self.config.limits.parts_for(text.chars().count()).max(1) as u16;
        self.handle_inbound_message(phone, text, None, segments, now)
    }

    fn handle_inbound_message(
        &self,
        phone: &Phone,
        text: &str,
        message_id: Option<MessageId>,
        segment_count: u16,
        now: Timestamp,
    ) -> Result<InboundResult> {
        let lock = self.phone_lock(phone);
        let _guard = lock.lock();
        let text = sanitize_input(text, self.config.limits.max_message_chars()).text;
        let settings = self.store.settings()?;
        let respondent = self.store.respondent_by_phone(phone)?;
        let session = match &respondent {
            Some(r) if r.active => self.store.open_session(r.id)?,
            _ => None,
        };
        let seq = self.store.append_sms(&NewSms {
            direction: Direction::Inbound,
            phone: phone.clone(),
            body: text.clone(),
            segment_count,
            message_id,
            recorded_at: now,
            session_id: session.as_ref().map(|s| s.id),
        })?;
        let keyword = strip_edges(&text);
        let is_keyword = |k: &Option<String>| {
            k.as_deref()
                .is_some_and(|k| k.eq_ignore_ascii_case(keyword))
        };

        let outcome = if is_keyword(&settings.opt_out_keyword) {
            self.opt_out(respondent, session, &settings, now)?
        } else if is_keyword(&settings.sign_up_keyword) {
            self.sign_up(phone, respondent, &settings, now)?
        } else if let Some(outcome) = self.try_bulk(&respondent, &text, seq, &settings, now)? {
            outcome
        } else if let Some(session) = session {
            self.answer(
                &respondent.expect("open session has a respondent"),
                session,
                &text,
                seq,
                &settings,
                now,
            )?
        } else {
            InboundOutcome::LedgerOnly
        };
        tracing::debug!(%phone, seq, ?outcome, "inbound");
        Ok(InboundResult { seq, outcome })
    }

    fn opt_out(
        &self,
        respondent: Option<Respondent>,
        session: Option<Session>,
        settings: &SystemSettings,
        now: Timestamp,
    ) -> Result<InboundOutcome> {
        let Some(respondent) = respondent.filter(|r| r.active) else {
            return Ok(InboundOutcome::LedgerOnly);
        };
        if let Some(s) = &session {
            self.store.transition_session(
                s.id,
                &s.state,
                SessionState::OptedOut,
                s.reprompted,
                None,
                now,
            )?;
        }
        self.store.set_active(respondent.id, false, now)?;
        if let Err(e) = self.send(
            &respondent.phone,
            settings.opt_out_confirmation_text(),
            session.map(|s| s.id),
            now,
        ) {
            tracing::warn!(phone = %respondent.phone, error = %e, "opt-out confirmation not sent");
        }
        Ok(InboundOutcome::OptedOut {
            respondent_id: respondent.id,
        })
    }

    fn sign_up(
        &self,
        phone: &Phone,
        respondent: Option<Respondent>,
        settings: &SystemSettings,
        now: Timestamp,
    ) -> Result<InboundOutcome> {
        let (respondent, created) = match respondent {
            None => (
                self.store
                    .insert_respondent(phone, &BTreeMap::new(), true, false, now)?,
                true,
            ),
            Some(r) if !r.active => (self.store.set_active(r.id, true, now)?, false),
            Some(r) => (r, false),
        };
        let mut session_id = None;
        if let Some(qid) = settings.sign_up_questionnaire_id {
            match self.load_questionnaire(qid) {
                Ok((qn, questions)) => {
                    match self.start_session(&respondent, &qn, &questions[0], settings, now) {
                        Ok(s) => session_id = s.map(|s| s.id),
                        Err(EngineError::Transport(e)) => {
                            tracing::warn!(%phone, error = %e, "sign-up questionnaire not sent")
                        }
                        Err(e) => return Err(e),
                    }
                }
                Err(e) => tracing::warn!(%phone, error = %e, "sign-up questionnaire unavailable"),
            }
        }
        Ok(InboundOutcome::SignedUp {
            respondent_id: respondent.id,
            created,
            session_id,
        })
    }

    /// Applies an enumerator's bulk message. `None` means the text is not a
    /// bulk message from staff and should fall through.
    fn try_bulk(
        &self,
        sender: &Option<Respondent>,
        text: &str,
        seq: u64,
        settings: &SystemSettings,
        now: Timestamp,
    ) -> Result<Option<InboundOutcome>> {
        if !settings.bulk_encoding_enabled || !sender.as_ref().is_some_and(|s| s.is_staff()) {
            return Ok(None);
        }
        let Ok(record) = decode_bulk(text.trim(), true) else {
            return Ok(None);
        };
        let reject = |reason: String| Ok(Some(InboundOutcome::BulkRejected { reason }));
        let target = RespondentId(record.respondent_id as i64);
        if self.store.respondent(target)?.is_none() {
            return reject(format!("unknown respondent {target}"));
        }
        let qid = QuestionnaireId(record.questionnaire_id as i64);
        let Some(qn) = self.store.questionnaire(qid)? else {
            return reject(format!("unknown questionnaire {qid}"));
        };
        if record.last_ordinal() as usize > qn.len() {
            return reject(format!(
                "answers run to question {} of a {}-question questionnaire",
                record.last_ordinal(),
                qn.len()
            ));
        }
        let vocabulary = YesNoVocabulary::from_settings(settings);
        let mut rows = Vec::with_capacity(record.answers.len());
        for (ordinal, answer) in record.ordinals() {
            let question_id = qn
                .question_at(ordinal)
                .expect("ordinal checked against length");
            let question = self
                .store
                .question(question_id)?
                .ok_or(EngineError::UnknownQuestion(question_id))?;
            rows.push(NewResponse {
                respondent_id: target,
                question_id,
                questionnaire_id: qid,
                session_id: None,
                raw_text: answer.to_string(),
                parsed_value: parse_answer(&question, answer, &vocabulary).into_value(),
                received_at: now,
                source: ResponseSource::BulkEnumerator,
                sms_record_id: Some(seq),
            });
        }
        let stored = self.store.insert_responses(&rows)?;
        Ok(Some(InboundOutcome::BulkApplied {
            respondent_id: target,
            responses: stored.len(),
        }))
    }

    fn answer(
        &self,
        respondent: &Respondent,
        session: Session,
        text: &str,
        seq: u64,
        settings: &SystemSettings,
        now: Timestamp,
    ) -> Result<InboundOutcome> {
        let SessionState::AwaitingAnswer(k) = session.state else {
            return Ok(InboundOutcome::LedgerOnly);
        };
        let (qn, questions) = self.load_questionnaire(session.questionnaire_id)?;
        let Some(question) = questions.get(k as usize - 1) else {
            tracing::error!(session = %session.id, k, "awaited ordinal outside questionnaire");
            return Ok(InboundOutcome::LedgerOnly);
        };
        let outcome = parse_answer(question, text, &YesNoVocabulary::from_settings(settings));
        if !outcome.is_ok() && settings.reprompt_on_parse_failure && !session.reprompted {
            let resent = self.send(
                &respondent.phone,
                &render_question(question),
                Some(session.id),
                now,
            );
            let last = resent.is_ok().then_some(now);
            self.store.transition_session(
                session.id,
                &session.state,
                session.state,
                true,
                last,
                now,
            )?;
            return Ok(InboundOutcome::Reprompted {
                session_id: session.id,
                question_id: question.id,
            });
        }
        let parsed = outcome.into_value();
        self.store.insert_response(&NewResponse {
            respondent_id: respondent.id,
            question_id: question.id,
            questionnaire_id: qn.id,
            session_id: Some(session.id),
            raw_text: text.to_string(),
            parsed_value: parsed.clone(),
            received_at: now,
            source: ResponseSource::SmsDirect,
            sms_record_id: Some(seq),
        })?;
        let advance = match questions.get(k as usize) {
            Some(next) => Advance {
                text: Some(render_question(next)),
                next: SessionState::AwaitingAnswer(k + 1),
            },
            None => Advance {
                text: settings.thank_you_text().map(str::to_string),
                next: SessionState::Completed,
            },
        };
        let mut last = None;
        if let Some(t) = &advance.text {
            match self.send(&respondent.phone, t, Some(session.id), now) {
                Ok(_) => last = Some(now),
                Err(e) => {
                    tracing::warn!(phone = %respondent.phone, error = %e, "follow-up not sent")
                }
            }
        }
        self.store.transition_session(
            session.id,
            &session.state,
            advance.next,
            false,
            last,
            now,
        )?;
        Ok(InboundOutcome::Answered {
            session_id: session.id,
            question_id: question.id,
            parsed,
            completed: advance.next == SessionState::Completed,
        })
    }

    /// Moves every open session idle for longer than the validity period
    /// to `expired`. Nothing is sent.
    pub fn expire_sessions(&self, now: Timestamp) -> Result<Vec<Session>> {
        let validity = self.store.settings()?.validity_period;
        self.reassembly.lock().expire(now, validity);
        let mut expired = Vec::new();
        for session in self.store.open_sessions()? {
            if now.since(session.last_outbound_at) <= validity {
                continue;
            }
            let Some(respondent) = self.store.respondent(session.respondent_id)? else {
                continue;
            };
            let lock = self.phone_lock(&respondent.phone);
            let _guard = lock.lock();
            match self.store.transition_session(
                session.id,
                &session.state,
                SessionState::Expired,
                session.reprompted,
                None,
                now,
            ) {
                Ok(s) => expired.push(s),
                // an answer got in first
                Err(StoreError::Conflict { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(expired)
    }

    /// Groups stalled sessions by region. A session counts as stalled if it
    /// expired, or is still waiting past the validity period. Only sessions
    /// created at or after `since` are considered.
    pub fn detect_stalls(&self, now: Timestamp, since: Timestamp) -> Result<Vec<StallReport>> {
        let validity = self.store.settings()?.validity_period;
        #[derive(Default)]
        struct Tally {
            stalled: u64,
            total: u64,
            start: Option<Timestamp>,
        }
        let mut regions: BTreeMap<String, Tally> = BTreeMap::new();
        for session in self.store.sessions()? {
            if session.created_at < since || session.state == SessionState::OptedOut {
                continue;
            }
            let Some(respondent) = self.store.respondent(session.respondent_id)? else {
                continue;
            };
            let region = self
                .config
                .regions
                .region_of(&respondent.phone)
                .unwrap_or("unrouted")
                .to_string();
            let stalled = match session.state {
                SessionState::Expired => true,
                SessionState::AwaitingAnswer(_) | SessionState::GreetingSent => {
                    now.since(session.last_outbound_at) > validity
                }
                _ => false,
            };
            let tally = regions.entry(region).or_default();
            tally.total += 1;
            if stalled {
                tally.stalled += 1;
                tally.start = Some(tally.start.map_or(session.last_outbound_at, |s| {
                    s.min(session.last_outbound_at)
                }));
            }
        }
        Ok(regions
            .into_iter()
            .filter(|(_, t)| t.stalled > 0)
            .map(|(region, t)| {
                let fraction = t.stalled as f64 / t.total as f64;
                let suspected_cause = if fraction >= self.config.network_threshold {
                    SuspectedCause::Network
                } else if fraction <= self.config.isolated_threshold {
                    SuspectedCause::NonResponse
                } else {
                    SuspectedCause::Unknown
                };
                StallReport {
                    region,
                    stalled: t.stalled,
                    sessions: t.total,
                    window_start: t.start.unwrap_or(now),
                    window_end: now,
                    suspected_cause,
                }
            })
            .collect())
    }

    /// Re-files a response under another question, re-parsing its raw text.
    pub fn reattribute_response(
        &self,
        response: ResponseId,
        question: QuestionId,
        staff: StaffId,
        now: Timestamp,
    ) -> Result<Response> {
        let existing = self
            .store
            .response(response)?
            .ok_or(EngineError::UnknownResponse(response))?;
        let target = self
            .store
            .question(question)?
            .ok_or(EngineError::UnknownQuestion(question))?;
        let vocabulary = YesNoVocabulary::from_settings(&self.store.settings()?);
        let parsed = parse_answer(&target, &existing.raw_text, &vocabulary).into_value();
        Ok(self
            .store
            .reattribute_response(response, question, &parsed, staff, now)?)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;
    use std::time::Duration;

    use super::*;
    use crate::model::{build_options, ResponseType};
    use crate::time::ManualClock;
    use crate::transport::RecordingGateway;

    struct Fixture {
        engine: SessionEngine,
        gateway: Arc<RecordingGateway>,
        store: Arc<Store>,
        questionnaire: QuestionnaireId,
        group: GroupId,
        phones: Vec<Phone>,
    }

    const T0: Timestamp = Timestamp(1_700_000_000_000);

    fn fixture(settings: SystemSettings, members: usize) -> Fixture {
        let store = Arc::new(Store::open_in_memory().unwrap());
        let gateway = Arc::new(RecordingGateway::new());
        let clock = Arc::new(ManualClock::new(T0));
        let stove = build_options(
            "Stove?",
            ResponseType::Categorical,
            Some(&[
                "Everyday".into(),
                "Weekly".into(),
                "Monthly".into(),
                "Never".into(),
            ]),
        )
        .unwrap();
        let q1 = store
            .insert_question(
                "How often do you cook on the stove?",
                ResponseType::Categorical,
                &stove,
                T0,
            )
            .unwrap();
        let q2 = store
            .insert_question(
                "How many people live in your household?",
                ResponseType::Numeric,
                &[],
                T0,
            )
            .unwrap();
        let q3 = store
            .insert_question("Do you own a solar lamp?", ResponseType::YesNo, &[], T0)
            .unwrap();
        let qn = store
            .insert_questionnaire("stoves", &[q1.id, q2.id, q3.id], T0)
            .unwrap();
        store.save_settings(&settings, StaffId(0), T0).unwrap();
        let mut ids = BTreeSet::new();
        let mut phones = Vec::new();
        for i in 0..members {
            let phone = Phone::parse(&format!("+29171000{i:02}")).unwrap();
            ids.insert(
                store
                    .insert_respondent(&phone, &BTreeMap::new(), true, false, T0)
                    .unwrap()
                    .id,
            );
            phones.push(phone);
        }
        let group = store.insert_group("g", &ids, T0).unwrap();
        let engine = SessionEngine::new(
            store.clone(),
            gateway.clone(),
            clock,
            EngineConfig::default(),
        );
        Fixture {
            engine,
            gateway,
            store,
            questionnaire: qn.id,
            group: group.id,
            phones,
        }
    }

    fn at(mins: u64) -> Timestamp {
        T0 + Duration::from_secs(mins * 60)
    }

    #[test]
    fn compliant_respondent_completes() {
        let settings = SystemSettings {
            greeting: Some("Hi from GreenCo".into()),
            thank_you: Some("Thank you".into()),
            ..SystemSettings::default()
        };
        let f = fixture(settings, 2);
        let report = f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        assert_eq!(report.sessions.len(), 2);
        assert!(report
            .sessions
            .iter()
            .all(|s| s.state == SessionState::AwaitingAnswer(1)));
        for (i, answer) in ["everyday", "5", "yes"].iter().enumerate() {
            let r = f
                .engine
                .handle_inbound(&f.phones[0], answer, at(i as u64 + 1))
                .unwrap();
            assert!(
                matches!(r.outcome, InboundOutcome::Answered { .. }),
                "{r:?}"
            );
        }
        let texts: Vec<String> = f
            .gateway
            .texts()
            .into_iter()
            .filter(|(p, _)| *p == f.phones[0])
            .map(|(_, t)| t)
            .collect();
        assert_eq!(
            texts,
            vec![
                "Hi from GreenCo",
                "How often do you cook on the stove? A=Everyday, B=Weekly, C=Monthly, D=Never",
                "How many people live in your household?",
                "Do you own a solar lamp?",
                "Thank you"
            ]
        );
        let sessions = f.store.sessions().unwrap();
        assert_eq!(sessions[0].state, SessionState::Completed);
        assert_eq!(sessions[1].state, SessionState::AwaitingAnswer(1));
        let values: Vec<ParsedValue> = f
            .store
            .responses()
            .unwrap()
            .into_iter()
            .map(|r| r.parsed_value)
            .collect();
        assert_eq!(
            values,
            vec![
                ParsedValue::Code('A'),
                ParsedValue::Number(5.0),
                ParsedValue::Yes
            ]
        );
        let again = f.engine.dispatch(f.questionnaire, f.group, at(9)).unwrap();
        assert_eq!(again.sessions.len(), 1);
        assert_eq!(
            again.skipped,
            vec![SkippedMember {
                respondent_id: sessions[1].respondent_id,
                reason: SkipReason::OpenSession
            }]
        );
    }

    #[test]
    fn reprompt_once_then_store_unparsed() {
        let f = fixture(SystemSettings::default(), 1);
        f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        let r = f
            .engine
            .handle_inbound(&f.phones[0], "sometimes", at(1))
            .unwrap();
        assert!(matches!(r.outcome, InboundOutcome::Reprompted { .. }));
        let r = f
            .engine
            .handle_inbound(&f.phones[0], "often", at(2))
            .unwrap();
        assert!(matches!(
            r.outcome,
            InboundOutcome::Answered {
                parsed: ParsedValue::Unparsed,
                ..
            }
        ));
        assert_eq!(
            f.store.sessions().unwrap()[0].state,
            SessionState::AwaitingAnswer(2)
        );
        // the reprompt flag resets for the next question
        let r = f
            .engine
            .handle_inbound(&f.phones[0], "lots", at(3))
            .unwrap();
        assert!(matches!(r.outcome, InboundOutcome::Reprompted { .. }));
        assert_eq!(f.gateway.send_count(), 4);
    }

    #[test]
    fn opt_out_and_sign_up() {
        let settings = SystemSettings {
            opt_out_keyword: Some("STOP".into()),
            sign_up_keyword: Some("JOIN".into()),
            ..SystemSettings::default()
        };
        let mut f = fixture(settings, 1);
        f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        f.engine.handle_inbound(&f.phones[0], "A", at(1)).unwrap();
        let r = f
            .engine
            .handle_inbound(&f.phones[0], " stop ", at(2))
            .unwrap();
        assert!(matches!(r.outcome, InboundOutcome::OptedOut { .. }));
        let sent = f.gateway.send_count();
        assert!(matches!(
            f.engine.dispatch(f.questionnaire, f.group, at(3)),
            Err(EngineError::EmptyGroup(_))
        ));
        let r = f.engine.handle_inbound(&f.phones[0], "5", at(4)).unwrap();
        assert_eq!(r.outcome, InboundOutcome::LedgerOnly);
        assert_eq!(f.gateway.send_count(), sent);
        assert_eq!(f.store.responses().unwrap().len(), 1);
        assert_eq!(f.store.sessions().unwrap()[0].state, SessionState::OptedOut);

        let mut s = f.store.settings().unwrap();
        s.sign_up_questionnaire_id = Some(f.questionnaire);
        f.store.save_settings(&s, StaffId(0), at(5)).unwrap();
        let r = f
            .engine
            .handle_inbound(&f.phones[0], "join", at(6))
            .unwrap();
        assert!(matches!(
            r.outcome,
            InboundOutcome::SignedUp {
                created: false,
                session_id: Some(_),
                ..
            }
        ));
        assert!(
            f.store
                .respondent_by_phone(&f.phones[0])
                .unwrap()
                .unwrap()
                .active
        );

        let stranger = Phone::parse("+29179999999").unwrap();
        let r = f.engine.handle_inbound(&stranger, "hello", at(7)).unwrap();
        assert_eq!(r.outcome, InboundOutcome::LedgerOnly);
        let r = f.engine.handle_inbound(&stranger, "JOIN", at(8)).unwrap();
        assert!(matches!(
            r.outcome,
            InboundOutcome::SignedUp { created: true, .. }
        ));
        f.phones.push(stranger);
    }

    #[test]
    fn bulk_needs_staff_flag() {
        let settings = SystemSettings {
            bulk_encoding_enabled: true,
            ..SystemSettings::default()
        };
        let f = fixture(settings, 2);
        let target = f.store.respondent_by_phone(&f.phones[1]).unwrap().unwrap();
        let body = format!("U{}F{}Q1;A;12;yes", target.id, f.questionnaire);
        let r = f.engine.handle_inbound(&f.phones[0], &body, at(1)).unwrap();
        assert_eq!(r.outcome, InboundOutcome::LedgerOnly);
        let enumerator = f.store.respondent_by_phone(&f.phones[0]).unwrap().unwrap();
        f.store
            .set_attribute(enumerator.id, "staff", "true", at(2), None)
            .unwrap();
        let r = f.engine.handle_inbound(&f.phones[0], &body, at(3)).unwrap();
        assert_eq!(
            r.outcome,
            InboundOutcome::BulkApplied {
                respondent_id: target.id,
                responses: 3
            }
        );
        let stored = f.store.responses_for_respondent(target.id).unwrap();
        assert!(stored
            .iter()
            .all(|r| r.source == ResponseSource::BulkEnumerator));
        let bad = format!("U{}F{}Q3;A;B", target.id, f.questionnaire);
        let r = f.engine.handle_inbound(&f.phones[0], &bad, at(4)).unwrap();
        assert!(matches!(r.outcome, InboundOutcome::BulkRejected { .. }));
    }

    #[test]
    fn expiry_after_validity() {
        let f = fixture(SystemSettings::default(), 1);
        f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        assert!(f.engine.expire_sessions(at(47 * 60)).unwrap().is_empty());
        let expired = f.engine.expire_sessions(at(49 * 60)).unwrap();
        assert_eq!(expired.len(), 1);
        assert_eq!(expired[0].state, SessionState::Expired);
        let r = f
            .engine
            .handle_inbound(&f.phones[0], "A", at(50 * 60))
            .unwrap();
        assert_eq!(r.outcome, InboundOutcome::LedgerOnly);
    }

    #[test]
    fn stall_causes() {
        let f = fixture(SystemSettings::default(), 10);
        f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        for p in &f.phones[1..] {
            for (i, a) in ["A", "3", "no"].iter().enumerate() {
                f.engine.handle_inbound(p, a, at(i as u64 + 1)).unwrap();
            }
        }
        assert!(f
            .engine
            .detect_stalls(at(60), Timestamp::EPOCH)
            .unwrap()
            .is_empty());
        let reports = f
            .engine
            .detect_stalls(at(49 * 60), Timestamp::EPOCH)
            .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!((reports[0].stalled, reports[0].sessions), (1, 10));
        assert_eq!(reports[0].suspected_cause, SuspectedCause::NonResponse);
    }

    #[test]
    fn reattribution_reparses() {
        let f = fixture(
            SystemSettings {
                reprompt_on_parse_failure: false,
                ..SystemSettings::default()
            },
            1,
        );
        f.engine.dispatch(f.questionnaire, f.group, at(0)).unwrap();
        f.engine.handle_inbound(&f.phones[0], "4", at(1)).unwrap();
        let resp = &f.store.responses().unwrap()[0];
        assert_eq!(resp.parsed_value, ParsedValue::Unparsed);
        let q2 = f
            .store
            .questionnaire(f.questionnaire)
            .unwrap()
            .unwrap()
            .question_ids[1];
        let moved = f
            .engine
            .reattribute_response(resp.id, q2, StaffId(1), at(2))
            .unwrap();
        assert_eq!(moved.parsed_value, ParsedValue::Number(4.0));
        assert!(matches!(
            f.engine
                .reattribute_response(resp.id, QuestionId(99), StaffId(1), at(3)),
            Err(EngineError::UnknownQuestion(_))
        ));
    }
}
