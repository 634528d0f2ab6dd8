// SPDX-License-Identifier: Apache-2.0

//! The admin API as plain method calls. Every operation takes the acting
//! staff account and checks exactly one capability before touching
//! anything; a denied call leaves the store untouched.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::access::{authorize, Capability, Decision};
use crate::analytics::{
    self, AnalyticsError, AttributeSummary, QuestionSummary, SummaryDocument, SummaryTarget,
    TimelinePoint,
};
use crate::model::filter::{filter_rows, FilterError, Predicate, Table, TableData};
use crate::model::{
    build_options, validate_attribute_name, validate_questionnaire, AccessLevel, AttributeError,
    AttributeHint, GroupId, Phone, PhoneError, Question, QuestionError, QuestionId, Questionnaire,
    QuestionnaireError, QuestionnaireId, Respondent, RespondentId, Response, ResponseId,
    ResponseType, SettingsError, StaffAccount, StaffId, SystemSettings, UserGroup,
};
use crate::parse::YesNoVocabulary;
use crate::render::{check_prompt, preview_questionnaire, render_question};
use crate::session::{DispatchReport, EngineError, Session, SessionEngine, StallReport};
use crate::store::{export_csv, ImportReport, SmsRecord, Store, StoreError};
use crate::time::{Clock, Timestamp};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{level:?} staff may not {capability}")]
    PermissionDenied {
        level: AccessLevel,
        capability: Capability,
    },
    #[error("not authenticated")]
    Unauthenticated,
    #[error("unknown staff name or wrong password")]
    InvalidCredentials,
    #[error("{0} not found")]
    NotFound(String),
    #[error("staff accounts already exist")]
    AlreadyBootstrapped,
    #[error(transparent)]
    Question(#[from] QuestionError),
    #[error(transparent)]
    Questionnaire(#[from] QuestionnaireError),
    #[error("invalid settings: {0}")]
    InvalidSettings(#[from] SettingsError),
    #[error(transparent)]
    Attribute(#[from] AttributeError),
    #[error(transparent)]
    Phone(#[from] PhoneError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: Timestamp,
    pub staff: StaffId,
    pub capability: Capability,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginToken {
    pub token: String,
    pub expires_at: Timestamp,
    pub staff: StaffAccount,
}

/// `salt$hex(sha256(salt || password))`.
fn hash_credential(salt: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update(password.as_bytes());
    format!("{salt}${}", hex::encode(h.finalize()))
}

fn new_credential(password: &str) -> String {
    hash_credential(&uuid::Uuid::new_v4().simple().to_string(), password)
}

fn verify_credential(stored: &str, password: &str) -> bool {
    match stored.split_once('$') {
        Some((salt, _)) => hash_credential(salt, password) == stored,
        None => false,
    }
}

pub struct AdminService {
    store: Arc<Store>,
    engine: Arc<SessionEngine>,
    clock: Arc<dyn Clock>,
    token_lifetime: Duration,
    tokens: Mutex<HashMap<String, (StaffId, Timestamp)>>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl std::fmt::Debug for AdminService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdminService")
            .field("token_lifetime", &self.token_lifetime)
            .finish_non_exhaustive()
    }
}

impl AdminService {
    pub fn new(engine: Arc<SessionEngine>, token_lifetime: Duration) -> Self {
        AdminService {
            store: engine.store().clone(),
            clock: engine.clock().clone(),
            engine,
            token_lifetime,
            tokens: Mutex::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn engine(&self) -> &Arc<SessionEngine> {
        &self.engine
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Every authorisation decision made so far, oldest first.
    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().clone()
    }

    fn authorize(&self, staff: &StaffAccount, capability: Capability) -> Result<()> {
        let decision = authorize(staff, capability);
        self.audit.lock().push(AuditEntry {
            at: self.now(),
            staff: staff.id,
            capability,
            decision,
        });
        if decision.is_allowed() {
            Ok(())
        } else {
            tracing::info!(staff = %staff.name, %capability, "denied");
            Err(ServiceError::PermissionDenied {
                level: staff.access_level,
                capability,
            })
        }
    }

    // ---- authentication --------------------------------------------------

    /// Creates the first superuser. Refused once any staff account exists.
    pub fn bootstrap_superuser(&self, name: &str, password: &str) -> Result<StaffAccount> {
        if !self.store.staff_accounts()?.is_empty() {
            return Err(ServiceError::AlreadyBootstrapped);
        }
        Ok(self.store.insert_staff(
            name,
            &new_credential(password),
            AccessLevel::Superuser,
            self.now(),
        )?)
    }

    pub fn login(&self, name: &str, password: &str) -> Result<LoginToken> {
        let staff = self
            .store
            .staff_by_name(name)?
            .filter(|s| s.active && verify_credential(&s.credential_hash, password))
            .ok_or(ServiceError::InvalidCredentials)?;
        let token = uuid::Uuid::new_v4().simple().to_string();
        let expires_at = self.now() + self.token_lifetime;
        self.tokens
            .lock()
            .insert(token.clone(), (staff.id, expires_at));
        Ok(LoginToken {
            token,
            expires_at,
            staff,
        })
    }

    /// The staff account behind a live token, re-read so level changes and
    /// deactivation apply at once.
    pub fn authenticate(&self, token: &str) -> Result<StaffAccount> {
        let now = self.now();
        let id = {
            let mut tokens = self.tokens.lock();
            tokens.retain(|_, (_, exp)| *exp > now);
            tokens.get(token).map(|(id, _)| *id)
        };
        let id = id.ok_or(ServiceError::Unauthenticated)?;
        self.store
            .staff(id)?
            .filter(|s| s.active)
            .ok_or(ServiceError::Unauthenticated)
    }

    pub fn logout(&self, token: &str) {
        self.tokens.lock().remove(token);
    }

    // ---- questions -------------------------------------------------------

    pub fn create_question(
        &self,
        staff: &StaffAccount,
        text: &str,
        response_type: ResponseType,
        options: Option<&[String]>,
    ) -> Result<Question> {
        self.authorize(staff, Capability::Add)?;
        let options = build_options(text, response_type, options)?;
        let draft = Question {
            id: QuestionId(0),
            text: text.trim().to_string(),
            response_type,
            options,
            created_at: self.now(),
            version: 1,
        };
        check_prompt(&draft, &self.engine.config().limits)?;
        Ok(self.store.insert_question(
            &draft.text,
            response_type,
            &draft.options,
            draft.created_at,
        )?)
    }

    pub fn update_question(
        &self,
        staff: &StaffAccount,
        id: QuestionId,
        text: &str,
        options: Option<&[String]>,
        expected_version: Option<i64>,
    ) -> Result<Question> {
        self.authorize(staff, Capability::EditDelete)?;
        let current = self
            .store
            .question(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("question {id}")))?;
        let options = build_options(text, current.response_type, options)?;
        let draft = Question {
            text: text.trim().to_string(),
            options,
            ..current
        };
        check_prompt(&draft, &self.engine.config().limits)?;
        Ok(self
            .store
            .update_question(id, &draft.text, &draft.options, expected_version)?)
    }

    pub fn delete_question(&self, staff: &StaffAccount, id: QuestionId) -> Result<()> {
        self.authorize(staff, Capability::EditDelete)?;
        Ok(self.store.delete_question(id)?)
    }

    pub fn questions(&self, staff: &StaffAccount) -> Result<Vec<Question>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.questions()?)
    }

    pub fn question(&self, staff: &StaffAccount, id: QuestionId) -> Result<Question> {
        self.authorize(staff, Capability::View)?;
        self.store
            .question(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("question {id}")))
    }

    /// The exact text a respondent would receive for this question.
    pub fn preview_question(&self, staff: &StaffAccount, id: QuestionId) -> Result<String> {
        self.authorize(staff, Capability::View)?;
        let q = self
            .store
            .question(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("question {id}")))?;
        Ok(render_question(&q))
    }

    // ---- questionnaires --------------------------------------------------

    fn check_questionnaire(&self, name: &str, ids: &[QuestionId]) -> Result<()> {
        let max = self.store.settings()?.max_questionnaire_length;
        let known: BTreeSet<QuestionId> =
            self.store.questions()?.into_iter().map(|q| q.id).collect();
        validate_questionnaire(name, ids, max, |id| known.contains(&id))?;
        Ok(())
    }

    pub fn create_questionnaire(
        &self,
        staff: &StaffAccount,
        name: &str,
        ids: &[QuestionId],
    ) -> Result<Questionnaire> {
        self.authorize(staff, Capability::Add)?;
        self.check_questionnaire(name, ids)?;
        Ok(self
            .store
            .insert_questionnaire(name.trim(), ids, self.now())?)
    }

    /// Builds a questionnaire from the questions a filter selects, in id order.
    pub fn create_questionnaire_from_filter(
        &self,
        staff: &StaffAccount,
        name: &str,
        predicates: &[Predicate],
    ) -> Result<Questionnaire> {
        self.authorize(staff, Capability::Add)?;
        let table = self.store.load_table(Table::Questions)?;
        let ids: Vec<QuestionId> = filter_rows(&table, predicates)?
            .into_iter()
            .map(|r| QuestionId(r.id))
            .collect();
        self.check_questionnaire(name, &ids)?;
        Ok(self
            .store
            .insert_questionnaire(name.trim(), &ids, self.now())?)
    }

    pub fn update_questionnaire(
        &self,
        staff: &StaffAccount,
        id: QuestionnaireId,
        name: &str,
        ids: &[QuestionId],
    ) -> Result<Questionnaire> {
        self.authorize(staff, Capability::EditDelete)?;
        self.check_questionnaire(name, ids)?;
        Ok(self.store.update_questionnaire(id, name.trim(), ids)?)
    }

    pub fn questionnaires(&self, staff: &StaffAccount) -> Result<Vec<Questionnaire>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.questionnaires()?)
    }

    /// Every message a compliant respondent would receive, under the
    /// current settings.
    pub fn preview_questionnaire(
        &self,
        staff: &StaffAccount,
        id: QuestionnaireId,
    ) -> Result<Vec<String>> {
        self.authorize(staff, Capability::View)?;
        let qn = self
            .store
            .questionnaire(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("questionnaire {id}")))?;
        let questions = qn
            .question_ids
            .iter()
            .map(|q| {
                self.store
                    .question(*q)?
                    .ok_or_else(|| ServiceError::NotFound(format!("question {q}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(preview_questionnaire(&questions, &self.store.settings()?))
    }

    // ---- respondents -----------------------------------------------------

    pub fn create_respondent(
        &self,
        staff: &StaffAccount,
        phone: &str,
        attributes: &BTreeMap<String, String>,
    ) -> Result<Respondent> {
        self.authorize(staff, Capability::Add)?;
        let phone = Phone::parse(phone)?;
        for name in attributes.keys() {
            validate_attribute_name(name)?;
        }
        Ok(self
            .store
            .insert_respondent(&phone, attributes, true, false, self.now())?)
    }

    pub fn respondents(&self, staff: &StaffAccount) -> Result<Vec<Respondent>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.respondents()?)
    }

    pub fn upsert_attribute(
        &self,
        staff: &StaffAccount,
        respondent: RespondentId,
        name: &str,
        value: &str,
        expected_version: Option<i64>,
    ) -> Result<Respondent> {
        self.authorize(staff, Capability::EditDelete)?;
        validate_attribute_name(name)?;
        Ok(self.store.set_attribute(
            respondent,
            name.trim(),
            value,
            self.now(),
            expected_version,
        )?)
    }

    pub fn remove_attribute(
        &self,
        staff: &StaffAccount,
        respondent: RespondentId,
        name: &str,
    ) -> Result<Respondent> {
        self.authorize(staff, Capability::EditDelete)?;
        validate_attribute_name(name)?;
        Ok(self
            .store
            .remove_attribute(respondent, name.trim(), self.now())?)
    }

    pub fn set_respondent_active(
        &self,
        staff: &StaffAccount,
        respondent: RespondentId,
        active: bool,
    ) -> Result<Respondent> {
        self.authorize(staff, Capability::EditDelete)?;
        Ok(self.store.set_active(respondent, active, self.now())?)
    }

    pub fn set_attribute_hint(
        &self,
        staff: &StaffAccount,
        name: &str,
        hint: AttributeHint,
    ) -> Result<()> {
        self.authorize(staff, Capability::EditDelete)?;
        validate_attribute_name(name)?;
        Ok(self.store.set_attribute_hint(name.trim(), hint)?)
    }

    // ---- groups ----------------------------------------------------------

    pub fn create_group(
        &self,
        staff: &StaffAccount,
        name: &str,
        members: &BTreeSet<RespondentId>,
    ) -> Result<UserGroup> {
        self.authorize(staff, Capability::Add)?;
        Ok(self.store.insert_group(name.trim(), members, self.now())?)
    }

    /// Builds a group from the users a filter selects.
    pub fn create_group_from_filter(
        &self,
        staff: &StaffAccount,
        name: &str,
        predicates: &[Predicate],
    ) -> Result<UserGroup> {
        self.authorize(staff, Capability::Add)?;
        let table = self.store.load_table(Table::Users)?;
        let members = filter_rows(&table, predicates)?
            .into_iter()
            .map(|r| RespondentId(r.id))
            .collect();
        Ok(self.store.insert_group(name.trim(), &members, self.now())?)
    }

    pub fn set_group_members(
        &self,
        staff: &StaffAccount,
        id: GroupId,
        members: &BTreeSet<RespondentId>,
    ) -> Result<UserGroup> {
        self.authorize(staff, Capability::EditDelete)?;
        Ok(self.store.set_group_members(id, members)?)
    }

    pub fn groups(&self, staff: &StaffAccount) -> Result<Vec<UserGroup>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.groups()?)
    }

    // ---- tables, CSV -----------------------------------------------------

    pub fn table(&self, staff: &StaffAccount, table: Table) -> Result<TableData> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.load_table(table)?)
    }

    pub fn filter_rows(
        &self,
        staff: &StaffAccount,
        table: Table,
        predicates: &[Predicate],
    ) -> Result<TableData> {
        self.authorize(staff, Capability::Filter)?;
        let mut data = self.store.load_table(table)?;
        data.rows = filter_rows(&data, predicates)?;
        Ok(data)
    }

    pub fn export_csv(
        &self,
        staff: &StaffAccount,
        table: Table,
        predicates: &[Predicate],
    ) -> Result<String> {
        self.authorize(staff, Capability::Download)?;
        let data = self.store.load_table(table)?;
        let rows = filter_rows(&data, predicates)?;
        Ok(export_csv(&data.columns, &rows)?)
    }

    pub fn import_responses_csv(
        &self,
        staff: &StaffAccount,
        document: &str,
    ) -> Result<ImportReport> {
        self.authorize(staff, Capability::Add)?;
        let vocabulary = YesNoVocabulary::from_settings(&self.store.settings()?);
        Ok(self
            .store
            .import_responses_csv(document, &vocabulary, self.now())?)
    }

    pub fn responses(&self, staff: &StaffAccount) -> Result<Vec<Response>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.responses()?)
    }

    /// The SMS ledger. There is deliberately no mutating counterpart.
    pub fn sms_log(&self, staff: &StaffAccount) -> Result<Vec<SmsRecord>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.sms_log()?)
    }

    pub fn sessions(&self, staff: &StaffAccount) -> Result<Vec<Session>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.sessions()?)
    }

    // ---- campaign --------------------------------------------------------

    pub fn dispatch(
        &self,
        staff: &StaffAccount,
        questionnaire: QuestionnaireId,
        group: GroupId,
    ) -> Result<DispatchReport> {
        self.authorize(staff, Capability::SendSms)?;
        Ok(self.engine.dispatch(questionnaire, group, self.now())?)
    }

    pub fn reattribute_response(
        &self,
        staff: &StaffAccount,
        response: ResponseId,
        question: QuestionId,
    ) -> Result<Response> {
        self.authorize(staff, Capability::EditDelete)?;
        Ok(self
            .engine
            .reattribute_response(response, question, staff.id, self.now())?)
    }

    pub fn stalls(&self, staff: &StaffAccount, since: Timestamp) -> Result<Vec<StallReport>> {
        self.authorize(staff, Capability::View)?;
        Ok(self.engine.detect_stalls(self.now(), since)?)
    }

    // ---- analytics -------------------------------------------------------

    pub fn summarize_question(
        &self,
        staff: &StaffAccount,
        id: QuestionId,
        filter: &[Predicate],
    ) -> Result<QuestionSummary> {
        self.authorize(staff, Capability::View)?;
        Ok(analytics::summarize_question(&self.store, id, filter)?)
    }

    pub fn summarize_attribute(
        &self,
        staff: &StaffAccount,
        name: &str,
    ) -> Result<AttributeSummary> {
        self.authorize(staff, Capability::View)?;
        Ok(analytics::summarize_attribute(&self.store, name)?)
    }

    pub fn timeline(
        &self,
        staff: &StaffAccount,
        from: Timestamp,
        to: Timestamp,
        bucket: Duration,
    ) -> Result<Vec<TimelinePoint>> {
        self.authorize(staff, Capability::View)?;
        Ok(analytics::timeline(&self.store, from, to, bucket)?)
    }

    pub fn export_summary(
        &self,
        staff: &StaffAccount,
        target: &SummaryTarget,
    ) -> Result<SummaryDocument> {
        self.authorize(staff, Capability::Download)?;
        Ok(analytics::export_summary_json(
            &self.store,
            target,
            self.now(),
        )?)
    }

    // ---- settings and staff ----------------------------------------------

    pub fn settings(&self, staff: &StaffAccount) -> Result<SystemSettings> {
        self.authorize(staff, Capability::View)?;
        Ok(self.store.settings()?)
    }

    pub fn update_settings(
        &self,
        staff: &StaffAccount,
        settings: SystemSettings,
    ) -> Result<SystemSettings> {
        self.authorize(staff, Capability::UpdateSettings)?;
        let known: BTreeSet<QuestionnaireId> = self
            .store
            .questionnaires()?
            .into_iter()
            .map(|q| q.id)
            .collect();
        settings.validate(|id| known.contains(&id))?;
        self.store.save_settings(&settings, staff.id, self.now())?;
        Ok(settings)
    }

    pub fn create_staff(
        &self,
        staff: &StaffAccount,
        name: &str,
        password: &str,
        level: AccessLevel,
    ) -> Result<StaffAccount> {
        self.authorize(staff, Capability::ManageStaff)?;
        Ok(self
            .store
            .insert_staff(name.trim(), &new_credential(password), level, self.now())?)
    }

    pub fn update_staff(
        &self,
        staff: &StaffAccount,
        id: StaffId,
        level: Option<AccessLevel>,
        active: Option<bool>,
        password: Option<&str>,
    ) -> Result<StaffAccount> {
        self.authorize(staff, Capability::ManageStaff)?;
        let hash = password.map(new_credential);
        Ok(self
            .store
            .update_staff(id, level, active, hash.as_deref())?)
    }

    pub fn staff_accounts(&self, staff: &StaffAccount) -> Result<Vec<StaffAccount>> {
        self.authorize(staff, Capability::ManageStaff)?;
        Ok(self.store.staff_accounts()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::EngineConfig;
    use crate::time::ManualClock;
    use crate::transport::RecordingGateway;

    fn service() -> (AdminService, StaffAccount) {
        let store = Arc::new(Store::open_in_memory().unwrap());
        let clock = Arc::new(ManualClock::new(Timestamp(1_000)));
        let engine = Arc::new(SessionEngine::new(
            store,
            Arc::new(RecordingGateway::new()),
            clock,
            EngineConfig::default(),
        ));
        let svc = AdminService::new(engine, Duration::from_secs(3600));
        let root = svc.bootstrap_superuser("root", "pw").unwrap();
        (svc, root)
    }

    #[test]
    fn login_and_token_expiry() {
        let (svc, _) = service();
        assert!(matches!(
            svc.login("root", "nope"),
            Err(ServiceError::InvalidCredentials)
        ));
        let token = svc.login("root", "pw").unwrap();
        assert_eq!(svc.authenticate(&token.token).unwrap().name, "root");
        assert!(matches!(
            svc.bootstrap_superuser("x", "y"),
            Err(ServiceError::AlreadyBootstrapped)
        ));
        svc.logout(&token.token);
        assert!(matches!(
            svc.authenticate(&token.token),
            Err(ServiceError::Unauthenticated)
        ));
    }

    #[test]
    fn settings_gate_and_validation() {
        let (svc, root) = service();
        let sender = svc
            .create_staff(&root, "sam", "pw", AccessLevel::Send)
            .unwrap();
        let mut s = SystemSettings {
            max_questionnaire_length: 10,
            ..SystemSettings::default()
        };
        assert!(svc.update_settings(&root, s.clone()).is_ok());
        assert!(matches!(
            svc.update_settings(&sender, s.clone()),
            Err(ServiceError::PermissionDenied { .. })
        ));
        s.opt_out_keyword = Some("STOP".into());
        s.sign_up_keyword = Some("stop".into());
        assert!(matches!(
            svc.update_settings(&root, s),
            Err(ServiceError::InvalidSettings(
                SettingsError::KeywordCollision
            ))
        ));
    }

    #[test]
    fn questionnaire_length_enforced() {
        let (svc, root) = service();
        svc.update_settings(
            &root,
            SystemSettings {
                max_questionnaire_length: 10,
                ..SystemSettings::default()
            },
        )
        .unwrap();
        let ids: Vec<QuestionId> = (0..11)
            .map(|i| {
                svc.create_question(&root, &format!("Q{i}?"), ResponseType::Numeric, None)
                    .unwrap()
                    .id
            })
            .collect();
        assert!(svc.create_questionnaire(&root, "ok", &ids[..3]).is_ok());
        assert!(matches!(
            svc.create_questionnaire(&root, "long", &ids),
            Err(ServiceError::Questionnaire(
                QuestionnaireError::ExceedsMaxLength { .. }
            ))
        ));
        assert!(matches!(
            svc.create_questionnaire(&root, "dup", &[ids[0], ids[0]]),
            Err(ServiceError::Questionnaire(
                QuestionnaireError::DuplicateQuestion(_)
            ))
        ));
    }

    #[test]
    fn protected_attribute_refused() {
        let (svc, root) = service();
        let r = svc
            .create_respondent(&root, "+291 7 123456", &BTreeMap::new())
            .unwrap();
        assert!(matches!(
            svc.upsert_attribute(&root, r.id, "created_at", "x", None),
            Err(ServiceError::Attribute(AttributeError::ProtectedField(_)))
        ));
        let r = svc
            .upsert_attribute(&root, r.id, "staff", "true", None)
            .unwrap();
        assert!(r.is_staff());
    }

    #[test]
    fn every_call_authorizes_once() {
        let (svc, root) = service();
        let viewer = svc
            .create_staff(&root, "vic", "pw", AccessLevel::ReadOnly)
            .unwrap();
        let before = svc.audit_log().len();
        let _ = svc.create_question(&viewer, "Q?", ResponseType::Numeric, None);
        let _ = svc.export_csv(&viewer, Table::Users, &[]);
        let log = svc.audit_log();
        assert_eq!(log.len(), before + 2);
        assert_eq!(log[before].decision, Decision::Deny);
        assert_eq!(log[before + 1].decision, Decision::Allow);
    }
}
