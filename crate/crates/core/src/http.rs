// SPDX-License-Identifier: Apache-2.0

//! JSON over HTTP for [`AdminService`], plus the callback endpoints an
//! external SMS gateway posts replies and delivery receipts to.
//!
//! Staff authenticate with `POST /api/login` and send the returned token as
//! `Authorization: Bearer <token>`. Filters are strings in the CLI syntax
//! (`column=value`, `column~text`, `column<n`, `column>n`, `column:lo..hi`).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::analytics::{AnalyticsError, SummaryTarget};
use crate::model::filter::{FilterError, Predicate, Table};
use crate::model::{
    AccessLevel, AttributeHint, GroupId, Phone, QuestionId, QuestionnaireId, RespondentId,
    ResponseId, ResponseType, StaffAccount, StaffId, SystemSettings,
};
use crate::service::{AdminService, ServiceError};
use crate::session::EngineError;
use crate::store::StoreError;
use crate::time::Timestamp;
use crate::transport::{DeliveryReceipt, DeliveryStatus, MessageId};

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<AdminService>,
    /// Shared secret required in `X-Gateway-Token` on callback endpoints.
    pub gateway_token: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl ToString) -> Self {
        ApiError {
            status,
            kind,
            message: message.to_string(),
        }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: self.kind,
                message: self.message,
            }),
        )
            .into_response()
    }
}

fn store_status(e: &StoreError) -> (StatusCode, &'static str) {
    match e {
        StoreError::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
        StoreError::Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
        StoreError::DuplicatePhone(_)
        | StoreError::DuplicateStaff(_)
        | StoreError::OpenSessionExists(_)
        | StoreError::QuestionInUse(_)
        | StoreError::QuestionnaireInUse(_) => (StatusCode::CONFLICT, "conflict"),
        StoreError::MalformedCsv(_) => (StatusCode::UNPROCESSABLE_ENTITY, "malformed_csv"),
        StoreError::StorageUnavailable(_) => {
            (StatusCode::SERVICE_UNAVAILABLE, "storage_unavailable")
        }
        StoreError::Corrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt"),
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, kind) = match &e {
            ServiceError::PermissionDenied { .. } => (StatusCode::FORBIDDEN, "permission_denied"),
            ServiceError::Unauthenticated | ServiceError::InvalidCredentials => {
                (StatusCode::UNAUTHORIZED, "unauthenticated")
            }
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::AlreadyBootstrapped => (StatusCode::CONFLICT, "conflict"),
            ServiceError::InvalidSettings(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_settings")
            }
            ServiceError::Question(_)
            | ServiceError::Questionnaire(_)
            | ServiceError::Attribute(_)
            | ServiceError::Phone(_)
            | ServiceError::Filter(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Store(s) | ServiceError::Analytics(AnalyticsError::Store(s)) => {
                store_status(s)
            }
            ServiceError::Engine(EngineError::Store(s)) => store_status(s),
            ServiceError::Engine(EngineError::Transport(_)) => {
                (StatusCode::BAD_GATEWAY, "transport")
            }
            ServiceError::Engine(EngineError::Reassembly(_)) => {
                (StatusCode::BAD_REQUEST, "reassembly")
            }
            ServiceError::Engine(
                EngineError::UnknownQuestionnaire(_)
                | EngineError::UnknownGroup(_)
                | EngineError::UnknownResponse(_)
                | EngineError::UnknownQuestion(_),
            ) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Engine(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ServiceError::Analytics(
                AnalyticsError::UnknownQuestion(_) | AnalyticsError::UnknownAttribute(_),
            ) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Analytics(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, kind, e)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ServiceError::Engine(e).into()
    }
}

impl From<FilterError> for ApiError {
    fn from(e: FilterError) -> Self {
        ServiceError::Filter(e).into()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The authenticated staff account behind the bearer token.
pub struct Staff(pub StaffAccount);

impl FromRequestParts<AppState> for Staff {
    type Rejection = ApiError;

    async fn from_request_parts(
        parts: &mut Parts,
        state: &AppState,
    ) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ServiceError::Unauthenticated)?;
        Ok(Staff(state.service.authenticate(token.trim())?))
    }
}

fn parse_filters(filters: &[String]) -> Result<Vec<Predicate>, ApiError> {
    Ok(filters
        .iter()
        .map(|f| f.parse())
        .collect::<Result<_, FilterError>>()?)
}

fn parse_table(name: &str) -> Result<Table, ApiError> {
    name.parse()
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "unknown_table", e))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/login", post(login))
        .route("/api/logout", post(logout))
        .route("/api/questions", get(list_questions).post(create_question))
        .route(
            "/api/questions/{id}",
            get(get_question)
                .put(update_question)
                .delete(delete_question),
        )
        .route("/api/questions/{id}/preview", get(preview_question))
        .route(
            "/api/questionnaires",
            get(list_questionnaires).post(create_questionnaire),
        )
        .route(
            "/api/questionnaires/from-filter",
            post(questionnaire_from_filter),
        )
        .route("/api/questionnaires/{id}", put(update_questionnaire))
        .route(
            "/api/questionnaires/{id}/preview",
            get(preview_questionnaire),
        )
        .route("/api/users", get(list_users).post(create_user))
        .route(
            "/api/users/{id}/attributes/{name}",
            put(upsert_attribute).delete(remove_attribute),
        )
        .route("/api/users/{id}/active", put(set_active))
        .route("/api/attributes/{name}/hint", put(set_hint))
        .route("/api/groups", get(list_groups).post(create_group))
        .route("/api/groups/from-filter", post(group_from_filter))
        .route("/api/groups/{id}/members", put(set_members))
        .route("/api/tables/{table}", get(get_table))
        .route("/api/tables/{table}/filter", post(filter_table))
        .route("/api/tables/{table}/csv", post(export_table))
        .route("/api/responses", get(list_responses))
        .route("/api/responses/import", post(import_responses))
        .route("/api/responses/{id}/reattribute", post(reattribute))
        .route("/api/sms-log", get(sms_log))
        .route("/api/sessions", get(list_sessions))
        .route("/api/settings", get(get_settings).put(put_settings))
        .route("/api/dispatches", post(dispatch))
        .route("/api/summaries/questions/{id}", get(question_summary))
        .route("/api/summaries/attributes/{name}", get(attribute_summary))
        .route("/api/summaries/export", post(export_summary))
        .route("/api/timeline", get(timeline))
        .route("/api/stalls", get(stalls))
        .route("/api/staff", get(list_staff).post(create_staff))
        .route("/api/staff/{id}", put(update_staff))
        .route("/gateway/inbound", post(gateway_inbound))
        .route("/gateway/receipt", post(gateway_receipt))
        .with_state(state)
}

// ---- authentication ------------------------------------------------------

#[derive(Debug, Deserialize)]
struct LoginRequest {
    name: String,
    password: String,
}

async fn login(State(st): State<AppState>, Json(req): Json<LoginRequest>) -> impl IntoResponse {
    st.service
        .login(&req.name, &req.password)
        .map(Json)
        .map_err(ApiError::from)
}

async fn logout(State(st): State<AppState>, headers: HeaderMap) -> StatusCode {
    if let Some(token) = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
    {
        st.service.logout(token.trim());
    }
    StatusCode::NO_CONTENT
}

// ---- questions -----------------------------------------------------------

#[derive(Debug, Deserialize)]
struct QuestionRequest {
    text: String,
    response_type: Option<ResponseType>,
    options: Option<Vec<String>>,
    expected_version: Option<i64>,
}

async fn list_questions(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.questions(&s)?))
}

async fn create_question(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<QuestionRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let ty = req
        .response_type
        .ok_or_else(|| ApiError::bad_request("response_type is required"))?;
    let q = st
        .service
        .create_question(&s, &req.text, ty, req.options.as_deref())?;
    Ok((StatusCode::CREATED, Json(q)))
}

async fn get_question(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.question(&s, QuestionId(id))?))
}

async fn update_question(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<QuestionRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.update_question(
        &s,
        QuestionId(id),
        &req.text,
        req.options.as_deref(),
        req.expected_version,
    )?))
}

async fn delete_question(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
) -> Result<StatusCode, ApiError> {
    st.service.delete_question(&s, QuestionId(id))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Serialize)]
struct Preview {
    messages: Vec<String>,
}

async fn preview_question(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
) -> ApiResult<Preview> {
    Ok(Json(Preview {
        messages: vec![st.service.preview_question(&s, QuestionId(id))?],
    }))
}

// ---- questionnaires ------------------------------------------------------

#[derive(Debug, Deserialize)]
struct QuestionnaireRequest {
    name: String,
    question_ids: Vec<QuestionId>,
}

#[derive(Debug, Deserialize)]
struct FromFilterRequest {
    name: String,
    #[serde(default)]
    filters: Vec<String>,
}

async fn list_questionnaires(
    State(st): State<AppState>,
    Staff(s): Staff,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.questionnaires(&s)?))
}

async fn create_questionnaire(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<QuestionnaireRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let qn = st
        .service
        .create_questionnaire(&s, &req.name, &req.question_ids)?;
    Ok((StatusCode::CREATED, Json(qn)))
}

async fn questionnaire_from_filter(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<FromFilterRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let filters = parse_filters(&req.filters)?;
    let qn = st
        .service
        .create_questionnaire_from_filter(&s, &req.name, &filters)?;
    Ok((StatusCode::CREATED, Json(qn)))
}

async fn update_questionnaire(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<QuestionnaireRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.update_questionnaire(
        &s,
        QuestionnaireId(id),
        &req.name,
        &req.question_ids,
    )?))
}

async fn preview_questionnaire(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
) -> ApiResult<Preview> {
    Ok(Json(Preview {
        messages: st.service.preview_questionnaire(&s, QuestionnaireId(id))?,
    }))
}

// ---- users ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct UserRequest {
    phone: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct AttributeRequest {
    value: String,
    expected_version: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct ActiveRequest {
    active: bool,
}

#[derive(Debug, Deserialize)]
struct HintRequest {
    hint: AttributeHint,
}

async fn list_users(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.respondents(&s)?))
}

async fn create_user(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<UserRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let r = st
        .service
        .create_respondent(&s, &req.phone, &req.attributes)?;
    Ok((StatusCode::CREATED, Json(r)))
}

async fn upsert_attribute(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path((id, name)): Path<(i64, String)>,
    Json(req): Json<AttributeRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.upsert_attribute(
        &s,
        RespondentId(id),
        &name,
        &req.value,
        req.expected_version,
    )?))
}

async fn remove_attribute(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path((id, name)): Path<(i64, String)>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.remove_attribute(
        &s,
        RespondentId(id),
        &name,
    )?))
}

async fn set_active(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<ActiveRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.set_respondent_active(
        &s,
        RespondentId(id),
        req.active,
    )?))
}

async fn set_hint(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(name): Path<String>,
    Json(req): Json<HintRequest>,
) -> Result<StatusCode, ApiError> {
    st.service.set_attribute_hint(&s, &name, req.hint)?;
    Ok(StatusCode::NO_CONTENT)
}

// ---- groups --------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct GroupRequest {
    name: String,
    #[serde(default)]
    member_ids: BTreeSet<RespondentId>,
}

#[derive(Debug, Deserialize)]
struct MembersRequest {
    member_ids: BTreeSet<RespondentId>,
}

async fn list_groups(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.groups(&s)?))
}

async fn create_group(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<GroupRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let g = st.service.create_group(&s, &req.name, &req.member_ids)?;
    Ok((StatusCode::CREATED, Json(g)))
}

async fn group_from_filter(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<FromFilterRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let filters = parse_filters(&req.filters)?;
    let g = st
        .service
        .create_group_from_filter(&s, &req.name, &filters)?;
    Ok((StatusCode::CREATED, Json(g)))
}

async fn set_members(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<MembersRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.set_group_members(
        &s,
        GroupId(id),
        &req.member_ids,
    )?))
}

// ---- tables --------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
struct FilterRequest {
    #[serde(default)]
    filters: Vec<String>,
}

async fn get_table(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(table): Path<String>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.table(&s, parse_table(&table)?)?))
}

async fn filter_table(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(table): Path<String>,
    Json(req): Json<FilterRequest>,
) -> ApiResult<impl Serialize> {
    let filters = parse_filters(&req.filters)?;
    Ok(Json(st.service.filter_rows(
        &s,
        parse_table(&table)?,
        &filters,
    )?))
}

async fn export_table(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(table): Path<String>,
    body: Option<Json<FilterRequest>>,
) -> Result<impl IntoResponse, ApiError> {
    let filters = parse_filters(&body.map(|Json(b)| b).unwrap_or_default().filters)?;
    let table = parse_table(&table)?;
    let csv = st.service.export_csv(&s, table, &filters)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{table}.csv\""),
            ),
        ],
        csv,
    ))
}

// ---- responses and ledger ------------------------------------------------

#[derive(Debug, Deserialize)]
struct ReattributeRequest {
    question_id: QuestionId,
}

async fn list_responses(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.responses(&s)?))
}

async fn import_responses(
    State(st): State<AppState>,
    Staff(s): Staff,
    body: String,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.import_responses_csv(&s, &body)?))
}

async fn reattribute(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<ReattributeRequest>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.reattribute_response(
        &s,
        ResponseId(id),
        req.question_id,
    )?))
}

async fn sms_log(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.sms_log(&s)?))
}

async fn list_sessions(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.sessions(&s)?))
}

// ---- settings, dispatch --------------------------------------------------

async fn get_settings(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<SystemSettings> {
    Ok(Json(st.service.settings(&s)?))
}

async fn put_settings(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(settings): Json<SystemSettings>,
) -> ApiResult<SystemSettings> {
    Ok(Json(st.service.update_settings(&s, settings)?))
}

#[derive(Debug, Deserialize)]
struct DispatchRequest {
    questionnaire_id: QuestionnaireId,
    group_id: GroupId,
}

async fn dispatch(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<DispatchRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let report = st
        .service
        .dispatch(&s, req.questionnaire_id, req.group_id)?;
    Ok((StatusCode::CREATED, Json(report)))
}

// ---- analytics -----------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
struct SummaryQuery {
    /// One filter over the responses table, e.g. `user.village=Keren`.
    filter: Option<String>,
}

async fn question_summary(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Query(q): Query<SummaryQuery>,
) -> ApiResult<impl Serialize> {
    let filters = parse_filters(&q.filter.into_iter().collect::<Vec<_>>())?;
    Ok(Json(st.service.summarize_question(
        &s,
        QuestionId(id),
        &filters,
    )?))
}

async fn attribute_summary(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(name): Path<String>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.summarize_attribute(&s, &name)?))
}

async fn export_summary(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(target): Json<SummaryTarget>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.export_summary(&s, &target)?))
}

#[derive(Debug, Deserialize)]
struct TimelineQuery {
    from: Timestamp,
    to: Timestamp,
    bucket: Option<String>,
}

async fn timeline(
    State(st): State<AppState>,
    Staff(s): Staff,
    Query(q): Query<TimelineQuery>,
) -> ApiResult<impl Serialize> {
    let bucket = match q.bucket.as_deref() {
        Some(b) => humantime::parse_duration(b).map_err(ApiError::bad_request)?,
        None => Duration::from_secs(3600),
    };
    Ok(Json(st.service.timeline(&s, q.from, q.to, bucket)?))
}

#[derive(Debug, Deserialize)]
struct StallQuery {
    since: Option<Timestamp>,
}

async fn stalls(
    State(st): State<AppState>,
    Staff(s): Staff,
    Query(q): Query<StallQuery>,
) -> ApiResult<impl Serialize> {
    Ok(Json(
        st.service.stalls(&s, q.since.unwrap_or(Timestamp::EPOCH))?,
    ))
}

// ---- staff ---------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct StaffRequest {
    name: String,
    password: String,
    access_level: AccessLevel,
}

#[derive(Debug, Deserialize)]
struct StaffUpdate {
    access_level: Option<AccessLevel>,
    active: Option<bool>,
    password: Option<String>,
}

async fn list_staff(State(st): State<AppState>, Staff(s): Staff) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.staff_accounts(&s)?))
}

async fn create_staff(
    State(st): State<AppState>,
    Staff(s): Staff,
    Json(req): Json<StaffRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let staff = st
        .service
        .create_staff(&s, &req.name, &req.password, req.access_level)?;
    Ok((StatusCode::CREATED, Json(staff)))
}

async fn update_staff(
    State(st): State<AppState>,
    Staff(s): Staff,
    Path(id): Path<i64>,
    Json(req): Json<StaffUpdate>,
) -> ApiResult<impl Serialize> {
    Ok(Json(st.service.update_staff(
        &s,
        StaffId(id),
        req.access_level,
        req.active,
        req.password.as_deref(),
    )?))
}

// ---- gateway callbacks ---------------------------------------------------

fn check_gateway(st: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    match &st.gateway_token {
        None => Ok(()),
        Some(expected) => {
            let given = headers.get("x-gateway-token").and_then(|v| v.to_str().ok());
            if given == Some(expected.as_str()) {
                Ok(())
            } else {
                Err(ApiError::new(
                    StatusCode::UNAUTHORIZED,
                    "unauthenticated",
                    "bad gateway token",
                ))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
struct InboundRequest {
    phone: String,
    text: String,
}

async fn gateway_inbound(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<InboundRequest>,
) -> ApiResult<impl Serialize> {
    check_gateway(&st, &headers)?;
    let phone = Phone::parse(&req.phone)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", e))?;
    let engine = st.service.engine();
    let now = engine.clock().now();
    Ok(Json(engine.handle_inbound(&phone, &req.text, now)?))
}

#[derive(Debug, Deserialize)]
struct ReceiptRequest {
    message_id: MessageId,
    status: DeliveryStatus,
    at: Option<Timestamp>,
}

async fn gateway_receipt(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<ReceiptRequest>,
) -> Result<StatusCode, ApiError> {
    check_gateway(&st, &headers)?;
    let engine = st.service.engine();
    let at = req.at.unwrap_or_else(|| engine.clock().now());
    engine.on_receipt(&DeliveryReceipt {
        message_id: req.message_id,
        status: req.status,
        at,
    })?;
    Ok(StatusCode::NO_CONTENT)
}
