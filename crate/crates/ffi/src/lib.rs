// SPDX-License-Identifier: Apache-2.0

//! C ABI over the survey engine.
//!
//! Every entry point returns an [`SmsStatus`]. Results that are strings come
//! back through an out pointer and must be released with
//! [`smsurvey_string_free`]. After a non-OK status,
//! [`smsurvey_last_error`] describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use smsurvey::model::filter::{filter_rows, FilterError, Predicate, Table};
use smsurvey::parse::bulk::{BulkError, BulkRecord};
use smsurvey::parse::{decode_bulk, encode_bulk, normalize_free_text, normalize_numeric};
use smsurvey::scenario::{Scenario, ScenarioError};
use smsurvey::session::{EngineConfig, EngineError, SessionEngine};
use smsurvey::store::{export_csv, Store, StoreError};
use smsurvey::transport::{Gateway, OutboxGateway, RecordingGateway, SegmentLimits};
use smsurvey::{Phone, SystemClock, Timestamp};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    NotFound = 4,
    Conflict = 5,
    StorageUnavailable = 6,
    TransportError = 7,
    Panic = 8,
}

/// An open store plus the session engine driving it.
pub struct SmsEngine {
    engine: Arc<SessionEngine>,
    store: Arc<Store>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SmsStatus, String);

impl Failure {
    fn new(status: SmsStatus, e: impl std::fmt::Display) -> Self {
        Failure(status, e.to_string())
    }
}

fn store_status(e: &StoreError) -> SmsStatus {
    match e {
        StoreError::StorageUnavailable(_) | StoreError::Corrupt(_) => SmsStatus::StorageUnavailable,
        StoreError::NotFound { .. } => SmsStatus::NotFound,
        StoreError::MalformedCsv(_) => SmsStatus::InvalidInput,
        _ => SmsStatus::Conflict,
    }
}

fn engine_status(e: &EngineError) -> SmsStatus {
    match e {
        EngineError::Store(e) => store_status(e),
        EngineError::Transport(_) => SmsStatus::TransportError,
        EngineError::Reassembly(_)
        | EngineError::EmptyGroup(_)
        | EngineError::QuestionnaireEmpty(_) => SmsStatus::InvalidInput,
        _ => SmsStatus::NotFound,
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(store_status(&e), e)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::new(engine_status(&e), e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let status = match &e {
            ScenarioError::Malformed { .. } => SmsStatus::InvalidInput,
            ScenarioError::Engine { source, .. } => engine_status(source),
        };
        Failure::new(status, e)
    }
}

impl From<FilterError> for Failure {
    fn from(e: FilterError) -> Self {
        Failure::new(SmsStatus::InvalidInput, e)
    }
}

impl From<BulkError> for Failure {
    fn from(e: BulkError) -> Self {
        Failure::new(SmsStatus::InvalidInput, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(SmsStatus::InvalidInput, e)
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SmsStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("panic inside smsurvey");
            SmsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            SmsStatus::NullArgument,
            format!("{name} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SmsStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(
            SmsStatus::NullArgument,
            "output pointer is null",
        ));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure::new(SmsStatus::InvalidInput, e))?;
    if out.is_null() {
        return Err(Failure::new(
            SmsStatus::NullArgument,
            "output pointer is null",
        ));
    }
    out.write(c.into_raw());
    Ok(())
}

unsafe fn engine_ref<'a>(engine: *const SmsEngine) -> Result<&'a SmsEngine, Failure> {
    engine
        .as_ref()
        .ok_or_else(|| Failure::new(SmsStatus::NullArgument, "engine is null"))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// owned by the library and valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn smsurvey_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens the store at `path` (NULL or `:memory:` for a throwaway store).
/// Outbound messages are appended as JSON lines to `outbox_path`; when that
/// is NULL they are kept in memory and dropped with the engine.
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_engine_open(
    path: *const c_char,
    outbox_path: *const c_char,
    out: *mut *mut SmsEngine,
) -> SmsStatus {
    guard(|| {
        let path = opt_str_arg(path, "path")?;
        let outbox = opt_str_arg(outbox_path, "outbox_path")?;
        if out.is_null() {
            return Err(Failure::new(
                SmsStatus::NullArgument,
                "output pointer is null",
            ));
        }
        let store = Arc::new(match path {
            None | Some(":memory:") => Store::open_in_memory()?,
            Some(p) => Store::open(Path::new(p))?,
        });
        let gateway: Arc<dyn Gateway> = match outbox {
            Some(p) => Arc::new(OutboxGateway::new(p)),
            None => Arc::new(RecordingGateway::new()),
        };
        let engine = Arc::new(SessionEngine::new(
            store.clone(),
            gateway,
            Arc::new(SystemClock),
            EngineConfig::default(),
        ));
        write_out(out, Box::into_raw(Box::new(SmsEngine { engine, store })))
    })
}

/// # Safety
/// `engine` must be NULL or a handle from [`smsurvey_engine_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_engine_free(engine: *mut SmsEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Feeds one inbound SMS to the engine. `now_ms` is milliseconds since the
/// Unix epoch. Writes the outcome as JSON.
///
/// # Safety
/// `engine` must be a live handle; strings must be valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_handle_inbound(
    engine: *const SmsEngine,
    phone: *const c_char,
    text: *const c_char,
    now_ms: i64,
    out_json: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        let phone = Phone::parse(str_arg(phone, "phone")?)
            .map_err(|e| Failure::new(SmsStatus::InvalidInput, e))?;
        let text = str_arg(text, "text")?;
        let result = e.engine.handle_inbound(&phone, text, Timestamp(now_ms))?;
        write_string(out_json, serde_json::to_string(&result)?)
    })
}

/// Exports `table` (`users`, `responses`, `sms_log`, ...) as CSV.
/// `filters` holds zero or more filter expressions separated by newlines.
///
/// # Safety
/// `engine` must be a live handle; strings must be NULL or valid; `out_csv` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_export_csv(
    engine: *const SmsEngine,
    table: *const c_char,
    filters: *const c_char,
    out_csv: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        let e = engine_ref(engine)?;
        let table: Table = str_arg(table, "table")?
            .parse()
            .map_err(|err| Failure::new(SmsStatus::NotFound, err))?;
        let predicates = opt_str_arg(filters, "filters")?
            .unwrap_or("")
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::parse::<Predicate>)
            .collect::<Result<Vec<_>, _>>()?;
        let data = e.store.load_table(table)?;
        let rows = filter_rows(&data, &predicates)?;
        write_string(out_csv, export_csv(&data.columns, &rows)?)
    })
}

/// Runs a scenario script on a fresh in-memory store. Writes the JSON report
/// and whether every expectation held.
///
/// # Safety
/// `script` must be valid; both out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_run_scenario(
    script: *const c_char,
    out_json: *mut *mut c_char,
    out_passed: *mut bool,
) -> SmsStatus {
    guard(|| {
        let report = Scenario::parse(str_arg(script, "script")?)?.run()?;
        write_out(out_passed, report.passed)?;
        write_string(out_json, report.to_json())
    })
}

/// Decodes a bulk-answer SMS body into a JSON record.
///
/// # Safety
/// `body` must be valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_decode_bulk(
    body: *const c_char,
    out_json: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        let record = decode_bulk(str_arg(body, "body")?, true)?;
        write_string(out_json, serde_json::to_string(&record)?)
    })
}

/// Encodes a JSON record (as produced by [`smsurvey_decode_bulk`]) into a
/// bulk-answer SMS body.
///
/// # Safety
/// `record_json` must be valid; `out_body` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_encode_bulk(
    record_json: *const c_char,
    out_body: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        let record: BulkRecord = serde_json::from_str(str_arg(record_json, "record_json")?)?;
        write_string(out_body, encode_bulk(&record)?)
    })
}

/// Normalizes a numeric answer. Writes `{"status":"ok",...}` or
/// `{"status":"failed","reason":...}`; a failed parse is not an error.
///
/// # Safety
/// `raw` must be valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_normalize_numeric(
    raw: *const c_char,
    out_json: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        write_string(
            out_json,
            serde_json::to_string(&normalize_numeric(str_arg(raw, "raw")?))?,
        )
    })
}

/// # Safety
/// `raw` must be valid; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_normalize_free_text(
    raw: *const c_char,
    out_json: *mut *mut c_char,
) -> SmsStatus {
    guard(|| {
        write_string(
            out_json,
            serde_json::to_string(&normalize_free_text(str_arg(raw, "raw")?))?,
        )
    })
}

/// Number of SMS parts `text` needs under default segment limits.
/// Fails with `InvalidInput` past the part limit.
///
/// # Safety
/// `text` must be valid; `out_parts` writable.
#[no_mangle]
pub unsafe extern "C" fn smsurvey_segment_count(
    text: *const c_char,
    out_parts: *mut u32,
) -> SmsStatus {
    guard(|| {
        let limits = SegmentLimits::default();
        let parts = limits
            .parts_for(str_arg(text, "text")?.chars().count())
            .max(1);
        if parts > limits.max_parts {
            return Err(Failure::new(
                SmsStatus::InvalidInput,
                format!("message needs {parts} parts, limit is {}", limits.max_parts),
            ));
        }
        write_out(out_parts, parts as u32)
    })
}
