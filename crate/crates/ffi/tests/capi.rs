// SPDX-License-Identifier: Apache-2.0

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use serde_json::Value;
use smsurvey_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Takes ownership of a returned string.
fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { smsurvey_string_free(p) };
    s
}

fn last_error() -> String {
    let p = smsurvey_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn engine_lifecycle_and_inbound() {
    let mut engine = ptr::null_mut();
    assert_eq!(
        unsafe { smsurvey_engine_open(ptr::null(), ptr::null(), &mut engine) },
        SmsStatus::Ok
    );
    assert!(smsurvey_last_error().is_null());

    let mut out = ptr::null_mut();
    let status = unsafe {
        smsurvey_handle_inbound(
            engine,
            c("+291712340001").as_ptr(),
            c("hello").as_ptr(),
            1_767_225_600_000,
            &mut out,
        )
    };
    assert_eq!(status, SmsStatus::Ok);
    let result: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(result["seq"], 1);

    let status =
        unsafe { smsurvey_handle_inbound(engine, c("12").as_ptr(), c("x").as_ptr(), 0, &mut out) };
    assert_eq!(status, SmsStatus::InvalidInput);
    assert!(!last_error().is_empty());

    let mut csv = ptr::null_mut();
    let status =
        unsafe { smsurvey_export_csv(engine, c("sms_log").as_ptr(), ptr::null(), &mut csv) };
    assert_eq!(status, SmsStatus::Ok);
    let csv = take(csv);
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.contains("hello"));

    let mut csv = ptr::null_mut();
    let status = unsafe { smsurvey_export_csv(engine, c("nope").as_ptr(), ptr::null(), &mut csv) };
    assert_eq!(status, SmsStatus::NotFound);
    let status = unsafe {
        smsurvey_export_csv(engine, c("users").as_ptr(), c("bogus~~").as_ptr(), &mut csv)
    };
    assert_eq!(status, SmsStatus::InvalidInput);
    assert!(csv.is_null());

    unsafe { smsurvey_engine_free(engine) };
    unsafe { smsurvey_engine_free(ptr::null_mut()) };
}

#[test]
fn file_store_persists_between_handles() {
    let dir = tempfile::tempdir().unwrap();
    let db = c(dir.path().join("s.db").to_str().unwrap());
    let outbox = c(dir.path().join("outbox.jsonl").to_str().unwrap());
    for expected_rows in [2, 3] {
        let mut engine = ptr::null_mut();
        assert_eq!(
            unsafe { smsurvey_engine_open(db.as_ptr(), outbox.as_ptr(), &mut engine) },
            SmsStatus::Ok
        );
        let mut out = ptr::null_mut();
        unsafe {
            smsurvey_handle_inbound(
                engine,
                c("+291712340001").as_ptr(),
                c("hi").as_ptr(),
                1,
                &mut out,
            )
        };
        take(out);
        let mut csv = ptr::null_mut();
        unsafe { smsurvey_export_csv(engine, c("sms_log").as_ptr(), ptr::null(), &mut csv) };
        assert_eq!(take(csv).lines().count(), expected_rows);
        unsafe { smsurvey_engine_free(engine) };
    }
}

#[test]
fn null_arguments_are_reported() {
    let mut engine = ptr::null_mut();
    assert_eq!(
        unsafe { smsurvey_engine_open(ptr::null(), ptr::null(), ptr::null_mut()) },
        SmsStatus::NullArgument
    );
    assert_eq!(
        unsafe { smsurvey_engine_open(ptr::null(), ptr::null(), &mut engine) },
        SmsStatus::Ok
    );
    let mut out = ptr::null_mut();
    let status =
        unsafe { smsurvey_handle_inbound(engine, ptr::null(), c("x").as_ptr(), 0, &mut out) };
    assert_eq!(status, SmsStatus::NullArgument);
    assert!(last_error().contains("phone"));
    let status = unsafe {
        smsurvey_handle_inbound(
            ptr::null(),
            c("+291712340001").as_ptr(),
            c("x").as_ptr(),
            0,
            &mut out,
        )
    };
    assert_eq!(status, SmsStatus::NullArgument);
    let bad = [0xffu8, 0];
    let status = unsafe { smsurvey_normalize_numeric(bad.as_ptr().cast(), &mut out) };
    assert_eq!(status, SmsStatus::InvalidUtf8);
    unsafe { smsurvey_engine_free(engine) };
}

#[test]
fn codecs_and_normalizers() {
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { smsurvey_decode_bulk(c("U12F3Q1;A;3;;yes").as_ptr(), &mut out) },
        SmsStatus::Ok
    );
    let record = take(out);
    let parsed: Value = serde_json::from_str(&record).unwrap();
    assert_eq!(parsed["respondent_id"], 12);
    assert_eq!(parsed["answers"].as_array().unwrap().len(), 4);
    assert_eq!(
        unsafe { smsurvey_encode_bulk(c(&record).as_ptr(), &mut out) },
        SmsStatus::Ok
    );
    assert_eq!(take(out), "U12F3Q1;A;3;;yes");
    assert_eq!(
        unsafe { smsurvey_decode_bulk(c("U1F1Q1").as_ptr(), &mut out) },
        SmsStatus::InvalidInput
    );
    assert_eq!(
        unsafe { smsurvey_encode_bulk(c("{}").as_ptr(), &mut out) },
        SmsStatus::InvalidInput
    );

    assert_eq!(
        unsafe { smsurvey_normalize_numeric(c(" 12.5 ").as_ptr(), &mut out) },
        SmsStatus::Ok
    );
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(
        unsafe { smsurvey_normalize_numeric(c("many").as_ptr(), &mut out) },
        SmsStatus::Ok
    );
    let v: Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(v["status"], "failed");
    assert_eq!(
        unsafe { smsurvey_normalize_free_text(c("  fine.  ").as_ptr(), &mut out) },
        SmsStatus::Ok
    );
    take(out);

    let mut parts = 0u32;
    for (len, expected) in [
        (1usize, 1u32),
        (160, 1),
        (161, 2),
        (306, 2),
        (307, 3),
        (1530, 10),
    ] {
        let text = c(&"a".repeat(len));
        assert_eq!(
            unsafe { smsurvey_segment_count(text.as_ptr(), &mut parts) },
            SmsStatus::Ok
        );
        assert_eq!(parts, expected, "{len}");
    }
    assert_eq!(
        unsafe { smsurvey_segment_count(c(&"a".repeat(1531)).as_ptr(), &mut parts) },
        SmsStatus::InvalidInput
    );
}

#[test]
fn scenarios_run_through_the_c_abi() {
    let script = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/scenarios/keywords.scn"
    ))
    .unwrap();
    let run = || {
        let mut out = ptr::null_mut();
        let mut passed = false;
        assert_eq!(
            unsafe { smsurvey_run_scenario(c(&script).as_ptr(), &mut out, &mut passed) },
            SmsStatus::Ok
        );
        assert!(passed);
        take(out)
    };
    assert_eq!(run(), run());

    let mut out = ptr::null_mut();
    let mut passed = true;
    let status = unsafe {
        smsurvey_run_scenario(
            c("smsurvey-scenario 1\nbogus\n").as_ptr(),
            &mut out,
            &mut passed,
        )
    };
    assert_eq!(status, SmsStatus::InvalidInput);
    assert!(last_error().starts_with("line 2"));
    assert!(out.is_null());
}

#[test]
fn generated_header_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/smsurvey.h");
    let text = std::fs::read_to_string(header).unwrap();
    for symbol in [
        "smsurvey_engine_open",
        "smsurvey_engine_free",
        "smsurvey_handle_inbound",
        "smsurvey_export_csv",
        "smsurvey_run_scenario",
        "smsurvey_string_free",
        "smsurvey_last_error",
        "SMS_STATUS_PANIC = 8",
    ] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"smsurvey.h\"\n\
         int probe(void) {\n\
           SmsEngine *e = 0;\n\
           if (smsurvey_engine_open(0, 0, &e) != SMS_STATUS_OK) return 1;\n\
           smsurvey_engine_free(e);\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let status = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(e) => {
            eprintln!("skipping C compile check: {e}");
            return;
        }
    };
    assert!(status.success());
}
