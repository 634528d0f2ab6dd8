// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn smsurvey(db: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smsurvey"))
        .args(args)
        .env("SMSURVEY_STORAGE", db)
        .env_remove("SMSURVEY_CONFIG")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn run_scenario_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("unused.db");

    let out = smsurvey(&db, &["run-scenario", &scenario("two_member_group.scn")]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let text = std::fs::read_to_string(scenario("two_member_group.scn")).unwrap();
    let failing = dir.path().join("failing.scn");
    std::fs::write(&failing, format!("{text}\nexpect responses 999\n")).unwrap();
    let out = smsurvey(&db, &["run-scenario", failing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected"));

    let broken = dir.path().join("broken.scn");
    std::fs::write(&broken, "smsurvey-scenario 1\nfrobnicate\n").unwrap();
    let out = smsurvey(&db, &["run-scenario", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let written = dir.path().join("report.json");
    let out = smsurvey(
        &db,
        &[
            "run-scenario",
            &scenario("keywords.scn"),
            "-o",
            written.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&written).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
}

#[test]
fn bootstrap_export_and_import_against_a_file_store() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("survey.db");

    let out = Command::new(env!("CARGO_BIN_EXE_smsurvey"))
        .args(["staff", "bootstrap", "root"])
        .env("SMSURVEY_STORAGE", &db)
        .env("SMSURVEY_PASSWORD", "secret")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let staff: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(staff["access_level"], "superuser");
    assert!(staff.get("credential_hash").is_none());

    let again = smsurvey(&db, &["staff", "bootstrap", "other", "--password", "x"]);
    assert_eq!(again.status.code(), Some(2));

    let csv = dir.path().join("responses.csv");
    std::fs::write(
        &csv,
        "phone,questionnaire_id,question_ordinal,raw_text\n+291712340001,7,1,yes\nnot-a-phone,7,1,no\n",
    )
    .unwrap();
    let out = smsurvey(&db, &["import-responses", csv.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["accepted"], 0);
    assert_eq!(report["rejected"].as_array().unwrap().len(), 2);

    let out = smsurvey(&db, &["export", "users"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("id,phone,"));

    let out = smsurvey(&db, &["export", "users", "-f", "nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = smsurvey(&db, &["export", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
