// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use smsurvey::access::{authorize, Capability};
use smsurvey::model::filter::{
    filter_rows, CellValue, Column, ColumnType, Predicate, Row, Table, TableData,
};
use smsurvey::model::{
    build_options, AccessLevel, ParsedValue, Phone, ResponseType, StaffAccount, StaffId,
};
use smsurvey::parse::{
    decode_bulk, encode_bulk, normalize_categorical, normalize_free_text, normalize_numeric,
    sanitize_input, BulkRecord, ParseOutcome,
};
use smsurvey::transport::{segment_message, MessageId, SegmentLimits};

fn phone() -> Phone {
    Phone::parse("+291712340001").unwrap()
}

proptest! {
    #[test]
    fn segmentation_respects_capacity(text in "\\PC{1,1530}") {
        let limits = SegmentLimits::default();
        let segments = segment_message(MessageId(1), &text, &phone(), &limits).unwrap();
        let n = text.chars().count();
        let expected = if n <= 160 { 1 } else { n.div_ceil(153) };
        prop_assert_eq!(segments.len(), expected);
        prop_assert!(segments.len() <= 10);
        for (i, s) in segments.iter().enumerate() {
            prop_assert_eq!(s.part_index as usize, i + 1);
            prop_assert_eq!(s.part_count as usize, segments.len());
            let cap = if segments.len() == 1 { 160 } else { 153 };
            prop_assert!(s.payload.chars().count() <= cap);
        }
        let joined: String = segments.iter().map(|s| s.payload.as_str()).collect();
        prop_assert_eq!(joined, text);
    }

    #[test]
    fn bulk_round_trip(
        u in 1u64..u64::MAX,
        f in 1u64..u64::MAX,
        q in 1u32..u32::MAX / 2,
        answers in prop::collection::vec("[^;]{0,30}", 1..15),
    ) {
        let record = BulkRecord { respondent_id: u, questionnaire_id: f, start_question_ordinal: q, answers };
        let encoded = encode_bulk(&record).unwrap();
        prop_assert_eq!(decode_bulk(&encoded, true).unwrap(), record);
    }

    #[test]
    fn bulk_decode_is_total(body in "\\PC{0,80}") {
        if let Ok(record) = decode_bulk(&body, true) {
            prop_assert!(!record.answers.is_empty());
            let again = decode_bulk(&encode_bulk(&record).unwrap(), true).unwrap();
            prop_assert_eq!(again, record);
        }
        prop_assert!(decode_bulk(&body, false).is_err());
    }

    #[test]
    fn categorical_is_total(
        meanings in prop::collection::btree_set("[a-z]{2,10}", 2..8),
        raw in "\\PC{0,20}",
    ) {
        let meanings: Vec<String> = meanings.into_iter().collect();
        let options = build_options("Q?", ResponseType::Categorical, Some(&meanings)).unwrap();
        match normalize_categorical(&raw, &options) {
            ParseOutcome::Ok { value: ParsedValue::Code(c) } => prop_assert!(options.iter().any(|o| o.code == c)),
            ParseOutcome::Ok { value } => prop_assert!(false, "unexpected {:?}", value),
            ParseOutcome::Failed { .. } => {}
        }
    }

    #[test]
    fn normalizers_are_idempotent(raw in "\\PC{0,40}", n in -1.0e9f64..1.0e9) {
        if let ParseOutcome::Ok { value } = normalize_free_text(&raw) {
            prop_assert_eq!(normalize_free_text(&value.render()), ParseOutcome::Ok { value });
        }
        let value = normalize_numeric(&format!("{n}")).into_value();
        prop_assert_eq!(normalize_numeric(&value.render()).into_value(), value);
    }

    #[test]
    fn sanitized_input_is_bounded(raw in "\\PC{0,300}|[\\x00-\\x1f]{0,20}", cap in 1usize..200) {
        let s = sanitize_input(&raw, cap);
        prop_assert!(s.text.chars().count() <= cap);
        prop_assert!(!s.text.chars().any(|c| c.is_control() && c != '\n' && c != '\t'));
    }

    #[test]
    fn filters_conjoin(
        rows in prop::collection::vec((0i32..50, "[a-c]{1,3}"), 0..40),
        lo in 0i32..50,
        needle in "[a-c]",
    ) {
        let table = TableData {
            table: Table::Users,
            columns: vec![
                Column { name: "age".into(), ty: ColumnType::Number },
                Column { name: "village".into(), ty: ColumnType::Text },
            ],
            rows: rows
                .iter()
                .enumerate()
                .map(|(i, (age, village))| Row {
                    id: i as i64 + 1,
                    cells: BTreeMap::from([
                        ("age".to_string(), CellValue::Number(*age as f64)),
                        ("village".to_string(), CellValue::Text(village.clone())),
                    ]),
                })
                .collect(),
        };
        let a = Predicate::gt("age", &lo.to_string());
        let b = Predicate::contains("village", &needle);
        let ids = |ps: &[Predicate]| -> BTreeSet<i64> {
            filter_rows(&table, ps).unwrap().into_iter().map(|r| r.id).collect()
        };
        let both = ids(&[a.clone(), b.clone()]);
        let expected: BTreeSet<i64> = ids(&[a]).intersection(&ids(&[b])).copied().collect();
        prop_assert_eq!(&both, &expected);
        let oracle: BTreeSet<i64> = rows
            .iter()
            .enumerate()
            .filter(|(_, (age, village))| *age > lo && village.contains(needle.as_str()))
            .map(|(i, _)| i as i64 + 1)
            .collect();
        prop_assert_eq!(both, oracle);
    }
}

#[test]
fn capabilities_are_monotone_in_level() {
    let staff = |level| StaffAccount {
        id: StaffId(1),
        name: "s".into(),
        access_level: level,
        active: true,
        credential_hash: String::new(),
    };
    for cap in Capability::ALL {
        for (i, low) in AccessLevel::ALL.iter().enumerate() {
            for high in &AccessLevel::ALL[i..] {
                if authorize(&staff(*low), cap).is_allowed() {
                    assert!(
                        authorize(&staff(*high), cap).is_allowed(),
                        "{cap:?}: {low:?} but not {high:?}"
                    );
                }
            }
        }
    }
    let mut inactive = staff(AccessLevel::Superuser);
    inactive.active = false;
    assert!(Capability::ALL
        .iter()
        .all(|c| !authorize(&inactive, *c).is_allowed()));
}
