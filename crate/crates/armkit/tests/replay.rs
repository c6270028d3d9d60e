mod common;

use std::fs;

use armkit::replay::replay_file;
use armkit::session_csv::{CsvError, HEADER};
use armkit_core::protocol::{decode_record, Record};
use armkit_core::TherapyCode;
use common::{data_dir, profile, record, register};

#[test]
fn replay_reproduces_the_recorded_frames() {
    let (_t, data) = data_dir();
    let p = register(&data, "Ana Ruiz");
    let meta = record(&data, &p, profile(TherapyCode::ElbowFlexion, 0.5, 10.0), 4);
    let path = data.sessions().csv_path(&meta.session_id);
    let replay = replay_file(&path, 0.0).unwrap();
    let rows = data.sessions().load_rows(&meta.session_id).unwrap();
    assert_eq!(replay.rows(), &rows[..]);
    for (pair, row) in replay.frames().zip(&rows) {
        assert_eq!(pair, row.frames());
    }
    let mut out = Vec::new();
    assert_eq!(replay.play(&mut out).unwrap(), 2 * rows.len());
    let text = String::from_utf8(out).unwrap();
    let samples: Vec<_> = text
        .lines()
        .filter_map(|l| match decode_record(l).unwrap() {
            Record::Sample(f) => Some(f),
            _ => None,
        })
        .collect();
    let want: Vec<_> = rows.iter().flat_map(|r| r.frames()).collect();
    assert_eq!(samples, want);
}

#[test]
fn malformed_row_is_reported_with_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    let mut text = format!("{HEADER}\n");
    for i in 0..10 {
        let pitch = if i == 6 { "abc".to_string() } else { "1.00".to_string() };
        text += &format!("{},0.00,{pitch},0.00,0.00,0.00,0.00,0.0000\n", i * 20);
    }
    fs::write(&path, text).unwrap();
    match replay_file(&path, 0.0) {
        Err(CsvError::Row { row, .. }) => assert_eq!(row, 7),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_header_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    fs::write(&path, "t,a,b\n0,1,2\n").unwrap();
    assert!(matches!(replay_file(&path, 0.0), Err(CsvError::Header { .. })));
    assert!(replay_file(&tmp.path().join("absent.csv"), 0.0).is_err());
}
