mod common;

use common::LqrInstance;
use pice_core::io::{read_buffer, read_policy, write_buffer, write_policy};
use pice_core::nalgebra::DMatrix;
use pice_core::plant::Phase;
use pice_core::valuefn::{ActionBox, LinearPolicy};
use pice_core::Error;

#[test]
fn buffer_round_trip_is_exact() {
    let inst = LqrInstance::standard();
    let samples = inst.samples(&DMatrix::zeros(3, 2), 40, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("buffer.jsonl");
    write_buffer(&path, &samples).unwrap();
    let back = read_buffer(&path).unwrap();
    assert_eq!(back.samples(), &samples[..]);
}

#[test]
fn buffer_parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "# header\n\n{\"x\": [1.0\n").unwrap();
    match read_buffer(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn gain_policy_round_trip() {
    let gain = DMatrix::from_row_slice(3, 2, &[0.2, -0.1, 0.0, 0.4, -0.3, 0.05]);
    let pi = LinearPolicy::from_gain(gain, ActionBox::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    write_policy(&path, &pi, Some(Phase::Ste), Some("unit".into())).unwrap();
    let back = read_policy(&path).unwrap();
    assert_eq!(back.phase, Some(Phase::Ste));
    assert_eq!(back.provenance.as_deref(), Some("unit"));
    for x in [[0.3, -0.7], [5.0, 5.0], [-2.0, 0.1]] {
        assert_eq!(pi.act(&x), back.policy.act(&x));
    }
}

#[test]
fn unknown_policy_format_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    let pi = LinearPolicy::zero(2, 3);
    write_policy(&path, &pi, None, None).unwrap();
    let text = std::fs::read_to_string(&path).unwrap().replace("\"version\": 1", "\"version\": 99");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(read_policy(&path), Err(Error::InvalidInput(_))));
}
