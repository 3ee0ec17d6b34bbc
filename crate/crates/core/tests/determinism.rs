mod common;

#[test]
fn pipelines_are_byte_identical_and_resumable() {
    common::determinism_check().unwrap();
}
