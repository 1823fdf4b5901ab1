//! Random and malformed frames straight into a session: no panics, exactly
//! one response per line, heights stay on the stroke.

mod common;

#[test]
fn hundred_thousand_frames() {
    let total = common::fuzz_session(common::CASES, common::LINES_PER_CASE).unwrap();
    assert_eq!(total, common::LINES_PER_CASE * common::CASES as usize);
}
