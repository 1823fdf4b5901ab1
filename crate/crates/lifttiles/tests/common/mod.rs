//! Shared frame generators and golden-file helpers.
#![allow(dead_code)]

use std::path::PathBuf;

use lifttiles::protocol::{Frame, FrameKind};
use lifttiles::session::{ClientId, Session};
use lifttiles_core::model::{build_grid_layout, ActuatorSpec, LinePolicy};
use lifttiles_core::{ControlConfig, SimConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

pub const LINES_PER_CASE: usize = 1000;
pub const CASES: u32 = 100;

pub fn actuator() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => (0..4u32, 0..4u32).prop_map(|(r, c)| format!("r{r}c{c}")),
        1 => "[a-z]{1,3}",
    ]
}

pub fn height() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => 10.0..160.0f64,
        1 => Just(15.0),
        1 => Just(150.0),
        1 => -1e6..1e6f64,
    ]
}

pub fn valve() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("Open"), Just("Closed"), Just("Ajar")]
}

pub fn targets() -> impl Strategy<Value = Value> {
    prop::collection::btree_map(actuator(), height(), 0..5).prop_map(|m| json!(m))
}

pub fn request() -> impl Strategy<Value = (String, Value)> {
    prop_oneof![
        targets().prop_map(|t| ("SetTarget".into(), json!({ "targets": t }))),
        (targets(), any::<bool>(), prop::option::of(targets())).prop_map(|(t, exact, from)| {
            let mut p = json!({ "targets": t, "exact": exact });
            if let Some(f) = from {
                p["from"] = f;
            }
            ("Plan".into(), p)
        }),
        (actuator(), valve(), valve()).prop_map(|(a, s, r)| {
            ("OverrideValve".into(), json!({ "actuator_id": a, "supply": s, "release": r }))
        }),
        (actuator(), -5.0..50.0f64).prop_map(|(a, kg)| ("SetLoad".into(), json!({ "actuator_id": a, "load_kg": kg }))),
        (actuator(), -50.0..200.0f64, -50.0..200.0f64).prop_map(|(a, x, y)| {
            let pose = json!({ "x_cm": x, "y_cm": y, "orientation": "FloorVertical" });
            ("MoveActuator".into(), json!({ "actuator_id": a, "pose": pose }))
        }),
        prop_oneof![Just("flat"), Just("table"), Just("chair"), Just("flat:90"), Just("sofa")]
            .prop_map(|n| ("LoadPreset".into(), json!({ "name": n }))),
        Just(("GetState".into(), json!({}))),
        any::<bool>().prop_map(|e| ("Subscribe".into(), json!({ "enabled": e }))),
        Just(("LoadLayout".into(), json!({ "layout": { "actuators": {} } }))),
        prop_oneof![Just("Ack"), Just("Err"), Just("StateSnapshot"), Just("Launch")]
            .prop_map(|k| (k.to_string(), json!({}))),
    ]
}

pub fn frame() -> impl Strategy<Value = (String, Option<String>)> {
    (request(), "[a-z0-9]{0,6}").prop_map(|((kind, payload), id)| {
        let text = json!({ "kind": kind, "id": id, "payload": payload }).to_string();
        (text, Some(id))
    })
}

/// A line to send and the id an answer must carry, when one is knowable.
pub fn line() -> impl Strategy<Value = (String, Option<String>)> {
    prop_oneof![
        8 => frame(),
        1 => (frame(), any::<prop::sample::Index>()).prop_map(|((text, _), cut)| {
            let mut at = cut.index(text.len());
            while !text.is_char_boundary(at) {
                at -= 1;
            }
            (text[..at].to_owned(), None)
        }),
        1 => "\\PC{0,40}".prop_map(|s| (s, None)),
    ]
}

/// Feeds `cases` batches of `lines_per_case` random lines to fresh 3x3
/// sessions. Checks one well-formed response per line, with the request's
/// id when it had one, and heights on the stroke throughout.
pub fn fuzz_session(cases: u32, lines_per_case: usize) -> Result<usize, String> {
    let layout = build_grid_layout(3, 3, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let total = std::cell::Cell::new(0usize);
    runner
        .run(&prop::collection::vec(line(), lines_per_case), |lines| {
            let sim = SimConfig {
                seed: 3,
                ..SimConfig::default()
            };
            let mut session = Session::new(layout.clone(), sim, ControlConfig::default()).unwrap();
            for (i, (text, id)) in lines.iter().enumerate() {
                let response = session.handle_line(ClientId(1), text);
                prop_assert!(matches!(response.kind, FrameKind::Ack | FrameKind::Err));
                if let Some(id) = id {
                    prop_assert_eq!(&response.id, id);
                }
                // responses are themselves valid frames
                prop_assert_eq!(Frame::parse(&response.to_line()).unwrap(), response);
                if i % 7 == 0 {
                    session.tick();
                    session.publish();
                }
                for (id, s) in &session.sim().state().states {
                    let spec = &session.sim().layout().actuators[id].spec;
                    prop_assert!(s.height_cm >= spec.min_height_cm && s.height_cm <= spec.max_height_cm);
                }
                total.set(total.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(total.get())
}

pub fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn lines(name: &str) -> Vec<String> {
    std::fs::read_to_string(golden(name))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect()
}

/// Requests in order; after each response the session steps once and
/// publishes to subscribers.
pub fn transcript() -> String {
    let layout = build_grid_layout(3, 3, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let mut session = Session::new(layout, SimConfig::noiseless(), ControlConfig::default()).unwrap();
    let mut out = String::new();
    for line in lines("requests.jsonl") {
        out.push_str(&session.handle_line(ClientId(1), &line).to_line());
        out.push('\n');
        session.tick();
        for (_, f) in session.publish() {
            out.push_str(&f.to_line());
            out.push('\n');
        }
    }
    out
}

