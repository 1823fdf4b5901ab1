//! Wire frames: one JSON object per line, fields `kind`, `id`, `payload`
//! in that order.
//!
//! Every request frame gets exactly one `Ack` or `Err` carrying the
//! request's `id`. `StateSnapshot` frames are pushed to subscribers with
//! `id` set to the subscription request's id and a strictly increasing
//! `seq` in the payload.

use std::collections::BTreeMap;

use lifttiles_core::model::{ActuatorId, Fault, Layout, Pose, ValveState};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameKind {
    SetTarget,
    LoadLayout,
    LoadPreset,
    OverrideValve,
    MoveActuator,
    SetLoad,
    GetState,
    Plan,
    Subscribe,
    StateSnapshot,
    Ack,
    Err,
}

impl FrameKind {
    pub const ALL: [FrameKind; 12] = [
        FrameKind::SetTarget,
        FrameKind::LoadLayout,
        FrameKind::LoadPreset,
        FrameKind::OverrideValve,
        FrameKind::MoveActuator,
        FrameKind::SetLoad,
        FrameKind::GetState,
        FrameKind::Plan,
        FrameKind::Subscribe,
        FrameKind::StateSnapshot,
        FrameKind::Ack,
        FrameKind::Err,
    ];

    /// Kinds a client may send.
    pub fn is_request(self) -> bool {
        !matches!(self, FrameKind::StateSnapshot | FrameKind::Ack | FrameKind::Err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub id: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    /// An actuator id the session does not know.
    BadId,
    /// A height, load or parameter outside its allowed range.
    OutOfRange,
    /// A move would make footprints overlap.
    Overlap,
    /// The request was based on state that has since changed.
    Stale,
    /// The instance is beyond what the requested planner handles.
    TooLarge,
    /// The line is not a frame, or the payload does not fit the kind.
    Malformed,
    /// Well-formed but rejected for another reason.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetTarget {
    pub targets: BTreeMap<ActuatorId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadLayout {
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadPreset {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideValve {
    pub actuator_id: ActuatorId,
    pub supply: ValveState,
    pub release: ValveState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveActuator {
    pub actuator_id: ActuatorId,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetLoad {
    pub actuator_id: ActuatorId,
    pub load_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GetState {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub targets: BTreeMap<ActuatorId, f64>,
    /// Heights the client planned from; rejected as stale when the units
    /// have since moved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<BTreeMap<ActuatorId, f64>>,
    #[serde(default)]
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscribe {
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorSnapshot {
    pub id: ActuatorId,
    pub height_cm: f64,
    pub supply: ValveState,
    pub release: ValveState,
    pub load_kg: f64,
    pub fault: Fault,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cm: Option<f64>,
    #[serde(default)]
    pub overridden: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_index: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u64,
    pub t_s: f64,
    pub settled: bool,
    pub actuators: Vec<ActuatorSnapshot>,
}

/// A decoded request.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    SetTarget(SetTarget),
    LoadLayout(LoadLayout),
    LoadPreset(LoadPreset),
    OverrideValve(OverrideValve),
    MoveActuator(MoveActuator),
    SetLoad(SetLoad),
    GetState(GetState),
    Plan(Plan),
    Subscribe(Subscribe),
}

impl Frame {
    pub fn new(kind: FrameKind, id: impl Into<String>, payload: Value) -> Self {
        Self {
            kind,
            id: id.into(),
            payload,
        }
    }

    pub fn request(id: impl Into<String>, request: &Request) -> Self {
        let (kind, payload) = match request {
            Request::SetTarget(p) => (FrameKind::SetTarget, to_value(p)),
            Request::LoadLayout(p) => (FrameKind::LoadLayout, to_value(p)),
            Request::LoadPreset(p) => (FrameKind::LoadPreset, to_value(p)),
            Request::OverrideValve(p) => (FrameKind::OverrideValve, to_value(p)),
            Request::MoveActuator(p) => (FrameKind::MoveActuator, to_value(p)),
            Request::SetLoad(p) => (FrameKind::SetLoad, to_value(p)),
            Request::GetState(p) => (FrameKind::GetState, to_value(p)),
            Request::Plan(p) => (FrameKind::Plan, to_value(p)),
            Request::Subscribe(p) => (FrameKind::Subscribe, to_value(p)),
        };
        Self::new(kind, id, payload)
    }

    pub fn ack(id: impl Into<String>, payload: Value) -> Self {
        Self::new(FrameKind::Ack, id, payload)
    }

    pub fn err(id: impl Into<String>, code: ErrorCode, message: impl Into<String>) -> Self {
        let body = ErrorBody {
            code,
            message: message.into(),
        };
        Self::new(FrameKind::Err, id, to_value(&body))
    }

    pub fn snapshot(id: impl Into<String>, snapshot: &StateSnapshot) -> Self {
        Self::new(FrameKind::StateSnapshot, id, to_value(snapshot))
    }

    /// One line of UTF-8 JSON without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }

    pub fn parse(line: &str) -> Result<Frame, serde_json::Error> {
        serde_json::from_str(line)
    }

    /// Decodes the payload of a request frame.
    pub fn decode(&self) -> Result<Request, DecodeError> {
        let p = match &self.payload {
            Value::Null => Value::Object(Default::default()),
            other => other.clone(),
        };
        let bad = |e: serde_json::Error| DecodeError::Payload(e.to_string());
        Ok(match self.kind {
            FrameKind::SetTarget => Request::SetTarget(serde_json::from_value(p).map_err(bad)?),
            FrameKind::LoadLayout => Request::LoadLayout(serde_json::from_value(p).map_err(bad)?),
            FrameKind::LoadPreset => Request::LoadPreset(serde_json::from_value(p).map_err(bad)?),
            FrameKind::OverrideValve => Request::OverrideValve(serde_json::from_value(p).map_err(bad)?),
            FrameKind::MoveActuator => Request::MoveActuator(serde_json::from_value(p).map_err(bad)?),
            FrameKind::SetLoad => Request::SetLoad(serde_json::from_value(p).map_err(bad)?),
            FrameKind::GetState => Request::GetState(serde_json::from_value(p).map_err(bad)?),
            FrameKind::Plan => Request::Plan(serde_json::from_value(p).map_err(bad)?),
            FrameKind::Subscribe => Request::Subscribe(serde_json::from_value(p).map_err(bad)?),
            k => return Err(DecodeError::NotARequest(k)),
        })
    }

    pub fn error_body(&self) -> Option<ErrorBody> {
        (self.kind == FrameKind::Err)
            .then(|| serde_json::from_value(self.payload.clone()).ok())
            .flatten()
    }

    pub fn snapshot_body(&self) -> Option<StateSnapshot> {
        (self.kind == FrameKind::StateSnapshot)
            .then(|| serde_json::from_value(self.payload.clone()).ok())
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("{0:?} is not a request kind")]
    NotARequest(FrameKind),
    #[error("bad payload: {0}")]
    Payload(String),
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payloads serialize")
}

/// Best-effort correlation id of a line that failed to parse as a frame.
pub fn salvage_id(line: &str) -> String {
    serde_json::from_str::<Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_default()
}
