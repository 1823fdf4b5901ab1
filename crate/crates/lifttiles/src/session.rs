//! The authoritative session: simulator, targets, overrides and
//! subscriptions. Every mutation goes through [`Session::handle_frame`] or
//! [`Session::tick`].

use std::collections::BTreeMap;

use lifttiles_core::control::{control_step, Mode, SettleTracker, TargetAssignment, TargetError, ValveCommand};
use lifttiles_core::model::{ActuatorId, Layout, LayoutError};
use lifttiles_core::plan::{lower_bound_makespan, plan_exact, plan_greedy, PlanError, TransitionProblem, DEFAULT_RESOLUTION_S};
use lifttiles_core::shapes::{preset, Preset};
use lifttiles_core::sim::{SensorReading, SimError, SimWarning};
use lifttiles_core::{ControlConfig, SimConfig, Simulator};
use serde_json::{json, Value};

use crate::protocol::{
    self, ActuatorSnapshot, ErrorCode, Frame, LoadLayout, LoadPreset, MoveActuator, OverrideValve, Plan, Request,
    SetLoad, SetTarget, StateSnapshot, Subscribe,
};

/// Connection handle assigned by the transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub u64);

struct Rejection(ErrorCode, String);

impl Rejection {
    fn new(code: ErrorCode, msg: impl ToString) -> Self {
        Self(code, msg.to_string())
    }
}

type Handled = Result<Value, Rejection>;

impl From<TargetError> for Rejection {
    fn from(e: TargetError) -> Self {
        let code = match e {
            TargetError::UnknownActuator(_) => ErrorCode::BadId,
            TargetError::OutOfRange { .. } => ErrorCode::OutOfRange,
        };
        Rejection::new(code, e)
    }
}

impl From<LayoutError> for Rejection {
    fn from(e: LayoutError) -> Self {
        let code = match e {
            LayoutError::Overlap(..) => ErrorCode::Overlap,
            LayoutError::UnknownActuator(_) => ErrorCode::BadId,
            _ => ErrorCode::Invalid,
        };
        Rejection::new(code, e)
    }
}

impl From<SimError> for Rejection {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Layout(e) => e.into(),
            SimError::UnknownActuator(_) => Rejection::new(ErrorCode::BadId, e),
            SimError::LoadOutOfRange { .. } | SimError::HeightOutOfRange { .. } => {
                Rejection::new(ErrorCode::OutOfRange, e)
            }
            SimError::InvalidConfig => Rejection::new(ErrorCode::Invalid, e),
        }
    }
}

impl From<PlanError> for Rejection {
    fn from(e: PlanError) -> Self {
        let code = match e {
            PlanError::UnknownActuator(_) | PlanError::MissingCurrent(_) => ErrorCode::BadId,
            PlanError::OutOfRange { .. } => ErrorCode::OutOfRange,
            PlanError::TooLarge { .. } | PlanError::SearchBudget(_) => ErrorCode::TooLarge,
            PlanError::NoCapacity { .. } | PlanError::Resolution => ErrorCode::Invalid,
        };
        Rejection::new(code, e)
    }
}

pub struct Session {
    sim: Simulator,
    control: ControlConfig,
    targets: TargetAssignment,
    overrides: BTreeMap<ActuatorId, ValveCommand>,
    latest: BTreeMap<ActuatorId, SensorReading>,
    tracker: SettleTracker,
    subscribers: BTreeMap<ClientId, String>,
    seq: u64,
}

impl Session {
    pub fn new(layout: Layout, sim: SimConfig, control: ControlConfig) -> Result<Self, SessionError> {
        control.validate().map_err(|_| SessionError::Control)?;
        Ok(Self {
            sim: Simulator::new(layout, sim)?,
            control,
            targets: TargetAssignment::default(),
            overrides: BTreeMap::new(),
            latest: BTreeMap::new(),
            tracker: SettleTracker::new(),
            subscribers: BTreeMap::new(),
            seq: 0,
        })
    }

    pub fn sim(&self) -> &Simulator {
        &self.sim
    }

    /// Records every input and state from now on.
    pub fn enable_trace(&mut self) {
        self.sim.enable_trace();
    }

    pub fn targets(&self) -> &TargetAssignment {
        &self.targets
    }

    pub fn overridden(&self) -> impl Iterator<Item = &ActuatorId> {
        self.overrides.keys()
    }

    pub fn subscribers(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.subscribers.keys().copied()
    }

    pub fn disconnect(&mut self, client: ClientId) {
        self.subscribers.remove(&client);
    }

    /// Parses and handles one line. Always exactly one response.
    pub fn handle_line(&mut self, client: ClientId, line: &str) -> Frame {
        match Frame::parse(line) {
            Ok(frame) => self.handle_frame(client, &frame),
            Err(e) => Frame::err(protocol::salvage_id(line), ErrorCode::Malformed, e.to_string()),
        }
    }

    /// Handles one frame. Always exactly one `Ack` or `Err` with the
    /// frame's id.
    pub fn handle_frame(&mut self, client: ClientId, frame: &Frame) -> Frame {
        let request = match frame.decode() {
            Ok(r) => r,
            Err(e) => return Frame::err(frame.id.clone(), ErrorCode::Malformed, e.to_string()),
        };
        let result = match request {
            Request::SetTarget(p) => self.set_target(p),
            Request::LoadLayout(p) => self.load_layout(p),
            Request::LoadPreset(p) => self.load_preset(p),
            Request::OverrideValve(p) => self.override_valve(p),
            Request::MoveActuator(p) => self.move_actuator(p),
            Request::SetLoad(p) => self.set_load(p),
            Request::GetState(_) => Ok(serde_json::to_value(self.snapshot()).expect("snapshots serialize")),
            Request::Plan(p) => self.plan(p),
            Request::Subscribe(p) => Ok(self.subscribe(client, &frame.id, p)),
        };
        match result {
            Ok(payload) => Frame::ack(frame.id.clone(), payload),
            Err(Rejection(code, msg)) => Frame::err(frame.id.clone(), code, msg),
        }
    }

    fn install(&mut self, targets: TargetAssignment) -> Handled {
        targets.validate(self.sim.layout())?;
        for id in targets.targets.keys() {
            self.overrides.remove(id);
        }
        self.targets.merge(&targets);
        self.tracker = SettleTracker::new();
        Ok(json!({ "targets": targets.targets.len(), "t_s": self.sim.time() }))
    }

    fn set_target(&mut self, p: SetTarget) -> Handled {
        self.install(TargetAssignment::new(p.targets))
    }

    fn load_layout(&mut self, p: LoadLayout) -> Handled {
        self.sim.replace_layout(p.layout)?;
        self.targets = TargetAssignment::default();
        self.overrides.clear();
        self.latest.clear();
        self.tracker = SettleTracker::new();
        Ok(json!({ "actuators": self.sim.layout().actuators.len(), "t_s": self.sim.time() }))
    }

    fn load_preset(&mut self, p: LoadPreset) -> Handled {
        let which = Preset::from_name(&p.name).map_err(|e| Rejection::new(ErrorCode::Invalid, e))?;
        let map = preset(&which, self.sim.layout()).map_err(|e| Rejection::new(ErrorCode::Invalid, e))?;
        self.install(map.targets())?;
        Ok(json!({ "heightmap": map, "t_s": self.sim.time() }))
    }

    fn override_valve(&mut self, p: OverrideValve) -> Handled {
        let cmd = ValveCommand {
            actuator_id: p.actuator_id,
            supply: p.supply,
            release: p.release,
        };
        let warnings = self.sim.command(std::slice::from_ref(&cmd))?;
        let ignored = warnings.iter().any(|w| matches!(w, SimWarning::IgnoredBuckled(_)));
        self.overrides.insert(cmd.actuator_id.clone(), cmd);
        Ok(json!({ "ignored_buckled": ignored, "t_s": self.sim.time() }))
    }

    fn move_actuator(&mut self, p: MoveActuator) -> Handled {
        self.sim.move_actuator(&p.actuator_id, p.pose)?;
        Ok(json!({ "t_s": self.sim.time() }))
    }

    fn set_load(&mut self, p: SetLoad) -> Handled {
        self.sim.set_load(&p.actuator_id, p.load_kg)?;
        let fault = self.sim.state().states[&p.actuator_id].fault;
        Ok(json!({ "fault": fault, "t_s": self.sim.time() }))
    }

    fn plan(&mut self, p: Plan) -> Handled {
        let current = self.sim.state().heights();
        if let Some(from) = &p.from {
            for (id, h) in from {
                let now = current
                    .get(id)
                    .ok_or_else(|| Rejection::new(ErrorCode::BadId, format!("unknown actuator {id}")))?;
                if (now - h).abs() > self.control.deadband_cm {
                    return Err(Rejection::new(
                        ErrorCode::Stale,
                        format!("{id} is at {now} cm, request assumed {h} cm"),
                    ));
                }
            }
        }
        let problem = TransitionProblem::new(self.sim.layout(), current, p.targets)?;
        let schedule = if p.exact {
            plan_exact(&problem, p.resolution_s.unwrap_or(DEFAULT_RESOLUTION_S))?
        } else {
            plan_greedy(&problem)?
        };
        Ok(json!({
            "lower_bound_s": lower_bound_makespan(&problem)?,
            "schedule": schedule,
        }))
    }

    fn subscribe(&mut self, client: ClientId, id: &str, p: Subscribe) -> Value {
        if p.enabled {
            self.subscribers.insert(client, id.to_owned());
        } else {
            self.subscribers.remove(&client);
        }
        json!({ "subscribed": p.enabled })
    }

    /// Whether every target has been in band for the settle window.
    pub fn settled(&self) -> bool {
        self.tracker.status(&self.targets, &self.control).all
    }

    /// Next snapshot; sequence numbers strictly increase.
    pub fn snapshot(&mut self) -> StateSnapshot {
        self.seq += 1;
        let layout = self.sim.layout();
        let actuators = self
            .sim
            .state()
            .states
            .iter()
            .map(|(id, s)| ActuatorSnapshot {
                id: id.clone(),
                height_cm: s.height_cm,
                supply: s.supply,
                release: s.release,
                load_kg: s.load_kg,
                fault: s.fault,
                target_cm: self.targets.targets.get(id).copied(),
                overridden: self.overrides.contains_key(id),
                grid_index: layout.actuators.get(id).and_then(|p| p.pose.grid_index),
            })
            .collect();
        StateSnapshot {
            seq: self.seq,
            t_s: self.sim.time(),
            settled: self.settled(),
            actuators,
        }
    }

    /// One snapshot frame per subscriber, all sharing one sequence number.
    pub fn publish(&mut self) -> Vec<(ClientId, Frame)> {
        if self.subscribers.is_empty() {
            return Vec::new();
        }
        let snap = self.snapshot();
        self.subscribers
            .iter()
            .map(|(c, id)| (*c, Frame::snapshot(id.clone(), &snap)))
            .collect()
    }

    /// Sense if due, run the controller on targets that are not overridden,
    /// then advance the simulation one step. Returns whether a sensor sample
    /// was taken.
    pub fn tick(&mut self) -> bool {
        let sensed = match self.sim.sense_if_due() {
            Some(readings) => {
                for r in readings {
                    self.tracker.observe(&r, &self.targets, &self.control);
                    self.latest.insert(r.actuator_id.clone(), r);
                }
                true
            }
            None => false,
        };
        if sensed {
            let engaged = TargetAssignment::new(
                self.targets
                    .targets
                    .iter()
                    .filter(|(id, _)| !self.overrides.contains_key(*id))
                    .map(|(id, &h)| (id.clone(), h))
                    .collect(),
            );
            let modes: BTreeMap<ActuatorId, Mode> = self
                .sim
                .state()
                .states
                .iter()
                .map(|(id, s)| (id.clone(), Mode::of(s)))
                .collect();
            let out = control_step(&self.latest, &modes, &engaged, &self.control, self.sim.time());
            let changed: Vec<ValveCommand> = out
                .commands
                .into_iter()
                .filter(|c| modes.get(&c.actuator_id) != Some(&c.mode()))
                .collect();
            // every id came from the layout, so this cannot fail
            let _ = self.sim.command(&changed);
        }
        self.sim.step();
        sensed
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid control config")]
    Control,
}

#[cfg(test)]
mod tests {
    use super::*;
    use lifttiles_core::model::{build_grid_layout, ActuatorSpec, LinePolicy, Pose, ValveState};

    const C: ClientId = ClientId(1);

    fn session(rows: u32, cols: u32) -> Session {
        let layout = build_grid_layout(rows, cols, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
        Session::new(layout, SimConfig::noiseless(), ControlConfig::default()).unwrap()
    }

    fn code(f: &Frame) -> Option<ErrorCode> {
        f.error_body().map(|b| b.code)
    }

    #[test]
    fn set_target_reaches_band_in_sixteen_seconds() {
        let mut s = session(1, 1);
        let r = s.handle_line(C, r#"{"kind":"SetTarget","id":"a","payload":{"targets":{"r0c0":150}}}"#);
        assert_eq!(r.kind, protocol::FrameKind::Ack);
        let mut reached = None;
        while s.sim().time() < 20.0 {
            s.tick();
            let h = s.sim().state().states[&ActuatorId::from("r0c0")].height_cm;
            if reached.is_none() && h >= 148.0 {
                reached = Some(s.sim().time());
            }
        }
        let t = reached.unwrap();
        assert!((t - (133.0 / 8.4375)).abs() <= 0.05 + 1e-9, "{t}");
        assert!(s.settled());
    }

    #[test]
    fn override_wins_until_next_target() {
        let mut s = session(1, 1);
        let id = ActuatorId::from("r0c0");
        s.handle_line(C, r#"{"kind":"SetTarget","id":"1","payload":{"targets":{"r0c0":80}}}"#);
        let r = s.handle_line(
            C,
            r#"{"kind":"OverrideValve","id":"2","payload":{"actuator_id":"r0c0","supply":"Closed","release":"Closed"}}"#,
        );
        assert_eq!(r.kind, protocol::FrameKind::Ack);
        for _ in 0..40 {
            s.tick();
        }
        assert_eq!(s.sim().state().states[&id].height_cm, 15.0);
        s.handle_line(C, r#"{"kind":"SetTarget","id":"3","payload":{"targets":{"r0c0":80}}}"#);
        for _ in 0..40 {
            s.tick();
        }
        assert!(s.sim().state().states[&id].height_cm > 15.0);
        assert_eq!(s.overridden().count(), 0);
    }

    #[test]
    fn override_release_falls_in_four_seconds() {
        let mut s = session(1, 1);
        s.handle_line(C, r#"{"kind":"LoadPreset","id":"p","payload":{"name":"flat:150"}}"#);
        while s.sim().state().states[&ActuatorId::from("r0c0")].height_cm < 150.0 {
            s.tick();
        }
        let start = s.sim().time();
        s.handle_line(
            C,
            r#"{"kind":"OverrideValve","id":"o","payload":{"actuator_id":"r0c0","supply":"Closed","release":"Open"}}"#,
        );
        while s.sim().state().states[&ActuatorId::from("r0c0")].height_cm > 15.0 {
            s.tick();
        }
        assert!((s.sim().time() - start - 4.0).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn error_codes() {
        let mut s = session(2, 2);
        let r = s.handle_line(C, r#"{"kind":"SetTarget","id":"1","payload":{"targets":{"zz":50}}}"#);
        assert_eq!(code(&r), Some(ErrorCode::BadId));
        let r = s.handle_line(C, r#"{"kind":"SetTarget","id":"2","payload":{"targets":{"r0c0":500}}}"#);
        assert_eq!(code(&r), Some(ErrorCode::OutOfRange));
        let pose = serde_json::to_string(&Pose::floor(35.0, 0.0)).unwrap();
        let r = s.handle_line(
            C,
            &format!(r#"{{"kind":"MoveActuator","id":"3","payload":{{"actuator_id":"r0c0","pose":{pose}}}}}"#),
        );
        assert_eq!(code(&r), Some(ErrorCode::Overlap));
        let r = s.handle_line(
            C,
            r#"{"kind":"Plan","id":"4","payload":{"targets":{"r0c0":50},"from":{"r0c0":40}}}"#,
        );
        assert_eq!(code(&r), Some(ErrorCode::Stale));
        let r = s.handle_line(
            C,
            r#"{"kind":"Plan","id":"5","payload":{"targets":{"r0c0":50,"r0c1":50,"r1c0":50,"r1c1":50},"exact":true}}"#,
        );
        assert_eq!(r.kind, protocol::FrameKind::Ack);
        let mut big = session(3, 3);
        let r = big.handle_line(C, r#"{"kind":"LoadPreset","id":"6","payload":{"name":"flat:150"}}"#);
        assert_eq!(r.kind, protocol::FrameKind::Ack);
        let targets: BTreeMap<String, f64> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (format!("r{r}c{c}"), 60.0)))
            .collect();
        let req = json!({"kind":"Plan","id":"7","payload":{"targets":targets,"exact":true}});
        let r = big.handle_line(C, &req.to_string());
        assert_eq!(code(&r), Some(ErrorCode::TooLarge));
        let r = s.handle_line(C, r#"{"kind":"SetLoad","id":"8","payload":{"actuator_id":"r0c0","load_kg":99}}"#);
        assert_eq!(code(&r), Some(ErrorCode::OutOfRange));
        let r = s.handle_line(C, "{nope");
        assert_eq!(code(&r), Some(ErrorCode::Malformed));
        let r = s.handle_line(C, r#"{"kind":"Ack","id":"9","payload":{}}"#);
        assert_eq!((code(&r), r.id.as_str()), (Some(ErrorCode::Malformed), "9"));
    }

    #[test]
    fn flat_plan_is_empty() {
        let mut s = session(2, 2);
        let r = s.handle_line(C, r#"{"kind":"Plan","id":"1","payload":{"targets":{"r0c0":15,"r1c1":15}}}"#);
        assert_eq!(r.payload["schedule"]["predicted_makespan_s"], json!(0.0));
        assert_eq!(r.payload["schedule"]["phases"], json!([]));
    }

    #[test]
    fn snapshots_count_up() {
        let mut s = session(2, 2);
        s.handle_line(C, r#"{"kind":"Subscribe","id":"s","payload":{}}"#);
        let seqs: Vec<u64> = (0..5)
            .flat_map(|_| {
                s.tick();
                s.publish()
            })
            .map(|(_, f)| f.snapshot_body().unwrap().seq)
            .collect();
        assert!(seqs.windows(2).all(|w| w[0] < w[1]));
        s.disconnect(C);
        assert!(s.publish().is_empty());
        let snap = s.snapshot();
        assert!(snap.actuators.iter().all(|a| a.supply == ValveState::Closed));
    }

    #[test]
    fn load_layout_resets() {
        let mut s = session(2, 2);
        s.handle_line(C, r#"{"kind":"SetTarget","id":"1","payload":{"targets":{"r0c0":50}}}"#);
        let layout = build_grid_layout(1, 3, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
        let req = json!({"kind":"LoadLayout","id":"2","payload":{"layout":layout}});
        let r = s.handle_line(C, &req.to_string());
        assert_eq!(r.payload["actuators"], json!(3));
        assert!(s.targets().is_empty());
    }
}
