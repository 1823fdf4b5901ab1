//! Closed-loop height regulation.
//!
//! Each actuator is driven bang-bang: the supply valve opens when the
//! measured height is more than `deadband_cm` below target, the release tap
//! opens when it is more than `deadband_cm` above, and both close inside the
//! band. A unit already moving keeps moving until its reading crosses the
//! target, so the band edges act as engage thresholds and the target itself
//! is the disengage point.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActuatorId, ActuatorState, Layout, ValveState};
use crate::num::abs;
use crate::sim::{SensorReading, Simulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub deadband_cm: f64,
    pub settle_hold_s: f64,
    pub stale_reading_timeout_s: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            deadband_cm: 2.0,
            settle_hold_s: 0.5,
            stale_reading_timeout_s: 0.5,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if self.deadband_cm > 0.0 && self.settle_hold_s >= 0.0 && self.stale_reading_timeout_s > 0.0 {
            Ok(())
        } else {
            Err(ControlError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValveCommand {
    pub actuator_id: ActuatorId,
    pub supply: ValveState,
    pub release: ValveState,
}

impl ValveCommand {
    pub fn extend(actuator_id: ActuatorId) -> Self {
        Self::for_mode(actuator_id, Mode::Extend)
    }

    pub fn retract(actuator_id: ActuatorId) -> Self {
        Self::for_mode(actuator_id, Mode::Retract)
    }

    pub fn hold(actuator_id: ActuatorId) -> Self {
        Self::for_mode(actuator_id, Mode::Hold)
    }

    pub fn for_mode(actuator_id: ActuatorId, mode: Mode) -> Self {
        let (supply, release) = match mode {
            Mode::Hold => (ValveState::Closed, ValveState::Closed),
            Mode::Extend => (ValveState::Open, ValveState::Closed),
            Mode::Retract => (ValveState::Closed, ValveState::Open),
        };
        Self {
            actuator_id,
            supply,
            release,
        }
    }

    pub fn mode(&self) -> Mode {
        Mode::from_valves(self.supply, self.release)
    }
}

/// What an actuator's valves are doing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Hold,
    Extend,
    Retract,
}

impl Mode {
    /// An open release tap dominates the supply valve.
    pub fn from_valves(supply: ValveState, release: ValveState) -> Self {
        match (supply, release) {
            (_, ValveState::Open) => Mode::Retract,
            (ValveState::Open, ValveState::Closed) => Mode::Extend,
            (ValveState::Closed, ValveState::Closed) => Mode::Hold,
        }
    }

    pub fn of(state: &ActuatorState) -> Self {
        Self::from_valves(state.supply, state.release)
    }
}

/// Target height per actuator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetAssignment {
    pub targets: BTreeMap<ActuatorId, f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TargetError {
    #[error("unknown actuator {0}")]
    UnknownActuator(ActuatorId),
    #[error("target {value} cm for {actuator} outside [{min}, {max}] cm")]
    OutOfRange {
        actuator: ActuatorId,
        value: f64,
        min: f64,
        max: f64,
    },
}

impl TargetAssignment {
    pub fn new(targets: BTreeMap<ActuatorId, f64>) -> Self {
        Self { targets }
    }

    pub fn validate(&self, layout: &Layout) -> Result<(), TargetError> {
        for (id, &value) in &self.targets {
            let spec = layout
                .spec(id)
                .ok_or_else(|| TargetError::UnknownActuator(id.clone()))?;
            if !spec.contains_height(value) {
                return Err(TargetError::OutOfRange {
                    actuator: id.clone(),
                    value,
                    min: spec.min_height_cm,
                    max: spec.max_height_cm,
                });
            }
        }
        Ok(())
    }

    /// Overwrites targets present in `other`; others keep their value.
    pub fn merge(&mut self, other: &TargetAssignment) {
        for (id, &h) in &other.targets {
            self.targets.insert(id.clone(), h);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid control config")]
    InvalidConfig,
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// Next valve mode for one actuator given its reading error
/// (`measured - target`) and what its valves currently do.
pub fn decide(error_cm: f64, current: Mode, deadband_cm: f64) -> Mode {
    if error_cm < -deadband_cm {
        Mode::Extend
    } else if error_cm > deadband_cm {
        Mode::Retract
    } else {
        match current {
            Mode::Extend if error_cm < 0.0 => Mode::Extend,
            Mode::Retract if error_cm > 0.0 => Mode::Retract,
            _ => Mode::Hold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlOutput {
    pub commands: Vec<ValveCommand>,
    /// Targeted actuators held because their reading was missing or stale.
    pub stale: Vec<ActuatorId>,
}

/// One control period. Pure in its inputs: latest reading per actuator, the
/// current valve modes (missing means [`Mode::Hold`]), targets and the
/// current time.
pub fn control_step(
    readings: &BTreeMap<ActuatorId, SensorReading>,
    modes: &BTreeMap<ActuatorId, Mode>,
    targets: &TargetAssignment,
    config: &ControlConfig,
    now_s: f64,
) -> ControlOutput {
    let mut out = ControlOutput::default();
    for (id, &target) in &targets.targets {
        let fresh = readings
            .get(id)
            .filter(|r| now_s - r.t_s <= config.stale_reading_timeout_s);
        let Some(reading) = fresh else {
            out.stale.push(id.clone());
            out.commands.push(ValveCommand::hold(id.clone()));
            continue;
        };
        let current = modes.get(id).copied().unwrap_or(Mode::Hold);
        let mode = decide(reading.measured_height_cm - target, current, config.deadband_cm);
        out.commands.push(ValveCommand::for_mode(id.clone(), mode));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SettleStatus {
    pub per_id: BTreeMap<ActuatorId, bool>,
    pub all: bool,
}

/// Incremental settle detector: an actuator is settled once its readings
/// have stayed within the deadband of target for the trailing hold window.
#[derive(Debug, Clone, Default)]
pub struct SettleTracker {
    /// Time of the first in-band reading of the current in-band streak.
    streak_start: BTreeMap<ActuatorId, Option<f64>>,
    latest_t: Option<f64>,
}

impl SettleTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, reading: &SensorReading, targets: &TargetAssignment, config: &ControlConfig) {
        self.latest_t = Some(match self.latest_t {
            Some(t) => t.max(reading.t_s),
            None => reading.t_s,
        });
        let Some(&target) = targets.targets.get(&reading.actuator_id) else {
            return;
        };
        let entry = self
            .streak_start
            .entry(reading.actuator_id.clone())
            .or_insert(None);
        if abs(reading.measured_height_cm - target) <= config.deadband_cm {
            entry.get_or_insert(reading.t_s);
        } else {
            *entry = None;
        }
    }

    pub fn status(&self, targets: &TargetAssignment, config: &ControlConfig) -> SettleStatus {
        let mut per_id = BTreeMap::new();
        for id in targets.targets.keys() {
            let settled = match (self.streak_start.get(id).copied().flatten(), self.latest_t) {
                (Some(start), Some(now)) => now - start >= config.settle_hold_s - 1e-9,
                _ => false,
            };
            per_id.insert(id.clone(), settled);
        }
        let all = per_id.values().all(|&s| s);
        SettleStatus { per_id, all }
    }
}

/// Settle status of a reading history (timestamps nondecreasing). An empty
/// target set is vacuously settled.
pub fn is_settled(history: &[SensorReading], targets: &TargetAssignment, config: &ControlConfig) -> SettleStatus {
    let mut tracker = SettleTracker::new();
    for r in history {
        tracker.observe(r, targets, config);
    }
    tracker.status(targets, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorReport {
    pub start_cm: f64,
    pub target_cm: f64,
    pub final_cm: f64,
    /// How far the true height passed the target in the travel direction.
    pub overshoot_cm: f64,
    pub residual_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    /// Time from start until the last actuator's valves closed for good.
    pub elapsed_s: f64,
    pub settled: bool,
    /// Time from start until the settle window was satisfied.
    pub settled_after_s: Option<f64>,
    pub max_overshoot_cm: f64,
    pub control_period_s: f64,
    pub actuators: BTreeMap<ActuatorId, ActuatorReport>,
    /// `(time from start, true height)` per step.
    pub trajectories: BTreeMap<ActuatorId, Vec<(f64, f64)>>,
}

/// Drives the simulator with [`control_step`] at the sensor rate until every
/// target is settled with valves closed, or until `timeout_s` elapses.
///
/// A timeout is not an error: the report comes back with `settled == false`
/// and per-actuator residuals.
pub fn run_to_target(
    sim: &mut Simulator,
    targets: &TargetAssignment,
    config: &ControlConfig,
    timeout_s: f64,
) -> Result<TransitionReport, ControlError> {
    config.validate()?;
    targets.validate(sim.layout())?;

    let start_t = sim.time();
    let start: BTreeMap<ActuatorId, f64> = targets
        .targets
        .keys()
        .filter_map(|id| sim.state().height(id).map(|h| (id.clone(), h)))
        .collect();
    let mut trajectories: BTreeMap<ActuatorId, Vec<(f64, f64)>> = start
        .iter()
        .map(|(id, &h)| (id.clone(), alloc::vec![(0.0, h)]))
        .collect();
    let mut overshoot: BTreeMap<ActuatorId, f64> = start.keys().map(|id| (id.clone(), 0.0)).collect();

    let mut latest: BTreeMap<ActuatorId, SensorReading> = BTreeMap::new();
    let mut tracker = SettleTracker::new();
    let mut last_stop = 0.0;
    let mut settled_after = None;
    let period = sim.config().sensor_period_s().max(sim.config().dt_s);

    loop {
        let now = sim.time();
        if let Some(readings) = sim.sense_if_due() {
            for r in readings {
                tracker.observe(&r, targets, config);
                latest.insert(r.actuator_id.clone(), r);
            }
            let modes: BTreeMap<ActuatorId, Mode> = sim
                .state()
                .states
                .iter()
                .map(|(id, s)| (id.clone(), Mode::of(s)))
                .collect();
            let out = control_step(&latest, &modes, targets, config, now);
            let mut changed = Vec::new();
            let mut all_hold = true;
            for cmd in out.commands {
                let mode = cmd.mode();
                let before = modes.get(&cmd.actuator_id).copied().unwrap_or(Mode::Hold);
                if mode != Mode::Hold {
                    all_hold = false;
                }
                if mode != before {
                    if mode == Mode::Hold {
                        last_stop = now - start_t;
                    }
                    changed.push(cmd);
                }
            }
            // targets were validated, so every id resolves
            let _ = sim.command(&changed);

            if all_hold && tracker.status(targets, config).all {
                settled_after = Some(now - start_t);
                break;
            }
        }
        if now - start_t >= timeout_s {
            break;
        }
        sim.step();
        let t_rel = sim.time() - start_t;
        for (id, traj) in trajectories.iter_mut() {
            let Some(h) = sim.state().height(id) else { continue };
            traj.push((t_rel, h));
            let (s, target) = (start[id], targets.targets[id]);
            let past = if target >= s { h - target } else { target - h };
            if let Some(o) = overshoot.get_mut(id) {
                *o = o.max(past);
            }
        }
    }

    let settled = settled_after.is_some();
    let actuators: BTreeMap<ActuatorId, ActuatorReport> = start
        .iter()
        .map(|(id, &s)| {
            let target = targets.targets[id];
            let final_cm = sim.state().height(id).unwrap_or(s);
            (
                id.clone(),
                ActuatorReport {
                    start_cm: s,
                    target_cm: target,
                    final_cm,
                    overshoot_cm: overshoot[id],
                    residual_cm: final_cm - target,
                },
            )
        })
        .collect();
    let max_overshoot_cm = actuators.values().map(|a| a.overshoot_cm).fold(0.0, f64::max);
    let elapsed_s = if settled { last_stop } else { sim.time() - start_t };
    sim.record_summary(elapsed_s, settled, max_overshoot_cm);

    Ok(TransitionReport {
        elapsed_s,
        settled,
        settled_after_s: settled_after,
        max_overshoot_cm,
        control_period_s: period,
        actuators,
        trajectories,
    })
}
