//! Minimum-makespan valve schedules for shape transitions.
//!
//! Planning uses the fluid model the simulator implements: a unit with flow
//! share `s` extends at `s` times its full rate, shares on one line sum to at
//! most the line capacity and no share exceeds its valve cap. Retraction is
//! spring driven and draws on no shared resource.
//!
//! Extension work is measured in *flow-seconds*: the time the unit would take
//! with a full compressor unit behind it.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ValveCommand;
use crate::flow::water_fill;
use crate::model::{ActuatorId, Layout, LineId};
use crate::num::abs;
use crate::sim::Simulator;

mod exact;
mod greedy;

pub use exact::{plan_exact, DEFAULT_RESOLUTION_S, MAX_EXACT_ACTUATORS};
pub use greedy::plan_greedy;

/// Height differences below this are treated as already at target.
pub const HEIGHT_EPS_CM: f64 = 1e-9;

const TIME_EPS_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("unknown actuator {0}")]
    UnknownActuator(ActuatorId),
    #[error("no current height for {0}")]
    MissingCurrent(ActuatorId),
    #[error("height {height_cm} cm for {actuator} outside [{min}, {max}] cm")]
    OutOfRange {
        actuator: ActuatorId,
        height_cm: f64,
        min: f64,
        max: f64,
    },
    #[error("{actuator} is on no supply line with capacity")]
    NoCapacity { actuator: ActuatorId },
    #[error("{moving} moving actuators exceeds the exact planner limit of {limit}")]
    TooLarge { moving: usize, limit: usize },
    #[error("exact search gave up after {0} nodes")]
    SearchBudget(usize),
    #[error("resolution must be positive")]
    Resolution,
}

/// Move every actuator in `target` from its `current` height to the target.
/// Actuators without a target stay where they are.
#[derive(Debug, Clone)]
pub struct TransitionProblem<'a> {
    pub layout: &'a Layout,
    pub current: BTreeMap<ActuatorId, f64>,
    pub target: BTreeMap<ActuatorId, f64>,
}

impl<'a> TransitionProblem<'a> {
    pub fn new(
        layout: &'a Layout,
        current: BTreeMap<ActuatorId, f64>,
        target: BTreeMap<ActuatorId, f64>,
    ) -> Result<Self, PlanError> {
        let p = Self {
            layout,
            current,
            target,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        for (id, &h) in self.current.iter().chain(self.target.iter()) {
            let spec = self
                .layout
                .spec(id)
                .ok_or_else(|| PlanError::UnknownActuator(id.clone()))?;
            if !spec.contains_height(h) {
                return Err(PlanError::OutOfRange {
                    actuator: id.clone(),
                    height_cm: h,
                    min: spec.min_height_cm,
                    max: spec.max_height_cm,
                });
            }
        }
        for id in self.target.keys() {
            if !self.current.contains_key(id) {
                return Err(PlanError::MissingCurrent(id.clone()));
            }
        }
        Ok(())
    }

    /// Work items of the transition, split into extensions per line and
    /// retractions.
    pub(crate) fn jobs(&self) -> Result<Jobs, PlanError> {
        let mut jobs = Jobs::default();
        for (id, &to) in &self.target {
            let from = self.current[id];
            let delta = to - from;
            if abs(delta) <= HEIGHT_EPS_CM {
                continue;
            }
            let spec = self
                .layout
                .spec(id)
                .ok_or_else(|| PlanError::UnknownActuator(id.clone()))?;
            if delta > 0.0 {
                let line = self
                    .layout
                    .line_of(id)
                    .filter(|l| self.layout.line_capacity(l) > 0.0)
                    .ok_or_else(|| PlanError::NoCapacity { actuator: id.clone() })?;
                let group = jobs.lines.entry(line.id.clone()).or_insert_with(|| LineJobs {
                    capacity: self.layout.line_capacity(line),
                    jobs: Vec::new(),
                });
                group.jobs.push(ExtendJob {
                    id: id.clone(),
                    work: delta / spec.effective_extend_rate(),
                    cap: spec.valve_max_flow_units,
                });
            } else {
                jobs.retract.push((id.clone(), -delta / spec.retract_rate_cm_s));
            }
        }
        Ok(jobs)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ExtendJob {
    pub id: ActuatorId,
    /// Flow-seconds of extension still needed.
    pub work: f64,
    pub cap: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LineJobs {
    pub capacity: f64,
    pub jobs: Vec<ExtendJob>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Jobs {
    pub lines: BTreeMap<LineId, LineJobs>,
    /// `(id, seconds)` of spring-driven retraction.
    pub retract: Vec<(ActuatorId, f64)>,
}

impl Jobs {
    pub fn moving(&self) -> usize {
        self.retract.len() + self.lines.values().map(|l| l.jobs.len()).sum::<usize>()
    }
}

/// No schedule can finish before this: each line must deliver its total
/// extension work, each unit is limited by its valve cap and line capacity,
/// and each retraction takes its own time.
pub fn lower_bound_makespan(problem: &TransitionProblem<'_>) -> Result<f64, PlanError> {
    problem.validate()?;
    let jobs = problem.jobs()?;
    let mut bound = 0.0f64;
    for line in jobs.lines.values() {
        let total: f64 = line.jobs.iter().map(|j| j.work).sum();
        bound = bound.max(total / line.capacity);
        for j in &line.jobs {
            bound = bound.max(j.work / j.cap.min(line.capacity));
        }
    }
    for &(_, t) in &jobs.retract {
        bound = bound.max(t);
    }
    Ok(bound)
}

/// One interval of constant valve settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration_s: f64,
    pub extending: BTreeSet<ActuatorId>,
    pub retracting: BTreeSet<ActuatorId>,
    /// Expected flow share per extending unit. Empty means "whatever the
    /// line's water-filling gives".
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub shares: BTreeMap<ActuatorId, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<Phase>,
    pub predicted_makespan_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("phase {0}: duration must be positive")]
    Duration(usize),
    #[error("phase {phase}: {actuator} both extends and retracts")]
    BothDirections { phase: usize, actuator: ActuatorId },
    #[error("phase {phase}: unknown actuator {actuator}")]
    UnknownActuator { phase: usize, actuator: ActuatorId },
    #[error("phase {phase}: line {line} shares sum to {total} over capacity {capacity}")]
    OverCapacity {
        phase: usize,
        line: LineId,
        total: f64,
        capacity: f64,
    },
    #[error("phase {phase}: share {share} of {actuator} exceeds its valve cap {cap}")]
    OverCap {
        phase: usize,
        actuator: ActuatorId,
        share: f64,
        cap: f64,
    },
    #[error("phase {phase}: shares of {actuator} do not match the line's water-filling")]
    ShareMismatch { phase: usize, actuator: ActuatorId },
    #[error("predicted makespan {predicted} differs from summed durations {summed}")]
    Makespan { predicted: f64, summed: f64 },
}

impl Schedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn total_duration_s(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    /// Checks the schedule can be executed as written on `layout`.
    pub fn validate(&self, layout: &Layout) -> Result<(), ScheduleError> {
        let summed = self.total_duration_s();
        if abs(summed - self.predicted_makespan_s) > 1e-6 {
            return Err(ScheduleError::Makespan {
                predicted: self.predicted_makespan_s,
                summed,
            });
        }
        for (k, phase) in self.phases.iter().enumerate() {
            if !(phase.duration_s > 0.0) {
                return Err(ScheduleError::Duration(k));
            }
            for id in phase.extending.iter().chain(phase.retracting.iter()) {
                if layout.spec(id).is_none() {
                    return Err(ScheduleError::UnknownActuator {
                        phase: k,
                        actuator: id.clone(),
                    });
                }
            }
            if let Some(id) = phase.extending.intersection(&phase.retracting).next() {
                return Err(ScheduleError::BothDirections {
                    phase: k,
                    actuator: id.clone(),
                });
            }
            if let Some(id) = phase.shares.keys().find(|id| !phase.extending.contains(*id)) {
                return Err(ScheduleError::ShareMismatch {
                    phase: k,
                    actuator: id.clone(),
                });
            }
            let expected = phase_shares(layout, &phase.extending);
            if !phase.shares.is_empty() {
                for line in &layout.supply_lines {
                    let total: f64 = line
                        .member_actuator_ids
                        .iter()
                        .filter_map(|id| phase.shares.get(id))
                        .sum();
                    let capacity = layout.line_capacity(line);
                    if total > capacity + 1e-9 {
                        return Err(ScheduleError::OverCapacity {
                            phase: k,
                            line: line.id.clone(),
                            total,
                            capacity,
                        });
                    }
                }
                for (id, &share) in &phase.shares {
                    let cap = layout.spec(id).map_or(0.0, |s| s.valve_max_flow_units);
                    if share > cap + 1e-9 {
                        return Err(ScheduleError::OverCap {
                            phase: k,
                            actuator: id.clone(),
                            share,
                            cap,
                        });
                    }
                }
                for id in &phase.extending {
                    let want = expected.get(id).copied().unwrap_or(0.0);
                    let got = phase.shares.get(id).copied().unwrap_or(0.0);
                    if abs(want - got) > 1e-9 {
                        return Err(ScheduleError::ShareMismatch {
                            phase: k,
                            actuator: id.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Water-filling shares of an extending set, line by line.
pub fn phase_shares(layout: &Layout, extending: &BTreeSet<ActuatorId>) -> BTreeMap<ActuatorId, f64> {
    let mut out = BTreeMap::new();
    for line in &layout.supply_lines {
        let open: Vec<&ActuatorId> = line
            .member_actuator_ids
            .iter()
            .filter(|id| extending.contains(*id))
            .collect();
        if open.is_empty() {
            continue;
        }
        let caps: Vec<f64> = open
            .iter()
            .map(|id| layout.spec(id).map_or(0.0, |s| s.valve_max_flow_units))
            .collect();
        let shares = water_fill(layout.line_capacity(line), &caps);
        for (id, s) in open.into_iter().zip(shares) {
            out.insert(id.clone(), s);
        }
    }
    out
}

/// Cuts `[0, last cut]` at every cut time and asks `active` which units move
/// in each interval. Neighbors with identical valve sets merge.
pub(crate) fn assemble(
    layout: &Layout,
    mut cuts: Vec<f64>,
    active: impl Fn(f64, f64) -> (BTreeSet<ActuatorId>, BTreeSet<ActuatorId>),
) -> Schedule {
    cuts.push(0.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| abs(*b - *a) <= TIME_EPS_S);
    let mut phases: Vec<Phase> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (extending, retracting) = active(a, b);
        let duration_s = b - a;
        match phases.last_mut() {
            Some(last) if last.extending == extending && last.retracting == retracting => {
                last.duration_s += duration_s;
            }
            _ => phases.push(Phase {
                duration_s,
                shares: phase_shares(layout, &extending),
                extending,
                retracting,
            }),
        }
    }
    while phases
        .last()
        .is_some_and(|p| p.extending.is_empty() && p.retracting.is_empty())
    {
        phases.pop();
    }
    Schedule {
        predicted_makespan_s: phases.iter().map(|p| p.duration_s).sum(),
        phases,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub predicted_end_s: f64,
    pub simulated_end_s: f64,
    /// Largest gap between the heights the phase should reach and the
    /// simulated ones.
    pub max_height_error_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub predicted_makespan_s: f64,
    /// Time from start of the last step in which any height changed.
    pub simulated_makespan_s: f64,
    pub phases: Vec<PhaseReport>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecuteError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// Runs a schedule open loop: at every phase start the listed units get
/// their valves opened and everything else is closed. The last step of each
/// phase is shortened so phases end exactly on time.
pub fn execute_schedule(sim: &mut Simulator, schedule: &Schedule) -> Result<ExecutionReport, ExecuteError> {
    schedule.validate(sim.layout())?;
    let start = sim.time();
    let dt = sim.config().dt_s;
    let mut expected = sim.state().heights();
    let mut reports = Vec::with_capacity(schedule.phases.len());
    let mut last_motion = 0.0;
    let mut phase_end = start;
    let mut moving: BTreeSet<ActuatorId> = BTreeSet::new();

    for phase in &schedule.phases {
        let mut commands = Vec::new();
        for id in &moving {
            if !phase.extending.contains(id) && !phase.retracting.contains(id) {
                commands.push(ValveCommand::hold(id.clone()));
            }
        }
        commands.extend(phase.extending.iter().cloned().map(ValveCommand::extend));
        commands.extend(phase.retracting.iter().cloned().map(ValveCommand::retract));
        // ids were validated against the layout
        let _ = sim.command(&commands);
        moving = phase.extending.union(&phase.retracting).cloned().collect();

        let shares = if phase.shares.is_empty() {
            phase_shares(sim.layout(), &phase.extending)
        } else {
            phase.shares.clone()
        };
        for (id, h) in expected.iter_mut() {
            let Some(spec) = sim.layout().spec(id) else { continue };
            if phase.retracting.contains(id) {
                *h = (*h - spec.retract_rate_cm_s * phase.duration_s).max(spec.min_height_cm);
            } else if let Some(&s) = shares.get(id) {
                *h = (*h + s * spec.effective_extend_rate() * phase.duration_s).min(spec.max_height_cm);
            }
        }

        phase_end += phase.duration_s;
        loop {
            let left = phase_end - sim.time();
            if left <= 1e-12 {
                break;
            }
            let before = sim.state().heights();
            if left > dt + 1e-9 {
                sim.step();
            } else {
                sim.step_by(left);
            }
            if sim.state().heights() != before {
                last_motion = sim.time() - start;
            }
        }

        let err = expected
            .iter()
            .filter_map(|(id, h)| sim.state().height(id).map(|s| abs(s - h)))
            .fold(0.0, f64::max);
        reports.push(PhaseReport {
            predicted_end_s: phase_end - start,
            simulated_end_s: sim.time() - start,
            max_height_error_cm: err,
        });
    }
    if !moving.is_empty() {
        let hold: Vec<ValveCommand> = moving.into_iter().map(ValveCommand::hold).collect();
        let _ = sim.command(&hold);
    }

    let predicted = schedule.predicted_makespan_s;
    let height_tol = sim
        .layout()
        .actuators
        .values()
        .map(|p| p.spec.effective_extend_rate().max(p.spec.retract_rate_cm_s) * dt)
        .fold(0.0, f64::max);
    let diverged = abs(last_motion - predicted) > dt * reports.len().max(1) as f64
        || reports.iter().any(|r| r.max_height_error_cm > height_tol);
    Ok(ExecutionReport {
        predicted_makespan_s: predicted,
        simulated_makespan_s: last_motion,
        phases: reports,
        diverged,
    })
}
