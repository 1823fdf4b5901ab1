//! Deterministic fixed-timestep simulation of an actuator array.
//!
//! The model is rate based. An open supply valve extends a unit at its flow
//! share times the full-flow extension rate; an open release tap retracts it
//! at the spring-driven rate, regardless of the supply valve. Shares come from
//! water-filling each supply line's capacity among units currently drawing
//! air. Heights are clamped to the stroke.
//!
//! The free functions ([`step`], [`check_load`], [`sense`],
//! [`apply_commands`]) are pure; [`Simulator`] wraps them into the single
//! writer used by the controller, the planner executor and the service.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ValveCommand;
use crate::flow::allocate_flow;
use crate::model::{
    move_actuator, ActuatorId, ActuatorSpec, ActuatorState, Compressor, Fault, Layout,
    LayoutError, LineId, Pose, ValveState,
};
use crate::num::{abs, clamp};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OverloadPolicy {
    /// Overloaded units fault and lock their valves.
    #[default]
    Buckle,
    /// Overloaded units cannot extend until the load is removed.
    Stall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt_s: f64,
    pub sensor_noise_sigma_cm: f64,
    pub sensor_rate_hz: f64,
    pub seed: u64,
    pub overload_policy: OverloadPolicy,
    /// Extra load each same-height side neighbor lets a unit carry.
    pub neighbor_bonus_kg: f64,
    pub height_similarity_cm: f64,
    /// Delay between issuing a valve command and the valve moving.
    pub valve_latency_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_s: 0.05,
            sensor_noise_sigma_cm: 0.5,
            sensor_rate_hz: 30.0,
            seed: 0,
            overload_policy: OverloadPolicy::Buckle,
            neighbor_bonus_kg: 5.0,
            height_similarity_cm: 5.0,
            valve_latency_s: 0.0,
        }
    }
}

impl SimConfig {
    /// Default configuration with sensor noise switched off.
    pub fn noiseless() -> Self {
        Self {
            sensor_noise_sigma_cm: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.dt_s > 0.0
            && self.dt_s.is_finite()
            && self.sensor_noise_sigma_cm >= 0.0
            && self.sensor_rate_hz > 0.0
            && self.neighbor_bonus_kg >= 0.0
            && self.height_similarity_cm >= 0.0
            && self.valve_latency_s >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig)
        }
    }

    pub fn sensor_period_s(&self) -> f64 {
        1.0 / self.sensor_rate_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t_s: f64,
    pub states: BTreeMap<ActuatorId, ActuatorState>,
    /// Sensor noise is a function of this seed and the sample time only.
    pub noise_seed: u64,
}

impl SimState {
    /// Every unit collapsed, valves closed, unloaded.
    pub fn at_rest(layout: &Layout, seed: u64) -> Self {
        Self {
            t_s: 0.0,
            states: layout
                .actuators
                .iter()
                .map(|(id, p)| (id.clone(), ActuatorState::resting(p.spec.min_height_cm)))
                .collect(),
            noise_seed: seed,
        }
    }

    pub fn height(&self, id: &ActuatorId) -> Option<f64> {
        self.states.get(id).map(|s| s.height_cm)
    }

    pub fn heights(&self) -> BTreeMap<ActuatorId, f64> {
        self.states
            .iter()
            .map(|(id, s)| (id.clone(), s.height_cm))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub actuator_id: ActuatorId,
    pub measured_height_cm: f64,
    pub t_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown actuator {0}")]
    UnknownActuator(ActuatorId),
    #[error("invalid simulation config")]
    InvalidConfig,
    #[error("load {load_kg} kg on {actuator} outside [0, {max_kg}] kg")]
    LoadOutOfRange {
        actuator: ActuatorId,
        load_kg: f64,
        max_kg: f64,
    },
    #[error("height {height_cm} cm on {actuator} outside its stroke")]
    HeightOutOfRange { actuator: ActuatorId, height_cm: f64 },
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

/// Something a command batch asked for that the simulator declined.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimWarning {
    IgnoredBuckled(ActuatorId),
}

/// Pressure-area lift of the inflated tube minus the spring pull, in kgf.
/// Never negative.
pub fn theoretical_stall_load_kg(spec: &ActuatorSpec, compressor: &Compressor) -> f64 {
    (pressure_lift_kgf(spec, compressor.pressure_kpa) - spring_pull_kgf(spec)).max(0.0)
}

pub(crate) fn pressure_lift_kgf(spec: &ActuatorSpec, pressure_kpa: f64) -> f64 {
    let radius_m = spec.tube_diameter_cm / 200.0;
    let area_m2 = core::f64::consts::PI * radius_m * radius_m;
    pressure_kpa * 1000.0 * area_m2 / GRAVITY
}

fn spring_pull_kgf(spec: &ActuatorSpec) -> f64 {
    spec.spring_count as f64 * spec.spring_force_kgf
}

/// Load a unit can carry right now: its rating plus a bonus for every
/// side neighbor standing at a similar height.
pub fn load_capacity_kg(state: &SimState, layout: &Layout, config: &SimConfig, id: &ActuatorId) -> f64 {
    let (Some(spec), Some(me)) = (layout.spec(id), state.states.get(id)) else {
        return 0.0;
    };
    let supporting = layout
        .neighbors(id)
        .iter()
        .filter_map(|n| state.states.get(n))
        .filter(|n| abs(n.height_cm - me.height_cm) <= config.height_similarity_cm)
        .count();
    spec.rated_load_kg + config.neighbor_bonus_kg * supporting as f64
}

/// Units whose load exceeds their current capacity.
pub fn overloaded(state: &SimState, layout: &Layout, config: &SimConfig) -> BTreeSet<ActuatorId> {
    state
        .states
        .iter()
        .filter(|(id, s)| s.load_kg > load_capacity_kg(state, layout, config, id))
        .map(|(id, _)| id.clone())
        .collect()
}

/// Applies the overload policy. Under `Buckle`, overloaded units fault and
/// their valves close; under `Stall` nothing changes here and [`step`] holds
/// their extension at zero instead.
pub fn check_load(state: &SimState, layout: &Layout, config: &SimConfig) -> SimState {
    let mut next = state.clone();
    if config.overload_policy == OverloadPolicy::Buckle {
        for id in overloaded(state, layout, config) {
            if let Some(s) = next.states.get_mut(&id) {
                s.fault = Fault::Buckled;
                s.supply = ValveState::Closed;
                s.release = ValveState::Closed;
            }
        }
    }
    next
}

fn draws_air(s: &ActuatorState, spec: &ActuatorSpec) -> bool {
    s.fault == Fault::None
        && s.supply.is_open()
        && !s.release.is_open()
        && s.height_cm < spec.max_height_cm
}

/// Flow shares on every line for the units currently drawing air.
pub fn line_flows(
    state: &SimState,
    layout: &Layout,
    config: &SimConfig,
) -> BTreeMap<LineId, BTreeMap<ActuatorId, f64>> {
    let stalled = match config.overload_policy {
        OverloadPolicy::Stall => overloaded(state, layout, config),
        OverloadPolicy::Buckle => BTreeSet::new(),
    };
    let mut out = BTreeMap::new();
    for line in &layout.supply_lines {
        let open: BTreeSet<ActuatorId> = line
            .member_actuator_ids
            .iter()
            .filter(|id| !stalled.contains(*id))
            .filter(|id| match (state.states.get(*id), layout.spec(id)) {
                (Some(s), Some(spec)) => draws_air(s, spec),
                _ => false,
            })
            .cloned()
            .collect();
        // members come from the line itself, so this cannot fail
        let shares = allocate_flow(line, &open, layout).unwrap_or_default();
        out.insert(line.id.clone(), shares);
    }
    out
}

/// Advances the state by `dt` (the configured timestep when `None`).
pub fn step(state: &SimState, layout: &Layout, config: &SimConfig, dt: Option<f64>) -> SimState {
    let dt = dt.unwrap_or(config.dt_s);
    let mut next = state.clone();
    for s in next.states.values_mut() {
        if s.fault == Fault::Buckled {
            s.supply = ValveState::Closed;
            s.release = ValveState::Closed;
        }
    }

    let flows = line_flows(&next, layout, config);
    let share_of = |id: &ActuatorId| {
        flows
            .values()
            .find_map(|shares| shares.get(id).copied())
            .unwrap_or(0.0)
    };

    let ids: Vec<ActuatorId> = next.states.keys().cloned().collect();
    for id in ids {
        let Some(spec) = layout.spec(&id) else { continue };
        let share = share_of(&id);
        let Some(s) = next.states.get_mut(&id) else { continue };
        if s.fault == Fault::Buckled {
            continue;
        }
        if s.release.is_open() {
            s.height_cm = (s.height_cm - spec.retract_rate_cm_s * dt).max(spec.min_height_cm);
        } else if s.supply.is_open() && share > 0.0 {
            let rise = share * spec.effective_extend_rate() * dt;
            s.height_cm = (s.height_cm + rise).min(spec.max_height_cm);
        }
    }
    next.t_s = state.t_s + dt;
    check_load(&next, layout, config)
}

/// One reading per actuator: true height plus seeded Gaussian noise, clamped
/// to the stroke. The noise depends only on the seed and the sample time.
pub fn sense(state: &SimState, layout: &Layout, config: &SimConfig) -> Vec<SensorReading> {
    let sigma = config.sensor_noise_sigma_cm;
    let mut rng = ChaCha8Rng::seed_from_u64(state.noise_seed);
    rng.set_stream(state.t_s.to_bits());
    let noise = Normal::new(0.0, sigma).ok();
    state
        .states
        .iter()
        .map(|(id, s)| {
            let n = match &noise {
                Some(d) if sigma > 0.0 => d.sample(&mut rng),
                _ => 0.0,
            };
            let measured = match layout.spec(id) {
                Some(spec) => clamp(s.height_cm + n, spec.min_height_cm, spec.max_height_cm),
                None => s.height_cm + n,
            };
            SensorReading {
                actuator_id: id.clone(),
                measured_height_cm: measured,
                t_s: state.t_s,
            }
        })
        .collect()
}

/// Sets valve positions. The batch is rejected whole if any id is unknown;
/// otherwise later commands for the same unit win and commands to buckled
/// units are dropped with a warning.
pub fn apply_commands(
    state: &SimState,
    commands: &[ValveCommand],
) -> Result<(SimState, Vec<SimWarning>), SimError> {
    if let Some(bad) = commands
        .iter()
        .find(|c| !state.states.contains_key(&c.actuator_id))
    {
        return Err(SimError::UnknownActuator(bad.actuator_id.clone()));
    }
    let mut next = state.clone();
    let mut warnings = Vec::new();
    for c in commands {
        let Some(s) = next.states.get_mut(&c.actuator_id) else { continue };
        if s.fault == Fault::Buckled {
            let w = SimWarning::IgnoredBuckled(c.actuator_id.clone());
            if !warnings.contains(&w) {
                warnings.push(w);
            }
            continue;
        }
        s.supply = c.supply;
        s.release = c.release;
    }
    Ok((next, warnings))
}

/// An external input to a running simulation, as recorded in traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimInput {
    Valves(Vec<ValveCommand>),
    Load { actuator: ActuatorId, load_kg: f64 },
    Move { actuator: ActuatorId, pose: Pose },
    Layout(Layout),
    /// The next step uses this timestep instead of the configured one.
    StepDt(f64),
}

/// One line of a simulation trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Header {
        version: alloc::string::String,
        sim: SimConfig,
        layout: Layout,
        initial: BTreeMap<ActuatorId, ActuatorState>,
    },
    Input {
        tick: u64,
        t_s: f64,
        input: SimInput,
    },
    State {
        t_s: f64,
        id: ActuatorId,
        height_cm: f64,
        supply: ValveState,
        release: ValveState,
        fault: Fault,
    },
    Summary {
        elapsed_s: f64,
        settled: bool,
        max_overshoot_cm: f64,
    },
}

/// Single-writer handle around the pure step functions: owns the layout,
/// state, pending delayed commands and an optional trace.
#[derive(Debug, Clone)]
pub struct Simulator {
    layout: Layout,
    config: SimConfig,
    state: SimState,
    tick: u64,
    pending: Vec<(f64, Vec<ValveCommand>)>,
    last_sense_t: Option<f64>,
    next_dt: Option<f64>,
    trace: Option<Vec<TraceRecord>>,
}

impl Simulator {
    pub fn new(layout: Layout, config: SimConfig) -> Result<Self, SimError> {
        layout.validate()?;
        config.validate()?;
        let state = SimState::at_rest(&layout, config.seed);
        Ok(Self {
            layout,
            config,
            state,
            tick: 0,
            pending: Vec::new(),
            last_sense_t: None,
            next_dt: None,
            trace: None,
        })
    }

    /// Starts from the given heights instead of fully collapsed.
    pub fn with_heights(
        layout: Layout,
        config: SimConfig,
        heights: &BTreeMap<ActuatorId, f64>,
    ) -> Result<Self, SimError> {
        let mut sim = Self::new(layout, config)?;
        for (id, &h) in heights {
            let spec = sim
                .layout
                .spec(id)
                .ok_or_else(|| SimError::UnknownActuator(id.clone()))?;
            if !spec.contains_height(h) {
                return Err(SimError::HeightOutOfRange {
                    actuator: id.clone(),
                    height_cm: h,
                });
            }
            if let Some(s) = sim.state.states.get_mut(id) {
                s.height_cm = h;
            }
        }
        Ok(sim)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.t_s
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Starts recording; the header captures the current state as initial
    /// conditions.
    pub fn enable_trace(&mut self) {
        let mut records = alloc::vec![TraceRecord::Header {
            version: crate::FORMAT_HEADER.into(),
            sim: self.config.clone(),
            layout: self.layout.clone(),
            initial: self.state.states.clone(),
        }];
        push_states(&mut records, &self.state);
        self.trace = Some(records);
    }

    pub fn trace(&self) -> Option<&[TraceRecord]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Option<Vec<TraceRecord>> {
        self.trace.take()
    }

    pub(crate) fn record_summary(&mut self, elapsed_s: f64, settled: bool, max_overshoot_cm: f64) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord::Summary {
                elapsed_s,
                settled,
                max_overshoot_cm,
            });
        }
    }

    fn record_input(&mut self, input: SimInput) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord::Input {
                tick: self.tick,
                t_s: self.state.t_s,
                input,
            });
        }
    }

    /// Submits valve commands. With zero valve latency they take effect
    /// immediately, otherwise once the latency has elapsed.
    pub fn command(&mut self, commands: &[ValveCommand]) -> Result<Vec<SimWarning>, SimError> {
        if commands.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(bad) = commands
            .iter()
            .find(|c| !self.state.states.contains_key(&c.actuator_id))
        {
            return Err(SimError::UnknownActuator(bad.actuator_id.clone()));
        }
        self.record_input(SimInput::Valves(commands.to_vec()));
        if self.config.valve_latency_s > 0.0 {
            self.pending
                .push((self.state.t_s + self.config.valve_latency_s, commands.to_vec()));
            return Ok(Vec::new());
        }
        let (next, warnings) = apply_commands(&self.state, commands)?;
        self.state = next;
        Ok(warnings)
    }

    /// Largest load the unit may be given: the stall bound of its line.
    pub fn max_load_kg(&self, id: &ActuatorId) -> Option<f64> {
        let spec = self.layout.spec(id)?;
        let compressor = Compressor {
            pressure_kpa: self.layout.line_pressure_kpa(id),
            ..Compressor::default()
        };
        Some(theoretical_stall_load_kg(spec, &compressor))
    }

    pub fn set_load(&mut self, id: &ActuatorId, load_kg: f64) -> Result<(), SimError> {
        let max_kg = self
            .max_load_kg(id)
            .ok_or_else(|| SimError::UnknownActuator(id.clone()))?;
        if !(load_kg >= 0.0 && load_kg <= max_kg) {
            return Err(SimError::LoadOutOfRange {
                actuator: id.clone(),
                load_kg,
                max_kg,
            });
        }
        self.record_input(SimInput::Load {
            actuator: id.clone(),
            load_kg,
        });
        if let Some(s) = self.state.states.get_mut(id) {
            s.load_kg = load_kg;
        }
        self.state = check_load(&self.state, &self.layout, &self.config);
        Ok(())
    }

    pub fn move_actuator(&mut self, id: &ActuatorId, pose: Pose) -> Result<(), SimError> {
        let next = move_actuator(&self.layout, id, pose.clone())?;
        self.record_input(SimInput::Move {
            actuator: id.clone(),
            pose,
        });
        self.layout = next;
        Ok(())
    }

    /// Swaps in a new layout and resets every unit to rest.
    pub fn replace_layout(&mut self, layout: Layout) -> Result<(), SimError> {
        layout.validate()?;
        self.record_input(SimInput::Layout(layout.clone()));
        self.state = SimState {
            t_s: self.state.t_s,
            ..SimState::at_rest(&layout, self.config.seed)
        };
        self.layout = layout;
        self.pending.clear();
        Ok(())
    }

    pub fn step(&mut self) {
        let dt = self.next_dt.take();
        self.advance(dt);
    }

    /// Steps by a one-off timestep (used to land exactly on phase ends).
    pub fn step_by(&mut self, dt: f64) {
        if dt != self.config.dt_s {
            self.record_input(SimInput::StepDt(dt));
        }
        self.advance(Some(dt));
    }

    fn advance(&mut self, dt: Option<f64>) {
        let now = self.state.t_s;
        if !self.pending.is_empty() {
            let (due, later): (Vec<_>, Vec<_>) =
                self.pending.drain(..).partition(|(t, _)| *t <= now + 1e-12);
            self.pending = later;
            for (_, cmds) in due {
                if let Ok((next, _)) = apply_commands(&self.state, &cmds) {
                    self.state = next;
                }
            }
        }
        self.state = step(&self.state, &self.layout, &self.config, dt);
        self.tick += 1;
        if let Some(t) = self.trace.as_mut() {
            push_states(t, &self.state);
        }
    }

    /// Readings at the current time, regardless of the sensor rate.
    pub fn sense_now(&mut self) -> Vec<SensorReading> {
        self.last_sense_t = Some(self.state.t_s);
        sense(&self.state, &self.layout, &self.config)
    }

    /// Readings if a sensor period has elapsed since the last sample.
    pub fn sense_if_due(&mut self) -> Option<Vec<SensorReading>> {
        let due = match self.last_sense_t {
            None => true,
            Some(last) => self.state.t_s - last >= self.config.sensor_period_s() - 1e-9,
        };
        due.then(|| self.sense_now())
    }

    pub fn flows(&self) -> BTreeMap<LineId, BTreeMap<ActuatorId, f64>> {
        line_flows(&self.state, &self.layout, &self.config)
    }
}

fn push_states(records: &mut Vec<TraceRecord>, state: &SimState) {
    for (id, s) in &state.states {
        records.push(TraceRecord::State {
            t_s: state.t_s,
            id: id.clone(),
            height_cm: s.height_cm,
            supply: s.supply,
            release: s.release,
            fault: s.fault,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("trace does not start with a header")]
    MissingHeader,
    #[error("recorded input at tick {tick} was rejected: {source}")]
    Input { tick: u64, source: SimError },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Re-runs a recorded trace from its header and inputs and returns the
/// regenerated records (summaries excluded), for comparison with the
/// original.
pub fn replay(records: &[TraceRecord]) -> Result<Vec<TraceRecord>, ReplayError> {
    let Some(TraceRecord::Header {
        sim: config,
        layout,
        initial,
        ..
    }) = records.first()
    else {
        return Err(ReplayError::MissingHeader);
    };
    let heights = initial
        .iter()
        .map(|(id, s)| (id.clone(), s.height_cm))
        .collect();
    let mut sim = Simulator::with_heights(layout.clone(), config.clone(), &heights)?;
    for (id, s) in initial {
        if let Some(st) = sim.state.states.get_mut(id) {
            *st = s.clone();
        }
    }
    sim.enable_trace();

    let mut inputs: BTreeMap<u64, Vec<SimInput>> = BTreeMap::new();
    // one batch of state lines per recorded instant
    let mut batches = 0u64;
    let mut prev_state_t: Option<f64> = None;
    for r in records {
        match r {
            TraceRecord::Input { tick, input, .. } => {
                inputs.entry(*tick).or_default().push(input.clone());
                prev_state_t = None;
            }
            TraceRecord::State { t_s, .. } => {
                if prev_state_t != Some(*t_s) {
                    batches += 1;
                }
                prev_state_t = Some(*t_s);
            }
            _ => prev_state_t = None,
        }
    }
    let last_input_tick = inputs.keys().next_back().copied().unwrap_or(0);
    let steps = batches.saturating_sub(1);

    for tick in 0..=steps.max(last_input_tick) {
        let mut step_dt = None;
        for input in inputs.remove(&tick).unwrap_or_default() {
            let result = match input {
                SimInput::Valves(cmds) => sim.command(&cmds).map(|_| ()),
                SimInput::Load { actuator, load_kg } => sim.set_load(&actuator, load_kg),
                SimInput::Move { actuator, pose } => sim.move_actuator(&actuator, pose),
                SimInput::Layout(layout) => sim.replace_layout(layout),
                SimInput::StepDt(dt) => {
                    step_dt = Some(dt);
                    Ok(())
                }
            };
            result.map_err(|source| ReplayError::Input { tick, source })?;
        }
        if tick < steps {
            match step_dt {
                Some(dt) => sim.step_by(dt),
                None => sim.step(),
            }
        }
    }
    Ok(sim.take_trace().unwrap_or_default())
}
