//! Reference values computed independently of the implementation.

use std::collections::BTreeMap;

use lifttiles_core::control::{control_step, run_to_target, Mode, TargetAssignment, ValveCommand};
use lifttiles_core::flow::allocate_flow;
use lifttiles_core::model::{build_grid_layout, ActuatorId, ActuatorSpec, Compressor, Layout, LinePolicy, Partition};
use lifttiles_core::plan::{lower_bound_makespan, plan_greedy, TransitionProblem};
use lifttiles_core::shapes::{diff_heightmaps, preset, Preset};
use lifttiles_core::sim::{sense, theoretical_stall_load_kg, SimConfig, SimState, Simulator};
use lifttiles_core::ControlConfig;

const STROKE_CM: f64 = 150.0 - 15.0;
const FULL_EXTEND_S: f64 = 16.0;
const FULL_RETRACT_S: f64 = 4.0;

fn single_line(n: u32, compressors: u32) -> Layout {
    let policy = LinePolicy {
        partition: Partition::Single,
        compressors_per_line: compressors,
    };
    build_grid_layout(1, n, &ActuatorSpec::default(), 30.0, policy).unwrap()
}

fn all_at(layout: &Layout, h: f64) -> BTreeMap<ActuatorId, f64> {
    layout.actuators.keys().map(|id| (id.clone(), h)).collect()
}

#[test]
fn default_rates_come_from_the_stroke_times() {
    let spec = ActuatorSpec::default();
    assert_eq!(spec.max_extend_rate_cm_s, STROKE_CM / FULL_EXTEND_S);
    assert_eq!(spec.retract_rate_cm_s, STROKE_CM / FULL_RETRACT_S);
    assert_eq!((spec.min_height_cm, spec.max_height_cm), (15.0, 150.0));
    assert_eq!(spec.spring_count as f64 * spec.spring_force_kgf, 1.6);
}

#[test]
fn stall_load_of_the_default_spec() {
    // 12 kPa over a 20 cm diameter tube, minus two 0.8 kgf springs
    let oracle = 12_000.0 * std::f64::consts::PI * 0.10 * 0.10 / 9.81 - 1.6;
    let got = theoretical_stall_load_kg(&ActuatorSpec::default(), &Compressor::default());
    assert!((got - oracle).abs() < 0.05, "{got} vs {oracle}");
    assert!((got - 36.8).abs() <= 0.5);

    let none = Compressor {
        pressure_kpa: 0.0,
        ..Compressor::default()
    };
    assert_eq!(theoretical_stall_load_kg(&ActuatorSpec::default(), &none), 0.0);

    // lift before springs is linear in pressure
    let doubled = Compressor {
        pressure_kpa: 24.0,
        ..Compressor::default()
    };
    let spec = ActuatorSpec::default();
    let lift = |c: &Compressor| theoretical_stall_load_kg(&spec, c) + 1.6;
    assert!((lift(&doubled) - 2.0 * lift(&Compressor::default())).abs() < 1e-9);
}

#[test]
fn equal_split_on_a_shared_line() {
    let layout = single_line(2, 1);
    let open = layout.actuators.keys().cloned().collect();
    let shares = allocate_flow(&layout.supply_lines[0], &open, &layout).unwrap();
    assert!(shares.values().all(|&s| s == 0.5));

    let layout = single_line(3, 2);
    let open = layout.actuators.keys().cloned().collect();
    let shares = allocate_flow(&layout.supply_lines[0], &open, &layout).unwrap();
    assert!(shares.values().all(|&s| (s - 2.0 / 3.0).abs() < 1e-12));
}

#[test]
fn two_on_one_line_take_twice_as_long() {
    let layout = single_line(2, 1);
    let ids: Vec<ActuatorId> = layout.actuators.keys().cloned().collect();
    let mut sim = Simulator::new(layout, SimConfig::noiseless()).unwrap();
    sim.command(&ids.iter().cloned().map(ValveCommand::extend).collect::<Vec<_>>())
        .unwrap();
    let oracle = 2.0 * STROKE_CM / 8.4375;
    while sim.state().states.values().any(|s| s.height_cm < 150.0) {
        sim.step();
    }
    assert!((sim.time() - oracle).abs() <= 0.05 + 1e-9);
}

#[test]
fn planner_closed_forms() {
    let layout = single_line(3, 2);
    let p = TransitionProblem::new(&layout, all_at(&layout, 15.0), all_at(&layout, 150.0)).unwrap();
    let oracle = 3.0 * STROKE_CM / (2.0 * 8.4375);
    assert!((lower_bound_makespan(&p).unwrap() - oracle).abs() < 1e-9);
    assert!((plan_greedy(&p).unwrap().predicted_makespan_s - oracle).abs() < 1e-9);
}

#[test]
fn flat_to_flat_total_extension() {
    let layout = build_grid_layout(5, 5, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let a = preset(&Preset::Flat { height_cm: 15.0 }, &layout).unwrap();
    let b = preset(&Preset::Flat { height_cm: 150.0 }, &layout).unwrap();
    assert_eq!(diff_heightmaps(&a, &b).unwrap().total_extension_cm, 25.0 * STROKE_CM);
}

#[test]
fn neighbor_support_arithmetic() {
    let layout = build_grid_layout(3, 3, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let mut sim = Simulator::new(layout, SimConfig::noiseless()).unwrap();
    let centre = ActuatorId::from("r1c1");
    // 10 + 4 x 5 = 30 kg with four level neighbors
    sim.set_load(&centre, 30.0).unwrap();
    sim.step();
    assert_eq!(sim.state().states[&centre].fault, lifttiles_core::Fault::None);
    sim.set_load(&centre, 30.5).unwrap();
    sim.step();
    assert_eq!(sim.state().states[&centre].fault, lifttiles_core::Fault::Buckled);
}

#[test]
fn sensor_noise_statistics() {
    let layout = single_line(1, 1);
    let config = SimConfig {
        sensor_noise_sigma_cm: 0.5,
        seed: 7,
        ..SimConfig::default()
    };
    let mut state = SimState::at_rest(&layout, config.seed);
    state.states.values_mut().for_each(|s| s.height_cm = 80.0);
    let n = 10_000;
    let samples: Vec<f64> = (0..n)
        .map(|k| {
            state.t_s = k as f64 / 30.0;
            sense(&state, &layout, &config)[0].measured_height_cm
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // standard error of the mean is 0.005 cm; of the sd about 0.0035 cm
    assert!((mean - 80.0).abs() < 0.05, "mean {mean}");
    assert!((var.sqrt() - 0.5).abs() < 0.05, "sd {}", var.sqrt());
}

fn closed_loop(from: f64, to: f64) -> f64 {
    let layout = single_line(1, 1);
    let id = ActuatorId::from("r0c0");
    let mut sim = Simulator::with_heights(layout, SimConfig::noiseless(), &BTreeMap::from([(id.clone(), from)])).unwrap();
    let report = run_to_target(
        &mut sim,
        &TargetAssignment::new(BTreeMap::from([(id, to)])),
        &ControlConfig::default(),
        60.0,
    )
    .unwrap();
    assert!(report.settled);
    assert!(report.control_period_s <= 0.05 + 1e-12);
    report.elapsed_s
}

#[test]
fn closed_loop_full_strokes() {
    assert!((closed_loop(15.0, 150.0) - FULL_EXTEND_S).abs() <= 0.05 + 1e-9);
    assert!((closed_loop(150.0, 15.0) - FULL_RETRACT_S).abs() <= 0.05 + 1e-9);
}

#[test]
fn closed_loop_full_grid_takes_five_strokes() {
    let layout = build_grid_layout(5, 5, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let targets = TargetAssignment::new(all_at(&layout, 150.0));
    let mut sim = Simulator::new(layout, SimConfig::noiseless()).unwrap();
    let report = run_to_target(&mut sim, &targets, &ControlConfig::default(), 200.0).unwrap();
    assert!(report.settled);
    assert!((report.elapsed_s - 5.0 * FULL_EXTEND_S).abs() <= report.control_period_s + 1e-9, "{}", report.elapsed_s);
}

#[test]
fn chatter_after_settling_is_rare() {
    let layout = build_grid_layout(3, 3, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let config = ControlConfig::default();
    let sim_config = SimConfig {
        sensor_noise_sigma_cm: config.deadband_cm / 4.0,
        seed: 42,
        ..SimConfig::default()
    };
    let targets = TargetAssignment::new(layout.actuators.keys().map(|id| (id.clone(), 80.0)).collect());
    let mut sim = Simulator::new(layout, sim_config).unwrap();
    let report = run_to_target(&mut sim, &targets, &config, 120.0).unwrap();
    assert!(report.settled);

    let mut latest = BTreeMap::new();
    let (mut periods, mut active) = (0usize, 0usize);
    let end = sim.time() + 60.0;
    while sim.time() < end {
        if let Some(readings) = sim.sense_if_due() {
            for r in readings {
                latest.insert(r.actuator_id.clone(), r);
            }
            let modes = sim
                .state()
                .states
                .iter()
                .map(|(id, s)| (id.clone(), Mode::of(s)))
                .collect();
            let out = control_step(&latest, &modes, &targets, &config, sim.time());
            periods += out.commands.len();
            active += out.commands.iter().filter(|c| c.mode() != Mode::Hold).count();
            sim.command(&out.commands).unwrap();
        }
        sim.step();
    }
    let fraction = active as f64 / periods as f64;
    assert!(fraction < 0.05, "{fraction}");
}
