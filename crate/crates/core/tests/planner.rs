use std::collections::BTreeMap;

use lifttiles_core::model::{build_grid_layout, ActuatorId, ActuatorSpec, Layout, LinePolicy, Partition};
use lifttiles_core::plan::{
    execute_schedule, lower_bound_makespan, plan_exact, plan_greedy, TransitionProblem,
    DEFAULT_RESOLUTION_S,
};
use lifttiles_core::sim::{SimConfig, Simulator};
use proptest::prelude::*;

// extension by this much takes one 0.25 s slot at full flow; retraction by
// four of them takes one slot
const EXT_STEP_CM: f64 = 2.109375;

#[derive(Debug, Clone)]
struct Instance {
    layout: Layout,
    current: BTreeMap<ActuatorId, f64>,
    target: BTreeMap<ActuatorId, f64>,
}

fn layout_for(n: u32, partition: Partition, compressors: u32, spec: &ActuatorSpec) -> Layout {
    let policy = LinePolicy {
        partition,
        compressors_per_line: compressors,
    };
    build_grid_layout(1, n, spec, 30.0, policy).unwrap()
}

fn grid_height(k: u32) -> f64 {
    15.0 + k as f64 * EXT_STEP_CM
}

fn instance() -> impl Strategy<Value = Instance> {
    (1u32..=3, prop_oneof![Just(Partition::Single), Just(Partition::PerColumn)], 1u32..=2)
        .prop_flat_map(|(n, partition, compressors)| {
            let pairs = proptest::collection::vec((0u32..=64, 0u32..=64), n as usize);
            (Just(n), Just(partition), Just(compressors), pairs)
        })
        .prop_map(|(n, partition, compressors, pairs)| {
            let layout = layout_for(n, partition, compressors, &ActuatorSpec::default());
            let mut current = BTreeMap::new();
            let mut target = BTreeMap::new();
            for (c, (from, to)) in pairs.into_iter().enumerate() {
                let to = if to < from { from - (from - to) / 4 * 4 } else { to };
                let id = ActuatorId::new(format!("r0c{c}"));
                current.insert(id.clone(), grid_height(from));
                target.insert(id, grid_height(to));
            }
            Instance {
                layout,
                current,
                target,
            }
        })
}

fn problem(i: &Instance) -> TransitionProblem<'_> {
    TransitionProblem::new(&i.layout, i.current.clone(), i.target.clone()).unwrap()
}

fn ids(n: usize) -> Vec<ActuatorId> {
    (0..n).map(|c| ActuatorId::new(format!("r0c{c}"))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn greedy_meets_the_lower_bound(i in instance()) {
        let p = problem(&i);
        let lb = lower_bound_makespan(&p).unwrap();
        let s = plan_greedy(&p).unwrap();
        prop_assert!((s.predicted_makespan_s - lb).abs() <= 1e-6, "{} vs {}", s.predicted_makespan_s, lb);
        s.validate(&i.layout).unwrap();
    }

    #[test]
    fn exact_sits_between_bound_and_greedy(i in instance()) {
        let p = problem(&i);
        let lb = lower_bound_makespan(&p).unwrap();
        let exact = plan_exact(&p, DEFAULT_RESOLUTION_S).unwrap();
        let greedy = plan_greedy(&p).unwrap();
        prop_assert!(exact.predicted_makespan_s >= lb - 1e-9);
        prop_assert!(exact.predicted_makespan_s <= greedy.predicted_makespan_s + DEFAULT_RESOLUTION_S + 1e-9);
        exact.validate(&i.layout).unwrap();
    }

    #[test]
    fn greedy_schedules_replay_in_the_simulator(i in instance()) {
        let p = problem(&i);
        let s = plan_greedy(&p).unwrap();
        let mut sim = Simulator::with_heights(i.layout.clone(), SimConfig::noiseless(), &i.current).unwrap();
        let report = execute_schedule(&mut sim, &s).unwrap();
        prop_assert!(!report.diverged, "{report:?}");
        let dt = sim.config().dt_s;
        prop_assert!((report.simulated_makespan_s - s.predicted_makespan_s).abs() <= dt * s.phases.len().max(1) as f64);
        for (id, &want) in &i.target {
            let got = sim.state().height(id).unwrap();
            prop_assert!((got - want).abs() <= 1e-6, "{id}: {got} vs {want}");
        }
    }

    #[test]
    fn scaling_deficits_and_rates_keeps_the_makespan(i in instance(), factor in 0.25f64..4.0) {
        let p = problem(&i);
        let base = plan_greedy(&p).unwrap().predicted_makespan_s;
        let lb = lower_bound_makespan(&p).unwrap();

        let base_spec = ActuatorSpec::default();
        let spec = ActuatorSpec {
            max_height_cm: 15.0 + 135.0 * factor,
            max_extend_rate_cm_s: base_spec.max_extend_rate_cm_s * factor,
            retract_rate_cm_s: base_spec.retract_rate_cm_s * factor,
            ..base_spec
        };
        let scaled_layout = Layout {
            actuators: i
                .layout
                .actuators
                .iter()
                .map(|(id, p)| {
                    let mut p = p.clone();
                    p.spec = spec.clone();
                    (id.clone(), p)
                })
                .collect(),
            ..i.layout.clone()
        };
        let scale = |m: &BTreeMap<ActuatorId, f64>| -> BTreeMap<ActuatorId, f64> {
            m.iter().map(|(id, h)| (id.clone(), 15.0 + (h - 15.0) * factor)).collect()
        };
        let q = TransitionProblem::new(&scaled_layout, scale(&i.current), scale(&i.target)).unwrap();
        prop_assert!((plan_greedy(&q).unwrap().predicted_makespan_s - base).abs() <= 1e-9);
        prop_assert!((lower_bound_makespan(&q).unwrap() - lb).abs() <= 1e-9);
    }
}

#[test]
fn greedy_on_the_full_grid_is_eighty_seconds() {
    let layout = build_grid_layout(5, 5, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap();
    let from = layout.actuators.keys().map(|id| (id.clone(), 15.0)).collect();
    let to = layout.actuators.keys().map(|id| (id.clone(), 150.0)).collect();
    let p = TransitionProblem::new(&layout, from, to).unwrap();
    assert_eq!(lower_bound_makespan(&p).unwrap(), 80.0);
    let s = plan_greedy(&p).unwrap();
    assert!((s.predicted_makespan_s - 80.0).abs() < 1e-9);
    let mut sim = Simulator::new(layout, SimConfig::noiseless()).unwrap();
    let report = execute_schedule(&mut sim, &s).unwrap();
    assert!(!report.diverged);
    assert!(sim.state().states.values().all(|s| (s.height_cm - 150.0).abs() < 1e-6));
}

#[test]
fn heterogeneous_caps_fall_back_to_water_filling() {
    let narrow = ActuatorSpec {
        valve_max_flow_units: 0.5,
        ..ActuatorSpec::default()
    };
    let mut layout = layout_for(2, Partition::Single, 1, &ActuatorSpec::default());
    layout.actuators.get_mut(&ActuatorId::from("r0c1")).unwrap().spec = narrow;
    let all = ids(2);
    let p = TransitionProblem::new(
        &layout,
        all.iter().map(|id| (id.clone(), 15.0)).collect(),
        all.iter().map(|id| (id.clone(), 150.0)).collect(),
    )
    .unwrap();
    let lb = lower_bound_makespan(&p).unwrap();
    let s = plan_greedy(&p).unwrap();
    // the caps add up to more than the capacity, so the line stays saturated
    assert!((s.predicted_makespan_s - lb).abs() < 1e-9);
    assert!((lb - 32.0).abs() < 1e-9);
    s.validate(&layout).unwrap();
}
