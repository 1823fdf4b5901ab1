//! Exhaustive small-instance planner.
//!
//! Time is cut into slots of `resolution_s`. At the start of every slot the
//! search picks which unfinished units to open for that slot; inside the
//! slot lines water-fill among their open units and a unit's valve closes
//! the moment it reaches target. The schedule ends when the last unit
//! arrives, which may be part-way through a slot.
//!
//! The search is A* over remaining work, with the same per-line,
//! per-unit and per-retraction bounds as [`super::lower_bound_makespan`]
//! as heuristic. Two reductions keep it small without losing optimality:
//! retracting units are always open (springs share nothing), and a line
//! whose capacity covers every open valve's cap opens all of its units.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{assemble, PlanError, Schedule, TransitionProblem};
use crate::flow::water_fill;
use crate::model::ActuatorId;
use crate::num::key;

pub const DEFAULT_RESOLUTION_S: f64 = 0.25;
pub const MAX_EXACT_ACTUATORS: usize = 4;
const NODE_BUDGET: usize = 2_000_000;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
struct Job {
    id: ActuatorId,
    /// Line index for extensions, `None` for retractions.
    line: Option<usize>,
    cap: f64,
    work: f64,
}

struct Instance {
    jobs: Vec<Job>,
    capacity: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Node {
    left: Vec<f64>,
    parent: Option<usize>,
    /// `(duration, open mask)` pieces covering the slot that led here.
    pieces: Vec<(f64, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    g: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then deepest first
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-makespan schedule on a slot grid of `resolution_s`.
///
/// Refuses instances with more than [`MAX_EXACT_ACTUATORS`] moving units.
pub fn plan_exact(problem: &TransitionProblem<'_>, resolution_s: f64) -> Result<Schedule, PlanError> {
    problem.validate()?;
    if !(resolution_s > 0.0 && resolution_s.is_finite()) {
        return Err(PlanError::Resolution);
    }
    let jobs = problem.jobs()?;
    let moving = jobs.moving();
    if moving > MAX_EXACT_ACTUATORS {
        return Err(PlanError::TooLarge {
            moving,
            limit: MAX_EXACT_ACTUATORS,
        });
    }

    let mut inst = Instance {
        jobs: Vec::new(),
        capacity: Vec::new(),
    };
    for (k, line) in jobs.lines.values().enumerate() {
        inst.capacity.push(line.capacity);
        for j in &line.jobs {
            inst.jobs.push(Job {
                id: j.id.clone(),
                line: Some(k),
                cap: j.cap,
                work: j.work,
            });
        }
    }
    for (id, t) in &jobs.retract {
        inst.jobs.push(Job {
            id: id.clone(),
            line: None,
            cap: 1.0,
            work: *t,
        });
    }

    let (path, _) = search(&inst, resolution_s)?;

    let mut cuts = Vec::new();
    let mut spans: Vec<(f64, f64, u32)> = Vec::new();
    let mut t = 0.0;
    for (d, mask) in path {
        spans.push((t, t + d, mask));
        t += d;
        cuts.push(t);
    }
    Ok(assemble(problem.layout, cuts, |a, b| {
        let mid = 0.5 * (a + b);
        let mask = spans
            .iter()
            .find(|(s, e, _)| *s <= mid && mid < *e)
            .map_or(0, |s| s.2);
        let mut extending = alloc::collections::BTreeSet::new();
        let mut retracting = alloc::collections::BTreeSet::new();
        for (i, job) in inst.jobs.iter().enumerate() {
            if mask & (1 << i) != 0 {
                if job.line.is_some() {
                    extending.insert(job.id.clone());
                } else {
                    retracting.insert(job.id.clone());
                }
            }
        }
        (extending, retracting)
    }))
}

fn heuristic(inst: &Instance, left: &[f64]) -> f64 {
    let mut per_line = alloc::vec![0.0; inst.capacity.len()];
    let mut h = 0.0f64;
    for (job, &w) in inst.jobs.iter().zip(left) {
        match job.line {
            Some(k) => {
                per_line[k] += w;
                h = h.max(w / job.cap.min(inst.capacity[k]));
            }
            None => h = h.max(w),
        }
    }
    for (total, cap) in per_line.iter().zip(&inst.capacity) {
        h = h.max(total / cap);
    }
    h
}

fn unfinished(left: &[f64]) -> u32 {
    left.iter()
        .enumerate()
        .filter(|(_, &w)| w > EPS)
        .fold(0, |m, (i, _)| m | (1 << i))
}

/// Every valve pattern worth trying from a state: all unfinished
/// retractions, and per line any nonempty subset of its unfinished units
/// (or all of them when the line can feed every one at its cap).
fn choices(inst: &Instance, todo: u32) -> Vec<u32> {
    let mut base = 0u32;
    let mut line_options: Vec<Vec<u32>> = Vec::new();
    for (k, &cap) in inst.capacity.iter().enumerate() {
        let members: Vec<usize> = (0..inst.jobs.len())
            .filter(|&i| todo & (1 << i) != 0 && inst.jobs[i].line == Some(k))
            .collect();
        if members.is_empty() {
            continue;
        }
        let demand: f64 = members.iter().map(|&i| inst.jobs[i].cap).sum();
        let all = members.iter().fold(0u32, |m, &i| m | (1 << i));
        if cap + EPS >= demand {
            base |= all;
            continue;
        }
        let mut opts = Vec::new();
        for sub in 1u32..(1 << members.len()) {
            let mask = members
                .iter()
                .enumerate()
                .filter(|(b, _)| sub & (1 << b) != 0)
                .fold(0u32, |m, (_, &i)| m | (1 << i));
            opts.push(mask);
        }
        line_options.push(opts);
    }
    for (i, job) in inst.jobs.iter().enumerate() {
        if job.line.is_none() && todo & (1 << i) != 0 {
            base |= 1 << i;
        }
    }
    let mut out = alloc::vec![base];
    for opts in line_options {
        out = out
            .iter()
            .flat_map(|&m| opts.iter().map(move |&o| m | o))
            .collect();
    }
    out.retain(|&m| m != 0);
    out
}

/// Runs one slot with `mask` open. Returns the new remaining work, the time
/// used (the full slot unless everything finished) and the pieces.
fn run_slot(inst: &Instance, left: &[f64], mask: u32, slot: f64) -> (Vec<f64>, f64, Vec<(f64, u32)>) {
    let mut left = left.to_vec();
    let mut t = 0.0;
    let mut pieces = Vec::new();
    while t < slot - EPS {
        let todo = unfinished(&left);
        let open = mask & todo;
        if todo == 0 {
            return (left, t, pieces);
        }
        if open == 0 {
            pieces.push((slot - t, 0));
            break;
        }
        let mut rate = alloc::vec![0.0; left.len()];
        for (i, job) in inst.jobs.iter().enumerate() {
            if open & (1 << i) != 0 && job.line.is_none() {
                rate[i] = 1.0;
            }
        }
        for (k, &cap) in inst.capacity.iter().enumerate() {
            let members: Vec<usize> = (0..left.len())
                .filter(|&i| open & (1 << i) != 0 && inst.jobs[i].line == Some(k))
                .collect();
            let caps: Vec<f64> = members.iter().map(|&i| inst.jobs[i].cap).collect();
            for (&i, s) in members.iter().zip(water_fill(cap, &caps)) {
                rate[i] = s;
            }
        }
        let next = (0..left.len())
            .filter(|&i| rate[i] > 0.0)
            .map(|i| left[i] / rate[i])
            .fold(slot - t, f64::min);
        for i in 0..left.len() {
            left[i] -= rate[i] * next;
            if left[i] <= EPS {
                left[i] = 0.0;
            }
        }
        pieces.push((next, open));
        t += next;
    }
    let used = if unfinished(&left) == 0 { t } else { slot };
    (left, used, pieces)
}

fn search(inst: &Instance, slot: f64) -> Result<(Vec<(f64, u32)>, f64), PlanError> {
    let start: Vec<f64> = inst.jobs.iter().map(|j| j.work).collect();
    let mut nodes = alloc::vec![Node {
        left: start.clone(),
        parent: None,
        pieces: Vec::new(),
    }];
    let mut best: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    best.insert(start.iter().map(|&w| key(w)).collect(), 0.0);
    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        f: heuristic(inst, &start),
        g: 0.0,
        node: 0,
    });

    while let Some(Entry { g, node, .. }) = heap.pop() {
        let todo = unfinished(&nodes[node].left);
        if todo == 0 {
            let mut path = Vec::new();
            let mut cur = Some(node);
            while let Some(n) = cur {
                path.extend(nodes[n].pieces.iter().rev().copied());
                cur = nodes[n].parent;
            }
            path.reverse();
            return Ok((path, g));
        }
        let k: Vec<i64> = nodes[node].left.iter().map(|&w| key(w)).collect();
        if best.get(&k).is_some_and(|&b| b < g - EPS) {
            continue;
        }
        if nodes.len() > NODE_BUDGET {
            return Err(PlanError::SearchBudget(nodes.len()));
        }
        for mask in choices(inst, todo) {
            let (left, used, pieces) = run_slot(inst, &nodes[node].left, mask, slot);
            let g2 = g + used;
            let k2: Vec<i64> = left.iter().map(|&w| key(w)).collect();
            if best.get(&k2).is_some_and(|&b| b <= g2 + EPS) {
                continue;
            }
            best.insert(k2, g2);
            let f = g2 + heuristic(inst, &left);
            nodes.push(Node {
                left,
                parent: Some(node),
                pieces,
            });
            heap.push(Entry {
                f,
                g: g2,
                node: nodes.len() - 1,
            });
        }
    }
    // every state can reach completion, so the heap never runs dry first
    Err(PlanError::SearchBudget(nodes.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_layout, ActuatorSpec, Layout, LinePolicy, Partition};
    use crate::plan::{lower_bound_makespan, plan_greedy};

    fn line(n: u32, compressors: u32) -> Layout {
        let policy = LinePolicy {
            partition: Partition::Single,
            compressors_per_line: compressors,
        };
        build_grid_layout(1, n, &ActuatorSpec::default(), 30.0, policy).unwrap()
    }

    fn heights(pairs: &[(&str, f64)]) -> BTreeMap<ActuatorId, f64> {
        pairs.iter().map(|(id, h)| (ActuatorId::from(*id), *h)).collect()
    }

    #[test]
    fn single_full_extension() {
        let layout = line(1, 1);
        let p = TransitionProblem::new(&layout, heights(&[("r0c0", 15.0)]), heights(&[("r0c0", 150.0)]))
            .unwrap();
        let s = plan_exact(&p, DEFAULT_RESOLUTION_S).unwrap();
        assert!((s.predicted_makespan_s - 16.0).abs() < 1e-9);
        s.validate(&layout).unwrap();
    }

    #[test]
    fn single_full_retraction() {
        let layout = line(1, 1);
        let p = TransitionProblem::new(&layout, heights(&[("r0c0", 150.0)]), heights(&[("r0c0", 15.0)]))
            .unwrap();
        let s = plan_exact(&p, DEFAULT_RESOLUTION_S).unwrap();
        assert!((s.predicted_makespan_s - 4.0).abs() < 1e-9);
    }

    #[test]
    fn matches_greedy_on_uneven_two_compressor_line() {
        let layout = line(3, 2);
        let p = TransitionProblem::new(
            &layout,
            heights(&[("r0c0", 15.0), ("r0c1", 15.0), ("r0c2", 15.0)]),
            heights(&[("r0c0", 150.0), ("r0c1", 15.0 + 84.375), ("r0c2", 15.0 + 84.375)]),
        )
        .unwrap();
        let exact = plan_exact(&p, DEFAULT_RESOLUTION_S).unwrap();
        let greedy = plan_greedy(&p).unwrap();
        let lb = lower_bound_makespan(&p).unwrap();
        assert!(exact.predicted_makespan_s >= lb - 1e-9);
        assert!((exact.predicted_makespan_s - greedy.predicted_makespan_s).abs() <= DEFAULT_RESOLUTION_S);
        exact.validate(&layout).unwrap();
    }

    #[test]
    fn refuses_large_instances() {
        let layout = line(5, 1);
        let from: BTreeMap<ActuatorId, f64> = layout.actuators.keys().map(|id| (id.clone(), 15.0)).collect();
        let to: BTreeMap<ActuatorId, f64> = layout.actuators.keys().map(|id| (id.clone(), 20.0)).collect();
        let p = TransitionProblem::new(&layout, from, to).unwrap();
        assert_eq!(
            plan_exact(&p, DEFAULT_RESOLUTION_S).unwrap_err(),
            PlanError::TooLarge { moving: 5, limit: 4 }
        );
    }
}
