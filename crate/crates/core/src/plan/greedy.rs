//! Fluid greedy planner.
//!
//! Retractions all start at time zero. Each line's extensions are planned on
//! their own:
//!
//! * When every valve cap on the line is the same `u` and the capacity is an
//!   integer multiple `k > 1` of it, the line behaves like `k` identical
//!   machines and McNaughton's wrap-around rule gives an optimal preemptive
//!   plan in which at most `k` valves are open at once.
//! * Otherwise the unfinished units share the line by water-filling,
//!   re-split each time one of them finishes. With the capacity at or below
//!   every cap this keeps the line saturated the whole time.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::{assemble, ExtendJob, LineJobs, PlanError, Schedule, TransitionProblem};
use crate::flow::water_fill;
use crate::model::ActuatorId;
use crate::num::abs;

/// `(start, end, units with supply open)` on one line.
type Segment = (f64, f64, BTreeSet<ActuatorId>);

pub fn plan_greedy(problem: &TransitionProblem<'_>) -> Result<Schedule, PlanError> {
    problem.validate()?;
    let jobs = problem.jobs()?;

    let mut segments: Vec<Segment> = Vec::new();
    for line in jobs.lines.values() {
        segments.extend(plan_line(line));
    }

    let mut cuts: Vec<f64> = segments.iter().flat_map(|s| [s.0, s.1]).collect();
    cuts.extend(jobs.retract.iter().map(|r| r.1));
    let retract: BTreeMap<ActuatorId, f64> = jobs.retract.into_iter().collect();

    Ok(assemble(problem.layout, cuts, |a, b| {
        let mid = 0.5 * (a + b);
        let extending = segments
            .iter()
            .filter(|(s, e, _)| *s <= mid && mid < *e)
            .flat_map(|(_, _, ids)| ids.iter().cloned())
            .collect();
        let retracting = retract
            .iter()
            .filter(|(_, &t)| mid < t)
            .map(|(id, _)| id.clone())
            .collect();
        (extending, retracting)
    }))
}

fn plan_line(line: &LineJobs) -> Vec<Segment> {
    let u = line.jobs[0].cap;
    let uniform = line.jobs.iter().all(|j| j.cap == u);
    let k = line.capacity / u;
    if uniform && u > 0.0 && k > 1.0 + 1e-9 && abs(k - libm::round(k)) <= 1e-9 {
        mcnaughton(&line.jobs, u, libm::round(k) as usize)
    } else {
        water_fill_events(line)
    }
}

/// Wrap-around rule: fill `machines` timelines of length `T` one job after
/// another, carrying the overflow of a job to the start of the next
/// timeline. `T` is at least every job's own length, so the two pieces of a
/// split job never overlap in time.
fn mcnaughton(jobs: &[ExtendJob], u: f64, machines: usize) -> Vec<Segment> {
    let lengths: Vec<f64> = jobs.iter().map(|j| j.work / u).collect();
    let total: f64 = lengths.iter().sum();
    let horizon = lengths
        .iter()
        .copied()
        .fold(total / machines as f64, f64::max);

    let mut pieces: Vec<(f64, f64, &ActuatorId)> = Vec::new();
    let mut cursor = 0.0;
    for (job, &p) in jobs.iter().zip(&lengths) {
        if cursor + p <= horizon + 1e-9 {
            pieces.push((cursor, (cursor + p).min(horizon), &job.id));
            cursor += p;
        } else {
            let head = horizon - cursor;
            if head > 1e-12 {
                pieces.push((cursor, horizon, &job.id));
            }
            pieces.push((0.0, p - head, &job.id));
            cursor = p - head;
        }
        if cursor >= horizon - 1e-9 {
            cursor = 0.0;
        }
    }

    let mut cuts: Vec<f64> = pieces.iter().flat_map(|p| [p.0, p.1]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|b, a| abs(*b - *a) <= 1e-9);
    cuts.windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let ids = pieces
                .iter()
                .filter(|(s, e, _)| *s <= mid && mid < *e)
                .map(|(_, _, id)| (*id).clone())
                .collect();
            (w[0], w[1], ids)
        })
        .filter(|s: &Segment| !s.2.is_empty())
        .collect()
}

/// Open every unfinished unit and let the line water-fill; advance to the
/// next completion and repeat.
fn water_fill_events(line: &LineJobs) -> Vec<Segment> {
    let mut left: Vec<f64> = line.jobs.iter().map(|j| j.work).collect();
    let mut done: Vec<bool> = left.iter().map(|&w| w <= 0.0).collect();
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        let open: Vec<usize> = (0..left.len()).filter(|&i| !done[i]).collect();
        if open.is_empty() {
            break;
        }
        let caps: Vec<f64> = open.iter().map(|&i| line.jobs[i].cap).collect();
        let shares = water_fill(line.capacity, &caps);
        let step = open
            .iter()
            .zip(&shares)
            .filter(|(_, &s)| s > 0.0)
            .map(|(&i, &s)| left[i] / s)
            .fold(f64::INFINITY, f64::min);
        if !step.is_finite() {
            break;
        }
        out.push((t, t + step, open.iter().map(|&i| line.jobs[i].id.clone()).collect()));
        for (&i, &s) in open.iter().zip(&shares) {
            left[i] -= s * step;
            if left[i] <= 1e-9 * (1.0 + line.jobs[i].work) {
                done[i] = true;
            }
        }
        t += step;
    }
    out
}
