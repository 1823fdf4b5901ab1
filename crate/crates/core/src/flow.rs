//! Sharing one supply line's compressor capacity among open supply valves.
//!
//! Capacity is split equally among open valves; a valve that cannot pass its
//! equal share is capped at its own limit and the residue is split again
//! among the rest (water-filling).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::model::{ActuatorId, Layout, LineId, SupplyLine};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("actuator {actuator} is not on supply line {line}")]
    NotOnLine { actuator: ActuatorId, line: LineId },
}

/// Water-filling split of `capacity` among consumers with per-consumer caps.
///
/// Returns one share per cap, in input order. Each share is at most its cap
/// and the shares sum to `min(capacity, sum of caps)`.
pub fn water_fill(capacity: f64, caps: &[f64]) -> Vec<f64> {
    let mut shares = vec![0.0; caps.len()];
    let mut open: Vec<usize> = (0..caps.len()).filter(|&i| caps[i] > 0.0).collect();
    let mut residual = capacity.max(0.0);
    while !open.is_empty() && residual > 0.0 {
        let level = residual / open.len() as f64;
        let (capped, free): (Vec<usize>, Vec<usize>) =
            open.iter().partition(|&&i| caps[i] <= level);
        if capped.is_empty() {
            for i in free {
                shares[i] = level;
            }
            break;
        }
        for &i in &capped {
            shares[i] = caps[i];
            residual -= caps[i];
        }
        open = free;
    }
    shares
}

/// Flow share of every open supply valve on `line`.
///
/// Shares are fractions of one compressor; an actuator with share `s`
/// extends at `s` times its maximum extension rate.
pub fn allocate_flow(
    line: &SupplyLine,
    open_ids: &BTreeSet<ActuatorId>,
    layout: &Layout,
) -> Result<BTreeMap<ActuatorId, f64>, FlowError> {
    let mut caps = Vec::with_capacity(open_ids.len());
    for id in open_ids {
        if !line.member_actuator_ids.contains(id) {
            return Err(FlowError::NotOnLine {
                actuator: id.clone(),
                line: line.id.clone(),
            });
        }
        caps.push(layout.spec(id).map_or(0.0, |s| s.valve_max_flow_units));
    }
    let shares = water_fill(layout.line_capacity(line), &caps);
    Ok(open_ids.iter().cloned().zip(shares).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_layout, ActuatorSpec, LinePolicy, Partition};

    fn single_line(n: u32, compressors: u32) -> Layout {
        let policy = LinePolicy {
            partition: Partition::Single,
            compressors_per_line: compressors,
        };
        build_grid_layout(1, n, &ActuatorSpec::default(), 30.0, policy).unwrap()
    }

    fn ids(layout: &Layout) -> BTreeSet<ActuatorId> {
        layout.actuators.keys().cloned().collect()
    }

    #[test]
    fn single_consumer_takes_everything() {
        let layout = single_line(1, 1);
        let shares = allocate_flow(&layout.supply_lines[0], &ids(&layout), &layout).unwrap();
        assert_eq!(shares.values().copied().collect::<Vec<_>>(), vec![1.0]);
    }

    #[test]
    fn two_consumers_split_evenly() {
        let layout = single_line(2, 1);
        let shares = allocate_flow(&layout.supply_lines[0], &ids(&layout), &layout).unwrap();
        assert!(shares.values().all(|&s| s == 0.5));
    }

    #[test]
    fn three_consumers_two_compressors() {
        let layout = single_line(3, 2);
        let shares = allocate_flow(&layout.supply_lines[0], &ids(&layout), &layout).unwrap();
        for s in shares.values() {
            assert!((s - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn caps_bind_before_equal_split() {
        // capacity 3, caps [0.5, 1, 1] -> 0.5 then 1.25 each, capped at 1
        assert_eq!(water_fill(3.0, &[0.5, 1.0, 1.0]), vec![0.5, 1.0, 1.0]);
        // capacity 2, caps [0.2, 1, 1] -> 0.2, then 0.9 each
        let s = water_fill(2.0, &[0.2, 1.0, 1.0]);
        assert!((s[1] - 0.9).abs() < 1e-12 && (s[2] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_open_set() {
        let layout = single_line(2, 1);
        let shares = allocate_flow(&layout.supply_lines[0], &BTreeSet::new(), &layout).unwrap();
        assert!(shares.is_empty());
    }

    #[test]
    fn foreign_actuator_rejected() {
        let layout = build_grid_layout(2, 1, &ActuatorSpec::default(), 30.0, LinePolicy::default())
            .unwrap();
        let open: BTreeSet<ActuatorId> = [ActuatorId::from("r1c0")].into_iter().collect();
        assert!(matches!(
            allocate_flow(&layout.supply_lines[0], &open, &layout),
            Err(FlowError::NotOnLine { .. })
        ));
    }
}
