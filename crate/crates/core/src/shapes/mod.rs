//! Target shapes: heightmaps, their grid text form, bundled presets and
//! data physicalization.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::TargetAssignment;
use crate::model::{ActuatorId, Layout};
use crate::num::abs;

mod grid;
mod physicalize;
mod preset;

pub use grid::{heightmap_from_grid, parse_grid, render_grid, GridDocument};
pub use physicalize::{physicalize, PhysicalizationSeries};
pub use preset::{preset, Preset, PRESET_NAMES};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("document must start with a `lifttiles-v1` header line")]
    MissingHeader,
    #[error("row {row} has {found} cells, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column {col}: `{text}` is not a height")]
    BadCell { row: usize, col: usize, text: String },
    #[error("row {row}, column {col} addresses no actuator")]
    UnknownCell { row: usize, col: usize },
    #[error("unknown actuator {0}")]
    UnknownActuator(ActuatorId),
    #[error("height {height_cm} cm for {actuator} outside [{min}, {max}] cm")]
    OutOfRange {
        actuator: ActuatorId,
        height_cm: f64,
        min: f64,
        max: f64,
    },
    #[error("layout has no grid indices")]
    NotGrid,
    #[error("preset {name} needs a {need_rows}x{need_cols} grid, layout is {rows}x{cols}")]
    TooSmall {
        name: String,
        need_rows: usize,
        need_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("heightmaps address different actuators ({0})")]
    IdMismatch(ActuatorId),
    #[error("invalid series: {0}")]
    Series(&'static str),
    #[error("probe {probe} outside sampled range [{min}, {max}]")]
    ProbeOutOfRange { probe: f64, min: f64, max: f64 },
}

/// Target height per actuator plus a name and free-form metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Heightmap {
    pub name: String,
    pub entries: BTreeMap<ActuatorId, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Heightmap {
    pub fn new(name: impl Into<String>, entries: BTreeMap<ActuatorId, f64>) -> Self {
        Self {
            name: name.into(),
            entries,
            metadata: BTreeMap::new(),
        }
    }

    /// Every entry addresses a unit of `layout` and lies in its stroke.
    pub fn validate(&self, layout: &Layout) -> Result<(), ShapeError> {
        for (id, &h) in &self.entries {
            let spec = layout
                .spec(id)
                .ok_or_else(|| ShapeError::UnknownActuator(id.clone()))?;
            if !spec.contains_height(h) {
                return Err(ShapeError::OutOfRange {
                    actuator: id.clone(),
                    height_cm: h,
                    min: spec.min_height_cm,
                    max: spec.max_height_cm,
                });
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> TargetAssignment {
        TargetAssignment::new(self.entries.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightmapDiff {
    /// `b - a` per actuator.
    pub deltas: BTreeMap<ActuatorId, f64>,
    pub total_extension_cm: f64,
    pub total_retraction_cm: f64,
    pub max_abs_delta_cm: f64,
}

/// Per-unit change from `a` to `b`. Both must address the same units.
pub fn diff_heightmaps(a: &Heightmap, b: &Heightmap) -> Result<HeightmapDiff, ShapeError> {
    if let Some(id) = a
        .entries
        .keys()
        .find(|id| !b.entries.contains_key(*id))
        .or_else(|| b.entries.keys().find(|id| !a.entries.contains_key(*id)))
    {
        return Err(ShapeError::IdMismatch(id.clone()));
    }
    let mut diff = HeightmapDiff {
        deltas: BTreeMap::new(),
        total_extension_cm: 0.0,
        total_retraction_cm: 0.0,
        max_abs_delta_cm: 0.0,
    };
    for (id, &from) in &a.entries {
        let d = b.entries[id] - from;
        if d > 0.0 {
            diff.total_extension_cm += d;
        } else {
            diff.total_retraction_cm -= d;
        }
        diff.max_abs_delta_cm = diff.max_abs_delta_cm.max(abs(d));
        diff.deltas.insert(id.clone(), d);
    }
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_layout, ActuatorSpec, LinePolicy};

    fn grid5() -> Layout {
        build_grid_layout(5, 5, &ActuatorSpec::default(), 30.0, LinePolicy::default()).unwrap()
    }

    #[test]
    fn diff_of_identical_maps_is_zero() {
        let layout = grid5();
        let a = preset(&Preset::Chair, &layout).unwrap();
        let d = diff_heightmaps(&a, &a).unwrap();
        assert!(d.deltas.values().all(|&x| x == 0.0));
        assert_eq!(d.max_abs_delta_cm, 0.0);
    }

    #[test]
    fn flat_to_flat_totals() {
        let layout = grid5();
        let a = preset(&Preset::Flat { height_cm: 15.0 }, &layout).unwrap();
        let b = preset(&Preset::Flat { height_cm: 150.0 }, &layout).unwrap();
        let d = diff_heightmaps(&a, &b).unwrap();
        assert_eq!(d.total_extension_cm, 3375.0);
        assert_eq!(d.total_retraction_cm, 0.0);
        assert_eq!(d.max_abs_delta_cm, 135.0);
    }

    #[test]
    fn mixed_totals() {
        let e = |pairs: &[(&str, f64)]| -> BTreeMap<ActuatorId, f64> {
            pairs.iter().map(|(id, h)| (ActuatorId::from(*id), *h)).collect()
        };
        let a = Heightmap::new("a", e(&[("x", 20.0), ("y", 100.0), ("z", 50.0)]));
        let b = Heightmap::new("b", e(&[("x", 60.0), ("y", 30.0), ("z", 55.0)]));
        let d = diff_heightmaps(&a, &b).unwrap();
        assert_eq!(d.total_extension_cm, 45.0);
        assert_eq!(d.total_retraction_cm, 70.0);
        assert_eq!(d.max_abs_delta_cm, 70.0);
        let c = Heightmap::new("c", e(&[("x", 20.0)]));
        assert!(matches!(diff_heightmaps(&a, &c), Err(ShapeError::IdMismatch(_))));
    }

    #[test]
    fn validation_names_the_bound() {
        let layout = grid5();
        let mut h = preset(&Preset::Table, &layout).unwrap();
        h.entries.insert("r0c0".into(), 200.0);
        match h.validate(&layout) {
            Err(ShapeError::OutOfRange { max, .. }) => assert_eq!(max, 150.0),
            other => panic!("{other:?}"),
        }
    }
}
