//! Bundled application shapes. The levels live in the `presets/` documents
//! next to this crate, so they can be edited without touching code.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

use super::grid::{bind, parse_grid};
use super::{Heightmap, ShapeError};
use crate::model::Layout;

pub const PRESET_NAMES: [&str; 6] = ["flat", "chair", "table", "bed", "arrow-wall", "meeting-partition"];

const CHAIR: &str = include_str!("../../presets/chair.csv");
const TABLE: &str = include_str!("../../presets/table.csv");
const BED: &str = include_str!("../../presets/bed.csv");
const ARROW_WALL: &str = include_str!("../../presets/arrow-wall.csv");
const MEETING_PARTITION: &str = include_str!("../../presets/meeting-partition.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Preset {
    Flat { height_cm: f64 },
    Chair,
    Table,
    Bed,
    ArrowWall,
    MeetingPartition,
}

impl Preset {
    /// `flat` (15 cm), `flat:<cm>` or one of the other [`PRESET_NAMES`].
    pub fn from_name(name: &str) -> Result<Self, ShapeError> {
        let unknown = || ShapeError::UnknownPreset(name.to_string());
        Ok(match name {
            "flat" => Preset::Flat { height_cm: 15.0 },
            "chair" => Preset::Chair,
            "table" => Preset::Table,
            "bed" => Preset::Bed,
            "arrow-wall" => Preset::ArrowWall,
            "meeting-partition" => Preset::MeetingPartition,
            other => {
                let h = other
                    .strip_prefix("flat:")
                    .and_then(|h| h.parse::<f64>().ok())
                    .filter(|h| h.is_finite())
                    .ok_or_else(unknown)?;
                Preset::Flat { height_cm: h }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            Preset::Flat { height_cm } if *height_cm == 15.0 => "flat".into(),
            Preset::Flat { height_cm } => format!("flat:{height_cm}"),
            Preset::Chair => "chair".into(),
            Preset::Table => "table".into(),
            Preset::Bed => "bed".into(),
            Preset::ArrowWall => "arrow-wall".into(),
            Preset::MeetingPartition => "meeting-partition".into(),
        }
    }

    /// The bundled grid document, if this preset has one.
    pub fn document(&self) -> Option<&'static str> {
        match self {
            Preset::Flat { .. } => None,
            Preset::Chair => Some(CHAIR),
            Preset::Table => Some(TABLE),
            Preset::Bed => Some(BED),
            Preset::ArrowWall => Some(ARROW_WALL),
            Preset::MeetingPartition => Some(MEETING_PARTITION),
        }
    }
}

/// Heights for every unit of `layout`. Shaped presets are centered on the
/// grid and the remaining units get the document's `background` height.
pub fn preset(preset: &Preset, layout: &Layout) -> Result<Heightmap, ShapeError> {
    let Some(text) = preset.document() else {
        let Preset::Flat { height_cm } = *preset else {
            unreachable!("only flat has no document")
        };
        let map = Heightmap::new(
            preset.name(),
            layout.actuators.keys().map(|id| (id.clone(), height_cm)).collect(),
        );
        map.validate(layout)?;
        return Ok(map);
    };

    let doc = parse_grid(text)?;
    let (need_rows, need_cols) = doc.dims();
    let (rows, cols) = layout.grid_dims().ok_or(ShapeError::NotGrid)?;
    let (rows, cols) = (rows as usize, cols as usize);
    if rows < need_rows || cols < need_cols {
        return Err(ShapeError::TooSmall {
            name: preset.name(),
            need_rows,
            need_cols,
            rows,
            cols,
        });
    }
    let shape = bind(&doc, layout, (rows - need_rows) / 2, (cols - need_cols) / 2)?;

    let background: f64 = doc
        .metadata
        .get("background")
        .and_then(|b| b.parse().ok())
        .unwrap_or(15.0);
    let mut entries: BTreeMap<_, _> = layout
        .actuators
        .iter()
        .filter(|(_, p)| p.pose.grid_index.is_some())
        .map(|(id, _)| (id.clone(), background))
        .collect();
    entries.extend(shape.entries);
    let map = Heightmap {
        name: preset.name(),
        entries,
        metadata: shape.metadata,
    };
    map.validate(layout)?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid_layout_oriented, ActuatorId, ActuatorSpec, LinePolicy, Orientation};
    use alloc::collections::BTreeSet;
    use alloc::vec::Vec;

    fn grid(rows: u32, cols: u32, orientation: Orientation) -> Layout {
        build_grid_layout_oriented(rows, cols, &ActuatorSpec::default(), 30.0, LinePolicy::default(), orientation)
            .unwrap()
    }

    #[test]
    fn names_round_trip() {
        for name in PRESET_NAMES {
            assert_eq!(Preset::from_name(name).unwrap().name(), name);
        }
        assert_eq!(
            Preset::from_name("flat:150").unwrap(),
            Preset::Flat { height_cm: 150.0 }
        );
        assert!(Preset::from_name("sofa").is_err());
    }

    #[test]
    fn flat_fills_everything() {
        let layout = grid(5, 5, Orientation::FloorVertical);
        let map = preset(&Preset::Flat { height_cm: 15.0 }, &layout).unwrap();
        assert_eq!(map.entries.len(), 25);
        assert!(map.entries.values().all(|&h| h == 15.0));
    }

    #[test]
    fn chair_has_seat_and_backrest() {
        let layout = grid(5, 5, Orientation::FloorVertical);
        let map = preset(&Preset::Chair, &layout).unwrap();
        assert_eq!(map.entries.len(), 25);
        let levels: BTreeSet<i64> = map.entries.values().map(|&h| h as i64).collect();
        assert!(levels.len() >= 3);
        assert_eq!(map.entries[&ActuatorId::from("r1c2")], 90.0);
        assert_eq!(map.entries[&ActuatorId::from("r2c2")], 45.0);
        assert_eq!(map.entries[&ActuatorId::from("r0c0")], 15.0);
    }

    #[test]
    fn arrow_is_a_connected_raised_mask() {
        let layout = grid(5, 5, Orientation::WallHorizontal);
        let map = preset(&Preset::ArrowWall, &layout).unwrap();
        let raised: Vec<ActuatorId> = map
            .entries
            .iter()
            .filter(|(_, &h)| h > 15.0)
            .map(|(id, _)| id.clone())
            .collect();
        assert!(raised.len() >= 5);
        let mut seen = BTreeSet::from([raised[0].clone()]);
        let mut stack = alloc::vec![raised[0].clone()];
        while let Some(id) = stack.pop() {
            for n in layout.neighbors(&id) {
                if raised.contains(&n) && seen.insert(n.clone()) {
                    stack.push(n);
                }
            }
        }
        assert_eq!(seen.len(), raised.len());
    }

    #[test]
    fn too_small_names_dimensions() {
        let layout = grid(2, 2, Orientation::FloorVertical);
        match preset(&Preset::Chair, &layout) {
            Err(ShapeError::TooSmall { need_rows, need_cols, .. }) => {
                assert_eq!((need_rows, need_cols), (3, 3));
            }
            other => panic!("{other:?}"),
        }
        let layout = grid(5, 4, Orientation::WallHorizontal);
        assert!(matches!(
            preset(&Preset::ArrowWall, &layout),
            Err(ShapeError::TooSmall { need_rows: 3, need_cols: 5, .. })
        ));
    }

    #[test]
    fn every_preset_fits_its_minimum_layout() {
        for name in PRESET_NAMES {
            let p = Preset::from_name(name).unwrap();
            let (r, c) = p
                .document()
                .map(|d| parse_grid(d).unwrap().dims())
                .unwrap_or((1, 1));
            let layout = grid(r as u32, c as u32, Orientation::FloorVertical);
            let map = preset(&p, &layout).unwrap();
            map.validate(&layout).unwrap();
            assert_eq!(map.entries.len(), r * c);
        }
    }
}
