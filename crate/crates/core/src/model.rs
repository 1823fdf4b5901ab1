//! Domain types shared by every other module: actuator parameters, poses,
//! the pneumatic topology (compressors and supply lines) and layouts.
//!
//! All lengths are centimeters in a room-local frame. A [`Pose`] anchors the
//! minimum corner of the square footprint; wall-mounted units use y-up.
//! Values are immutable once built; operations return new values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;


macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.into())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl core::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// Identifier of one actuator module.
    ActuatorId
);
string_id!(
    /// Identifier of a compressor feeding one or more supply lines.
    CompressorId
);
string_id!(
    /// Identifier of a shared supply line.
    LineId
);

/// Footprint side lengths that have been built and characterized.
pub const FOOTPRINTS_CM: [u32; 3] = [10, 20, 30];

/// Maximum gap between two footprints for them to count as side-by-side
/// neighbors when neither carries a grid index.
pub const ADJACENCY_GAP_CM: f64 = 5.0;

/// Static parameters of one inflatable module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorSpec {
    pub footprint_cm: u32,
    pub min_height_cm: f64,
    pub max_height_cm: f64,
    /// Extension speed with a full compressor's flow behind the supply valve.
    pub max_extend_rate_cm_s: f64,
    pub retract_rate_cm_s: f64,
    pub spring_count: u32,
    /// Force of a single constant-force spring.
    pub spring_force_kgf: f64,
    pub rated_load_kg: f64,
    /// Fraction of one compressor's output the supply valve can pass.
    pub valve_max_flow_units: f64,
    /// Inflated tube diameter, used for the pressure-area lift bound.
    pub tube_diameter_cm: f64,
    /// Per-unit scale on extension speed; models tubes that inflate at
    /// slightly different rates from the same line.
    pub rate_multiplier: f64,
}

impl Default for ActuatorSpec {
    fn default() -> Self {
        Self {
            footprint_cm: 30,
            min_height_cm: 15.0,
            max_height_cm: 150.0,
            // (150 - 15) / 16 s and (150 - 15) / 4 s
            max_extend_rate_cm_s: 8.4375,
            retract_rate_cm_s: 33.75,
            spring_count: 2,
            spring_force_kgf: 0.8,
            rated_load_kg: 10.0,
            valve_max_flow_units: 1.0,
            tube_diameter_cm: 20.0,
            rate_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("footprint {0} cm is not one of 10, 20, 30")]
    Footprint(u32),
    #[error("height range [{min}, {max}] cm must satisfy 0 < min < max")]
    HeightRange { min: f64, max: f64 },
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
}

impl ActuatorSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if !FOOTPRINTS_CM.contains(&self.footprint_cm) {
            return Err(SpecError::Footprint(self.footprint_cm));
        }
        // written so that NaN fails too
        if !(self.min_height_cm > 0.0 && self.min_height_cm < self.max_height_cm) {
            return Err(SpecError::HeightRange {
                min: self.min_height_cm,
                max: self.max_height_cm,
            });
        }
        for (field, value) in [
            ("max_extend_rate_cm_s", self.max_extend_rate_cm_s),
            ("retract_rate_cm_s", self.retract_rate_cm_s),
            ("valve_max_flow_units", self.valve_max_flow_units),
            ("tube_diameter_cm", self.tube_diameter_cm),
            ("rate_multiplier", self.rate_multiplier),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SpecError::NonPositive { field, value });
            }
        }
        for (field, value) in [
            ("spring_force_kgf", self.spring_force_kgf),
            ("rated_load_kg", self.rated_load_kg),
        ] {
            if !(value >= 0.0) {
                return Err(SpecError::Negative { field, value });
            }
        }
        Ok(())
    }

    pub fn stroke_cm(&self) -> f64 {
        self.max_height_cm - self.min_height_cm
    }

    /// Extension speed at full valve flow, including the rate multiplier.
    pub fn effective_extend_rate(&self) -> f64 {
        self.max_extend_rate_cm_s * self.rate_multiplier
    }

    pub fn contains_height(&self, h: f64) -> bool {
        h >= self.min_height_cm && h <= self.max_height_cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    FloorVertical,
    WallHorizontal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x_cm: f64,
    pub y_cm: f64,
    pub orientation: Orientation,
    /// `(row, col)` when the unit sits in a regular grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_index: Option<(u32, u32)>,
}

impl Pose {
    pub fn floor(x_cm: f64, y_cm: f64) -> Self {
        Self {
            x_cm,
            y_cm,
            orientation: Orientation::FloorVertical,
            grid_index: None,
        }
    }

    fn interior_overlaps(&self, side: f64, other: &Pose, other_side: f64) -> bool {
        self.orientation == other.orientation
            && self.x_cm < other.x_cm + other_side
            && other.x_cm < self.x_cm + side
            && self.y_cm < other.y_cm + other_side
            && other.y_cm < self.y_cm + side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValveState {
    Open,
    Closed,
}

impl ValveState {
    pub fn is_open(self) -> bool {
        self == ValveState::Open
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Fault {
    None,
    Buckled,
}

/// Dynamic condition of one actuator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub height_cm: f64,
    pub supply: ValveState,
    pub release: ValveState,
    pub load_kg: f64,
    pub fault: Fault,
}

impl ActuatorState {
    /// Valves closed, no load, at the given height.
    pub fn resting(height_cm: f64) -> Self {
        Self {
            height_cm,
            supply: ValveState::Closed,
            release: ValveState::Closed,
            load_kg: 0.0,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Compressor {
    pub pressure_kpa: f64,
    pub flow_l_min: f64,
    /// Normalized capacity; 1.0 drives exactly one actuator at its
    /// maximum extension rate.
    pub rate_units: f64,
}

impl Default for Compressor {
    fn default() -> Self {
        Self {
            pressure_kpa: 12.0,
            flow_l_min: 30.0,
            rate_units: 1.0,
        }
    }
}

/// A chain of T-fittings joining member supply valves to shared compressors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyLine {
    pub id: LineId,
    pub compressor_ids: Vec<CompressorId>,
    pub member_actuator_ids: Vec<ActuatorId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub spec: ActuatorSpec,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub actuators: BTreeMap<ActuatorId, Placement>,
    pub supply_lines: Vec<SupplyLine>,
    pub compressors: BTreeMap<CompressorId, Compressor>,
}

/// One broken layout invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("actuators {0} and {1} overlap")]
    Overlap(ActuatorId, ActuatorId),
    #[error("actuator {0} is on no supply line")]
    Orphan(ActuatorId),
    #[error("actuator {actuator} is on several supply lines: {lines:?}")]
    MultipleLines {
        actuator: ActuatorId,
        lines: Vec<LineId>,
    },
    #[error("supply line {line} lists unknown actuator {actuator}")]
    UnknownMember { line: LineId, actuator: ActuatorId },
    #[error("supply line {line} lists unknown compressor {compressor}")]
    UnknownCompressor { line: LineId, compressor: CompressorId },
    #[error("supply line {0} has no members")]
    EmptyLine(LineId),
    #[error("supply line {0} has no compressor")]
    NoCompressor(LineId),
    #[error("supply line id {0} is used more than once")]
    DuplicateLine(LineId),
    #[error("actuator {actuator}: {reason}")]
    InvalidSpec { actuator: ActuatorId, reason: SpecError },
    #[error("compressor {0} must have positive rate_units")]
    InvalidCompressor(CompressorId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutError {
    #[error("actuators {0} and {1} overlap")]
    Overlap(ActuatorId, ActuatorId),
    #[error("unknown actuator {0}")]
    UnknownActuator(ActuatorId),
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
    #[error("invalid actuator spec: {0}")]
    Spec(SpecError),
    #[error("invalid layout: {}", first_violation(.0))]
    Invalid(Vec<Violation>),
}

fn first_violation(v: &[Violation]) -> String {
    match v.first() {
        Some(first) if v.len() > 1 => format!("{first} (and {} more)", v.len() - 1),
        Some(first) => format!("{first}"),
        None => String::new(),
    }
}

impl LayoutError {
    fn from_violations(violations: Vec<Violation>) -> Self {
        match violations.first() {
            Some(Violation::Overlap(a, b)) if violations.len() == 1 => {
                LayoutError::Overlap(a.clone(), b.clone())
            }
            _ => LayoutError::Invalid(violations),
        }
    }
}

/// How grid units are chained onto supply lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Partition {
    #[default]
    PerRow,
    PerColumn,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinePolicy {
    pub partition: Partition,
    pub compressors_per_line: u32,
}

impl Default for LinePolicy {
    fn default() -> Self {
        Self {
            partition: Partition::PerRow,
            compressors_per_line: 1,
        }
    }
}

/// Builds a `rows` x `cols` floor grid with ids `r{row}c{col}`.
pub fn build_grid_layout(
    rows: u32,
    cols: u32,
    spec: &ActuatorSpec,
    pitch_cm: f64,
    lines: LinePolicy,
) -> Result<Layout, LayoutError> {
    build_grid_layout_oriented(rows, cols, spec, pitch_cm, lines, Orientation::FloorVertical)
}

/// Same as [`build_grid_layout`] with an explicit mounting orientation. On a
/// wall, row 0 is the top row.
pub fn build_grid_layout_oriented(
    rows: u32,
    cols: u32,
    spec: &ActuatorSpec,
    pitch_cm: f64,
    lines: LinePolicy,
    orientation: Orientation,
) -> Result<Layout, LayoutError> {
    if rows == 0 || cols == 0 {
        return Err(LayoutError::EmptyGrid);
    }
    spec.validate().map_err(LayoutError::Spec)?;

    let mut layout = Layout::default();
    for r in 0..rows {
        for c in 0..cols {
            let y_row = match orientation {
                Orientation::FloorVertical => r,
                Orientation::WallHorizontal => rows - 1 - r,
            };
            let pose = Pose {
                x_cm: c as f64 * pitch_cm,
                y_cm: y_row as f64 * pitch_cm,
                orientation,
                grid_index: Some((r, c)),
            };
            layout.actuators.insert(
                grid_actuator_id(r, c),
                Placement {
                    spec: spec.clone(),
                    pose,
                },
            );
        }
    }

    let groups: Vec<(String, Vec<ActuatorId>)> = match lines.partition {
        Partition::PerRow => (0..rows)
            .map(|r| (format!("row{r}"), (0..cols).map(|c| grid_actuator_id(r, c)).collect()))
            .collect(),
        Partition::PerColumn => (0..cols)
            .map(|c| (format!("col{c}"), (0..rows).map(|r| grid_actuator_id(r, c)).collect()))
            .collect(),
        Partition::Single => alloc::vec![(
            String::from("line0"),
            (0..rows)
                .flat_map(|r| (0..cols).map(move |c| grid_actuator_id(r, c)))
                .collect(),
        )],
    };
    for (line, members) in groups {
        let compressor_ids: Vec<CompressorId> = (0..lines.compressors_per_line)
            .map(|k| CompressorId(format!("{line}-c{k}")))
            .collect();
        for id in &compressor_ids {
            layout.compressors.insert(id.clone(), Compressor::default());
        }
        layout.supply_lines.push(SupplyLine {
            id: LineId(line),
            compressor_ids,
            member_actuator_ids: members,
        });
    }

    let violations = validate_layout(&layout);
    if violations.is_empty() {
        Ok(layout)
    } else {
        Err(LayoutError::from_violations(violations))
    }
}

pub fn grid_actuator_id(row: u32, col: u32) -> ActuatorId {
    ActuatorId(format!("r{row}c{col}"))
}

/// Every invariant violation in `layout`; empty means valid.
pub fn validate_layout(layout: &Layout) -> Vec<Violation> {
    let mut out = Vec::new();

    for (id, p) in &layout.actuators {
        if let Err(reason) = p.spec.validate() {
            out.push(Violation::InvalidSpec {
                actuator: id.clone(),
                reason,
            });
        }
    }
    for (id, c) in &layout.compressors {
        if !(c.rate_units > 0.0) {
            out.push(Violation::InvalidCompressor(id.clone()));
        }
    }

    out.extend(overlaps(layout));

    let mut seen_lines = BTreeSet::new();
    let mut membership: BTreeMap<&ActuatorId, Vec<LineId>> = BTreeMap::new();
    for line in &layout.supply_lines {
        if !seen_lines.insert(&line.id) {
            out.push(Violation::DuplicateLine(line.id.clone()));
        }
        if line.member_actuator_ids.is_empty() {
            out.push(Violation::EmptyLine(line.id.clone()));
        }
        if line.compressor_ids.is_empty() {
            out.push(Violation::NoCompressor(line.id.clone()));
        }
        for c in &line.compressor_ids {
            if !layout.compressors.contains_key(c) {
                out.push(Violation::UnknownCompressor {
                    line: line.id.clone(),
                    compressor: c.clone(),
                });
            }
        }
        for a in &line.member_actuator_ids {
            match layout.actuators.get_key_value(a) {
                Some((key, _)) => membership.entry(key).or_default().push(line.id.clone()),
                None => out.push(Violation::UnknownMember {
                    line: line.id.clone(),
                    actuator: a.clone(),
                }),
            }
        }
    }
    for id in layout.actuators.keys() {
        match membership.get(id) {
            None => out.push(Violation::Orphan(id.clone())),
            Some(lines) if lines.len() > 1 => out.push(Violation::MultipleLines {
                actuator: id.clone(),
                lines: lines.clone(),
            }),
            Some(_) => {}
        }
    }
    out
}

fn overlaps(layout: &Layout) -> Vec<Violation> {
    let units: Vec<(&ActuatorId, &Placement)> = layout.actuators.iter().collect();
    let mut out = Vec::new();
    for (i, (a, pa)) in units.iter().enumerate() {
        for (b, pb) in &units[i + 1..] {
            if pa.pose.interior_overlaps(
                pa.spec.footprint_cm as f64,
                &pb.pose,
                pb.spec.footprint_cm as f64,
            ) {
                out.push(Violation::Overlap((*a).clone(), (*b).clone()));
            }
        }
    }
    out
}

/// Repositions one unit. Supply-line membership does not change. A grid
/// index carried over unchanged from the old pose is dropped when the
/// coordinates move, since it no longer describes the position.
pub fn move_actuator(layout: &Layout, id: &ActuatorId, new_pose: Pose) -> Result<Layout, LayoutError> {
    let current = layout
        .actuators
        .get(id)
        .ok_or_else(|| LayoutError::UnknownActuator(id.clone()))?;
    let mut pose = new_pose;
    let moved = pose.x_cm != current.pose.x_cm
        || pose.y_cm != current.pose.y_cm
        || pose.orientation != current.pose.orientation;
    if moved && pose.grid_index.is_some() && pose.grid_index == current.pose.grid_index {
        pose.grid_index = None;
    }

    let side = current.spec.footprint_cm as f64;
    for (other_id, other) in &layout.actuators {
        if other_id != id
            && pose.interior_overlaps(side, &other.pose, other.spec.footprint_cm as f64)
        {
            return Err(LayoutError::Overlap(id.clone(), other_id.clone()));
        }
    }

    let mut next = layout.clone();
    if let Some(p) = next.actuators.get_mut(id) {
        p.pose = pose;
    }
    Ok(next)
}

impl Layout {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let v = validate_layout(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(LayoutError::from_violations(v))
        }
    }

    pub fn spec(&self, id: &ActuatorId) -> Option<&ActuatorSpec> {
        self.actuators.get(id).map(|p| &p.spec)
    }

    pub fn line_of(&self, id: &ActuatorId) -> Option<&SupplyLine> {
        self.supply_lines
            .iter()
            .find(|l| l.member_actuator_ids.contains(id))
    }

    /// Sum of the line's compressors' normalized capacity.
    pub fn line_capacity(&self, line: &SupplyLine) -> f64 {
        line.compressor_ids
            .iter()
            .filter_map(|c| self.compressors.get(c))
            .map(|c| c.rate_units)
            .sum()
    }

    /// Highest supply pressure available to the unit's line.
    pub fn line_pressure_kpa(&self, id: &ActuatorId) -> f64 {
        self.line_of(id)
            .map(|line| {
                line.compressor_ids
                    .iter()
                    .filter_map(|c| self.compressors.get(c))
                    .map(|c| c.pressure_kpa)
                    .fold(0.0, f64::max)
            })
            .unwrap_or(0.0)
    }

    /// `(rows, cols)` spanned by grid indices, if any unit carries one.
    pub fn grid_dims(&self) -> Option<(u32, u32)> {
        self.actuators
            .values()
            .filter_map(|p| p.pose.grid_index)
            .fold(None, |acc, (r, c)| match acc {
                None => Some((r + 1, c + 1)),
                Some((rr, cc)) => Some((rr.max(r + 1), cc.max(c + 1))),
            })
    }

    pub fn actuator_at_grid(&self, row: u32, col: u32) -> Option<&ActuatorId> {
        self.actuators
            .iter()
            .find(|(_, p)| p.pose.grid_index == Some((row, col)))
            .map(|(id, _)| id)
    }

    /// Side-by-side neighbors: grid 4-neighbors when both units carry a grid
    /// index, otherwise footprints sharing an edge within
    /// [`ADJACENCY_GAP_CM`].
    pub fn neighbors(&self, id: &ActuatorId) -> Vec<ActuatorId> {
        let Some(me) = self.actuators.get(id) else {
            return Vec::new();
        };
        self.actuators
            .iter()
            .filter(|(other_id, other)| *other_id != id && adjacent(me, other))
            .map(|(other_id, _)| other_id.clone())
            .collect()
    }
}

fn adjacent(a: &Placement, b: &Placement) -> bool {
    if a.pose.orientation != b.pose.orientation {
        return false;
    }
    if let (Some((ra, ca)), Some((rb, cb))) = (a.pose.grid_index, b.pose.grid_index) {
        return ra.abs_diff(rb) + ca.abs_diff(cb) == 1;
    }
    let (sa, sb) = (a.spec.footprint_cm as f64, b.spec.footprint_cm as f64);
    let span_overlap = |a0: f64, b0: f64| libm::fmin(a0 + sa, b0 + sb) - libm::fmax(a0, b0);
    let gap = |a0: f64, b0: f64| -span_overlap(a0, b0);
    let x_overlap = span_overlap(a.pose.x_cm, b.pose.x_cm);
    let y_overlap = span_overlap(a.pose.y_cm, b.pose.y_cm);
    let x_gap = gap(a.pose.x_cm, b.pose.x_cm);
    let y_gap = gap(a.pose.y_cm, b.pose.y_cm);
    let near = 0.0..=ADJACENCY_GAP_CM;
    (x_overlap > 0.0 && near.contains(&y_gap)) || (y_overlap > 0.0 && near.contains(&x_gap))
}
