//! On-disk documents: layouts, heightmaps, physicalization series and
//! schedules.
//!
//! Layouts and schedules are plain JSON. Heightmaps and series start with a
//! `lifttiles-v1` header line; a heightmap body is either a grid matrix or a
//! JSON object. JSON output is canonical: object keys sorted, no whitespace.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lifttiles_core::model::{ActuatorId, Layout, LayoutError};
use lifttiles_core::plan::Schedule;
use lifttiles_core::shapes::{heightmap_from_grid, render_grid, Heightmap, PhysicalizationSeries, ShapeError};
use lifttiles_core::FORMAT_HEADER;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid layout: {0}")]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("document must start with a `{FORMAT_HEADER}` header line")]
    MissingHeader,
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

impl FormatError {
    /// Whether the input was readable but failed validation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, FormatError::Io { .. })
    }
}

/// JSON with object keys sorted at every level.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    // serde_json's map keeps keys ordered
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.to_owned(),
        source,
    })
}

fn strip_header(text: &str) -> Option<&str> {
    let rest = text.trim_start().strip_prefix(FORMAT_HEADER)?;
    (rest.is_empty() || rest.starts_with(['\n', '\r'])).then_some(rest)
}

/// Accepts JSON with or without a leading header line.
fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    Ok(serde_json::from_str(strip_header(text).unwrap_or(text))?)
}

pub fn parse_layout(text: &str) -> Result<Layout, FormatError> {
    let layout: Layout = parse_json(text)?;
    layout.validate()?;
    Ok(layout)
}

pub fn render_layout(layout: &Layout) -> String {
    let mut s = to_canonical_json(layout).expect("layouts serialize");
    s.push('\n');
    s
}

pub fn load_layout(path: &Path) -> Result<Layout, FormatError> {
    parse_layout(&read_text(path)?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HeightmapJson {
    Full(Heightmap),
    Plain(BTreeMap<ActuatorId, f64>),
}

/// A grid or JSON heightmap, resolved and validated against `layout`.
pub fn parse_heightmap(text: &str, layout: &Layout) -> Result<Heightmap, FormatError> {
    let body = strip_header(text).ok_or(FormatError::MissingHeader)?;
    let first = body
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    if first.is_some_and(|l| l.starts_with('{')) {
        let map = match serde_json::from_str::<HeightmapJson>(body)? {
            HeightmapJson::Full(h) => h,
            HeightmapJson::Plain(entries) => Heightmap::new("", entries),
        };
        map.validate(layout)?;
        Ok(map)
    } else {
        Ok(heightmap_from_grid(text, layout)?)
    }
}

pub fn load_heightmap(path: &Path, layout: &Layout) -> Result<Heightmap, FormatError> {
    parse_heightmap(&read_text(path)?, layout)
}

/// Header plus canonical JSON.
pub fn render_heightmap_json(map: &Heightmap) -> String {
    format!("{FORMAT_HEADER}\n{}\n", to_canonical_json(map).expect("heightmaps serialize"))
}

/// Grid text when the layout has a grid, JSON otherwise.
pub fn render_heightmap(map: &Heightmap, layout: &Layout) -> String {
    let on_grid = map
        .entries
        .keys()
        .all(|id| layout.actuators.get(id).is_some_and(|p| p.pose.grid_index.is_some()));
    match render_grid(map, layout) {
        Ok(text) if on_grid => text,
        _ => render_heightmap_json(map),
    }
}

pub fn parse_series(text: &str) -> Result<PhysicalizationSeries, FormatError> {
    let body = strip_header(text).ok_or(FormatError::MissingHeader)?;
    let series: PhysicalizationSeries = serde_json::from_str(body)?;
    series.validate()?;
    Ok(series)
}

pub fn render_series(series: &PhysicalizationSeries) -> String {
    format!("{FORMAT_HEADER}\n{}\n", to_canonical_json(series).expect("series serialize"))
}

pub fn parse_schedule(text: &str, layout: Option<&Layout>) -> Result<Schedule, FormatError> {
    let schedule: Schedule = parse_json(text)?;
    if let Some(layout) = layout {
        schedule
            .validate(layout)
            .map_err(|e| FormatError::Schedule(e.to_string()))?;
    }
    Ok(schedule)
}

pub fn render_schedule(schedule: &Schedule) -> String {
    let mut s = to_canonical_json(schedule).expect("schedules serialize");
    s.push('\n');
    s
}
