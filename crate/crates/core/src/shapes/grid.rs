//! Grid heightmap text: a header line, optional `# key=value` metadata
//! lines, then one comma-separated row of heights per grid row. A `.` cell
//! leaves that unit unaddressed.
//!
//! ```text
//! lifttiles-v1
//! # name=chair
//! 90,90,90
//! 45,.,45
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::{Heightmap, ShapeError};
use crate::model::Layout;
use crate::FORMAT_HEADER;

/// A parsed grid document, not yet bound to a layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridDocument {
    pub rows: Vec<Vec<Option<f64>>>,
    pub metadata: BTreeMap<String, String>,
}

impl GridDocument {
    pub fn dims(&self) -> (usize, usize) {
        (self.rows.len(), self.rows.first().map_or(0, Vec::len))
    }
}

pub fn parse_grid(text: &str) -> Result<GridDocument, ShapeError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(FORMAT_HEADER) {
        return Err(ShapeError::MissingHeader);
    }
    let mut doc = GridDocument::default();
    for line in lines {
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                doc.metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let row = doc.rows.len();
        let cells = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| match cell.trim() {
                "." => Ok(None),
                t => t
                    .parse::<f64>()
                    .ok()
                    .filter(|h| h.is_finite())
                    .map(Some)
                    .ok_or_else(|| ShapeError::BadCell {
                        row,
                        col,
                        text: t.to_string(),
                    }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = doc.rows.first() {
            if first.len() != cells.len() {
                return Err(ShapeError::Ragged {
                    row,
                    expected: first.len(),
                    found: cells.len(),
                });
            }
        }
        doc.rows.push(cells);
    }
    Ok(doc)
}

/// Binds a grid document to a layout through grid indices, with the
/// document's top-left cell at `(row_offset, col_offset)`.
pub(crate) fn bind(
    doc: &GridDocument,
    layout: &Layout,
    row_offset: usize,
    col_offset: usize,
) -> Result<Heightmap, ShapeError> {
    let mut entries = BTreeMap::new();
    for (r, row) in doc.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let Some(h) = cell else { continue };
            let (gr, gc) = (r + row_offset, c + col_offset);
            let id = u32::try_from(gr)
                .ok()
                .zip(u32::try_from(gc).ok())
                .and_then(|(gr, gc)| layout.actuator_at_grid(gr, gc))
                .ok_or(ShapeError::UnknownCell { row: r, col: c })?;
            entries.insert(id.clone(), *h);
        }
    }
    let mut map = Heightmap {
        name: doc.metadata.get("name").cloned().unwrap_or_default(),
        entries,
        metadata: doc.metadata.clone(),
    };
    map.metadata.remove("name");
    map.validate(layout)?;
    Ok(map)
}

/// Parses grid text and resolves every present cell against `layout`.
pub fn heightmap_from_grid(text: &str, layout: &Layout) -> Result<Heightmap, ShapeError> {
    let doc = parse_grid(text)?;
    bind(&doc, layout, 0, 0)
}

/// Grid text covering the layout's grid; units without an entry print as
/// `.`. Heights print in shortest round-trip form.
pub fn render_grid(map: &Heightmap, layout: &Layout) -> Result<String, ShapeError> {
    let (rows, cols) = layout.grid_dims().ok_or(ShapeError::NotGrid)?;
    let mut out = String::new();
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    if !map.name.is_empty() {
        let _ = writeln!(out, "# name={}", map.name);
    }
    for (k, v) in &map.metadata {
        let _ = writeln!(out, "# {k}={v}");
    }
    for r in 0..rows {
        let cells: Vec<String> = (0..cols)
            .map(|c| {
                layout
                    .actuator_at_grid(r, c)
                    .and_then(|id| map.entries.get(id))
                    .map_or_else(|| ".".to_string(), |h| format!("{h}"))
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}
