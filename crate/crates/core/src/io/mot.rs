//! The benchmark exchange format: comma-separated
//! `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z` records, one per
//! line, with top-left box parameterization. Detections carry id -1; the
//! world-coordinate fields are passed through as -1 when absent.

use thiserror::Error;

use crate::types::BoundingBox;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MotError {
    #[error("line {line}: expected 10 comma-separated fields, found {found}")]
    FieldCount { line: usize, found: usize },
    #[error("line {line}: could not parse field `{field}`")]
    BadField { line: usize, field: &'static str },
    #[error("line {line}: width and height must be positive")]
    NonPositiveSize { line: usize },
    #[error("line {line}: frame index must be at least 1")]
    BadFrame { line: usize },
}

/// One file row. Geometry is stored exactly as read (top-left corner plus
/// size); conversion to the center parameterization happens on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRecord {
    pub frame: u32,
    /// Track identity; -1 marks an anonymous detection.
    pub id: i64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub conf: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MotRecord {
    /// Center-based view of the record's geometry.
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(
            self.left + self.width / 2.0,
            self.top + self.height / 2.0,
            self.width,
            self.height,
        )
    }

    /// Builds a record from a center-based box, defaulting the world
    /// coordinates to -1.
    pub fn from_bbox(frame: u32, id: i64, bbox: &BoundingBox, conf: f64) -> Self {
        Self {
            frame,
            id,
            left: bbox.left(),
            top: bbox.top(),
            width: bbox.w,
            height: bbox.h,
            conf,
            x: -1.0,
            y: -1.0,
            z: -1.0,
        }
    }
}

/// Parses a whole file; blank lines are ignored, everything else must be a
/// valid record. Errors carry 1-based line numbers.
pub fn parse_mot(content: &str) -> Result<Vec<MotRecord>, MotError> {
    let mut records = Vec::new();
    for (index, raw) in content.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(MotError::FieldCount {
                line,
                found: fields.len(),
            });
        }
        let frame: u32 = fields[0].parse().map_err(|_| MotError::BadField {
            line,
            field: "frame",
        })?;
        if frame < 1 {
            return Err(MotError::BadFrame { line });
        }
        let id: i64 = fields[1]
            .parse()
            .map_err(|_| MotError::BadField { line, field: "id" })?;
        let float = |idx: usize, field: &'static str| -> Result<f64, MotError> {
            fields[idx]
                .parse::<f64>()
                .map_err(|_| MotError::BadField { line, field })
        };
        let left = float(2, "bb_left")?;
        let top = float(3, "bb_top")?;
        let width = float(4, "bb_width")?;
        let height = float(5, "bb_height")?;
        if width <= 0.0 || height <= 0.0 {
            return Err(MotError::NonPositiveSize { line });
        }
        records.push(MotRecord {
            frame,
            id,
            left,
            top,
            width,
            height,
            conf: float(6, "conf")?,
            x: float(7, "x")?,
            y: float(8, "y")?,
            z: float(9, "z")?,
        });
    }
    Ok(records)
}

/// Renders records in file order, floats at two decimals, one newline-
/// terminated line per record.
pub fn write_mot(records: &[MotRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{},{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}\n",
            r.frame, r.id, r.left, r.top, r.width, r.height, r.conf, r.x, r.y, r.z
        ));
    }
    out
}
