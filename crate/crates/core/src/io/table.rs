//! Cell table (CSV) and JSON summaries.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use crate::fusion::CellClass;
use crate::morphometry::{BBox3, CellRecord};
use crate::{Error, Result};

pub const CELL_TABLE_HEADER: [&str; 9] = [
    "label",
    "class",
    "centroid_x_um",
    "centroid_y_um",
    "centroid_z_um",
    "voxel_count",
    "volume_um3",
    "feret_um",
    "z_extent_planes",
];

/// Writes one row per cell. Feret values are center-to-center distances.
pub fn write_cell_table(path: impl AsRef<Path>, cells: &[CellRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CELL_TABLE_HEADER).map_err(csv_err)?;
    for c in cells {
        w.write_record([
            c.label.to_string(),
            c.class_name().to_string(),
            c.centroid_um[0].to_string(),
            c.centroid_um[1].to_string(),
            c.centroid_um[2].to_string(),
            c.voxel_count.to_string(),
            c.volume_um3.to_string(),
            c.feret_um.to_string(),
            c.z_extent.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_cell_table`]. Bounding boxes are not
/// stored and come back empty.
pub fn read_cell_table(path: impl AsRef<Path>) -> Result<Vec<CellRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if header.iter().ne(CELL_TABLE_HEADER) {
        return Err(Error::format(path, "unexpected cell table header"));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |col: usize| Error::format(path, format!("row {}: bad {}", i + 1, CELL_TABLE_HEADER[col]));
        let f = |col: usize| row[col].parse::<f64>().map_err(|_| bad(col));
        let u = |col: usize| row[col].parse::<usize>().map_err(|_| bad(col));
        let class = match &row[1] {
            "unknown" => None,
            s => Some(CellClass::parse(s).ok_or_else(|| bad(1))?),
        };
        out.push(CellRecord {
            label: row[0].parse().map_err(|_| bad(0))?,
            class,
            centroid_um: [f(2)?, f(3)?, f(4)?],
            voxel_count: u(5)?,
            volume_um3: f(6)?,
            feret_um: f(7)?,
            z_extent: u(8)?,
            bbox: BBox3 { min: [0; 3], max: [0; 3] },
        });
    }
    Ok(out)
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| Error::format(path, e.to_string()))
}
