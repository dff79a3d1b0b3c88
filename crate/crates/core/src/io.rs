//! File formats: target CSV (`v,bx,by`), diagram JSON and trace CSV.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::TraceRow;
use crate::geom2d::{Domain, Edge, LaguerreDiagram, Point, SeedConfig, WeightVector};
use crate::objective::TargetData;

#[derive(Serialize, Deserialize)]
struct TargetRow {
    v: f64,
    bx: f64,
    by: f64,
}

/// Writes one row per cell. Values are printed with the shortest
/// representation that parses back to the same double.
pub fn write_targets<W: Write>(data: &TargetData, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (&v, b) in data.areas().iter().zip(data.centroids()) {
        w.serialize(TargetRow {
            v,
            bx: b.x,
            by: b.y,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads targets without validating them against a domain.
pub fn read_targets<R: Read>(input: R) -> Result<TargetData> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["v", "bx", "by"] {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: format!(
                "expected header `v,bx,by`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut v = Vec::new();
    let mut b = Vec::new();
    for row in r.deserialize() {
        let row: TargetRow = row?;
        v.push(row.v);
        b.push(Point::new(row.bx, row.by));
    }
    if v.is_empty() {
        return Err(Error::Parse {
            line: 2,
            column: 1,
            message: "no target rows".into(),
        });
    }
    Ok(TargetData::new_unchecked(v, b))
}

pub fn save_targets(data: &TargetData, path: impl AsRef<Path>) -> Result<()> {
    write_targets(data, std::fs::File::create(path)?)
}

pub fn load_targets(path: impl AsRef<Path>) -> Result<TargetData> {
    read_targets(std::fs::File::open(path)?)
}

/// A diagram with the data that generated it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramDocument {
    pub domain: Domain,
    pub seeds: Vec<Point>,
    pub weights: Vec<f64>,
    /// Cell vertices counterclockwise; empty for an empty cell.
    pub cells: Vec<Vec<Point>>,
    pub areas: Vec<f64>,
    pub centroids: Vec<Option<Point>>,
    pub edges: Vec<Edge>,
}

impl DiagramDocument {
    pub fn new(
        domain: &Domain,
        seeds: &SeedConfig,
        weights: &WeightVector,
        diagram: &LaguerreDiagram,
    ) -> Self {
        DiagramDocument {
            domain: domain.clone(),
            seeds: seeds.points().to_vec(),
            weights: weights.as_slice().to_vec(),
            cells: diagram
                .cells
                .iter()
                .map(|c| c.vertices().to_vec())
                .collect(),
            areas: diagram.areas.clone(),
            centroids: diagram.centroids.clone(),
            edges: diagram.edges.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// Columns `iter,objective,f,min_pair_dist_over_delta,active_constraints`.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    write_trace(rows, std::fs::File::create(path)?)
}
