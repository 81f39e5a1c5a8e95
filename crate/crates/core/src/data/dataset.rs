use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

use super::geometry::{distance_matrix, validate_distances, DistanceMetric};

/// Node geometry as supplied at load time.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// `[N, 2]` planar coordinates.
    Coordinates(Tensor<f64>),
    /// `[N, N]` precomputed distances.
    Distances(Tensor<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Coords,
    Distances,
}

/// Observations `[T, N]` with node labels and geometry.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    pub name: String,
    pub observations: Tensor<f64>,
    pub node_ids: Vec<String>,
    pub geometry: Geometry,
    pub resolution: Option<String>,
}

impl SeriesDataset {
    pub fn new(
        name: impl Into<String>,
        observations: Tensor<f64>,
        node_ids: Vec<String>,
        geometry: Geometry,
    ) -> Result<Self> {
        if observations.rank() != 2 {
            return Err(Error::Data(format!("observations must be [T, N], got {:?}", observations.shape())));
        }
        let n = observations.shape()[1];
        if node_ids.len() != n {
            return Err(Error::Data(format!("{} node ids for {n} observation columns", node_ids.len())));
        }
        let geo_nodes = match &geometry {
            Geometry::Coordinates(c) => {
                if c.rank() != 2 || c.shape()[1] != 2 {
                    return Err(Error::Data(format!("coordinates must be [N, 2], got {:?}", c.shape())));
                }
                c.shape()[0]
            }
            Geometry::Distances(d) => {
                validate_distances(d)?;
                d.shape()[0]
            }
        };
        if geo_nodes != n {
            return Err(Error::Data(format!("geometry describes {geo_nodes} nodes, observations have {n}")));
        }
        if let Some(i) = observations.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite observation at row {}, column {}", i / n, i % n)));
        }
        Ok(Self { name: name.into(), observations, node_ids, geometry, resolution: None })
    }

    pub fn steps(&self) -> usize {
        self.observations.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.observations.shape()[1]
    }

    pub fn coordinates(&self) -> Option<&Tensor<f64>> {
        match &self.geometry {
            Geometry::Coordinates(c) => Some(c),
            Geometry::Distances(_) => None,
        }
    }

    /// Distance matrix; derived from coordinates with `metric` when needed.
    /// A supplied matrix is returned as-is.
    pub fn distances(&self, metric: DistanceMetric) -> Result<Tensor<f64>> {
        match &self.geometry {
            Geometry::Coordinates(c) => distance_matrix(c, metric),
            Geometry::Distances(d) => Ok(d.clone()),
        }
    }

    /// Rows `[start, end)` of the series, sharing ids and geometry.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Tensor<f64>> {
        slice_rows(&self.observations, start, end)
    }
}

pub(crate) fn slice_rows(data: &Tensor<f64>, start: usize, end: usize) -> Result<Tensor<f64>> {
    let (t, n) = (data.shape()[0], data.shape()[1]);
    if start >= end || end > t {
        return Err(Error::Data(format!("row range {start}..{end} invalid for {t} steps")));
    }
    Tensor::new(vec![end - start, n], data.data()[start * n..end * n].to_vec())
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| Error::Load(format!("line {line}, column `{column}`: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Load(format!("line {line}, column `{column}`: non-finite value `{cell}`")));
    }
    Ok(v)
}

fn reader(path: &Path, has_headers: bool) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Reads an observation table: header row of node ids, one row per step.
pub fn read_observations(path: &Path) -> Result<(Vec<String>, Tensor<f64>)> {
    let mut rdr = reader(path, true)?;
    let ids: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if ids.is_empty() || ids.iter().any(String::is_empty) {
        return Err(Error::Load(format!("{}: header must list node ids", path.display())));
    }
    let n = ids.len();
    let mut values = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows as u64 + 2, |p| p.line());
        if rec.len() != n {
            return Err(Error::Load(format!("line {line}: expected {n} columns, found {}", rec.len())));
        }
        for (cell, id) in rec.iter().zip(&ids) {
            values.push(parse_cell(cell, line, id)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Load(format!("{}: no observation rows", path.display())));
    }
    Ok((ids, Tensor::new(vec![rows, n], values)?))
}

/// Reads `node_id,x,y` rows, reordered to match `ids`.
pub fn read_coordinates(path: &Path, ids: &[String]) -> Result<Tensor<f64>> {
    let mut rdr = reader(path, true)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header != ["node_id", "x", "y"] {
        return Err(Error::Load(format!("{}: header must be `node_id,x,y`, got {header:?}", path.display())));
    }
    let mut by_id: HashMap<String, [f64; 2]> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(Error::Load(format!("line {line}: expected 3 columns, found {}", rec.len())));
        }
        let id = rec[0].trim().to_owned();
        let xy = [parse_cell(&rec[1], line, "x")?, parse_cell(&rec[2], line, "y")?];
        if by_id.insert(id.clone(), xy).is_some() {
            return Err(Error::Load(format!("line {line}: duplicate node id `{id}`")));
        }
    }
    if by_id.len() != ids.len() {
        return Err(Error::Load(format!(
            "{}: geometry lists {} nodes, observations have {}",
            path.display(),
            by_id.len(),
            ids.len()
        )));
    }
    let mut flat = Vec::with_capacity(2 * ids.len());
    for id in ids {
        let xy = by_id
            .get(id)
            .ok_or_else(|| Error::Load(format!("{}: no coordinates for node `{id}`", path.display())))?;
        flat.extend_from_slice(xy);
    }
    Tensor::new(vec![ids.len(), 2], flat)
}

/// Reads a headerless square distance table.
pub fn read_distances(path: &Path, n: usize) -> Result<Tensor<f64>> {
    let mut rdr = reader(path, false)?;
    let mut values = Vec::with_capacity(n * n);
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(rows as u64 + 1, |p| p.line());
        if rec.len() != n {
            return Err(Error::Load(format!("line {line}: expected {n} distances, found {}", rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            values.push(parse_cell(cell, line, &j.to_string())?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Load(format!("{}: {rows} distance rows for {n} nodes", path.display())));
    }
    let d = Tensor::new(vec![n, n], values)?;
    validate_distances(&d).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(d)
}

/// Loads an observation CSV plus its geometry file.
pub fn load_dataset(observations_path: &Path, geometry_path: &Path, kind: GeometryKind) -> Result<SeriesDataset> {
    let (ids, obs) = read_observations(observations_path)?;
    let geometry = match kind {
        GeometryKind::Coords => Geometry::Coordinates(read_coordinates(geometry_path, &ids)?),
        GeometryKind::Distances => Geometry::Distances(read_distances(geometry_path, ids.len())?),
    };
    let name = observations_path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    SeriesDataset::new(name, obs, ids, geometry)
}

/// Writes observations in the loader's format.
pub fn write_observations(path: &Path, ids: &[String], data: &Tensor<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ids)?;
    let n = ids.len();
    for row in data.data().chunks(n) {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coordinates(path: &Path, ids: &[String], coords: &Tensor<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node_id", "x", "y"])?;
    for (id, xy) in ids.iter().zip(coords.data().chunks(2)) {
        w.write_record([id.clone(), xy[0].to_string(), xy[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Published shape of a benchmark dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetInfo {
    pub name: &'static str,
    pub category: &'static str,
    pub nodes: usize,
    pub time_points: usize,
    pub resolution: &'static str,
    pub date_range: &'static str,
}

pub const BENCHMARKS: [DatasetInfo; 3] = [
    DatasetInfo {
        name: "PEMS04F",
        category: "Traffic",
        nodes: 307,
        time_points: 16992,
        resolution: "5 min",
        date_range: "2018-01-01..2018-02-28",
    },
    DatasetInfo {
        name: "DeepBase",
        category: "Hydrology",
        nodes: 1661,
        time_points: 14975,
        resolution: "1 day",
        date_range: "1981-01-01..2022-12-31",
    },
    DatasetInfo {
        name: "SINPA",
        category: "Urban Mobility",
        nodes: 1687,
        time_points: 35040,
        resolution: "15 min",
        date_range: "2020-07-01..2021-06-30",
    },
];

pub fn benchmark(name: &str) -> Option<&'static DatasetInfo> {
    BENCHMARKS.iter().find(|b| b.name.eq_ignore_ascii_case(name))
}
