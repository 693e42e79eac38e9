//! CSV readers and writers for datasets, grids and curves.
//!
//! A dataset directory holds four files:
//!
//! - `grid.csv`: one column `u`, the action grid.
//! - `transitions.csv`: `subject_id,time_index,reward,anchor,state_0..,next_0..`
//!   (`anchor` empty for actions that are not log-quantile densities).
//! - `actions.csv`: `a_0..a_{G-1}`, one row per transition in the same order.
//! - `initial.csv`: `state_0..`, one row per initial state.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! written file reproduces every value bit for bit.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Dataset, Grid, GridFunction, State, Transition};

pub const GRID_FILE: &str = "grid.csv";
pub const TRANSITIONS_FILE: &str = "transitions.csv";
pub const ACTIONS_FILE: &str = "actions.csv";
pub const INITIAL_FILE: &str = "initial.csv";

pub(crate) fn fmt(x: f64) -> String {
    format!("{x}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

pub(crate) fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("row {row}: cannot parse '{field}' as a number")))
}

/// Writes a numeric table with the given header.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::DimensionMismatch {
                expected: header.len(),
                found: r.len(),
            });
        }
        w.write_record(r.iter().map(|&x| fmt(x))).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a numeric table; returns the header and rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| parse_f64(path, i + 1, f))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<()> {
    let rows: Vec<Vec<f64>> = grid.points().iter().map(|&u| vec![u]).collect();
    write_table(path, &["u".to_string()], &rows)
}

pub fn read_grid(path: &Path) -> Result<Arc<Grid>> {
    let (_, rows) = read_table(path)?;
    let pts = rows
        .into_iter()
        .map(|r| r.first().copied().ok_or_else(|| Error::parse(path, "empty row")))
        .collect::<Result<Vec<_>>>()?;
    Grid::new(pts).map_err(|e| Error::parse(path, e.to_string()))
}

/// Writes a curve as two columns `p,value`.
pub fn write_curve(path: &Path, f: &GridFunction) -> Result<()> {
    let rows: Vec<Vec<f64>> = f
        .grid()
        .points()
        .iter()
        .zip(f.values())
        .map(|(&p, &v)| vec![p, v])
        .collect();
    write_table(path, &["p".to_string(), "value".to_string()], &rows)
}

/// Reads a `p,value` curve; the grid is taken from the `p` column.
pub fn read_curve(path: &Path) -> Result<GridFunction> {
    let (header, rows) = read_table(path)?;
    if header.len() != 2 {
        return Err(Error::parse(path, "expected two columns p,value"));
    }
    let grid = Grid::new(rows.iter().map(|r| r[0]).collect()).map_err(|e| Error::parse(path, e.to_string()))?;
    GridFunction::new(grid, rows.iter().map(|r| r[1]).collect())
}

/// Reads a `p,value` curve and checks it lies on `grid`.
pub fn read_curve_on(path: &Path, grid: &Arc<Grid>) -> Result<GridFunction> {
    let f = read_curve(path)?;
    if f.grid().points() != grid.points() {
        return Err(Error::parse(path, "curve grid differs from the expected grid"));
    }
    GridFunction::new(grid.clone(), f.into_values())
}

/// Paths of the four dataset files under `dir`.
pub fn dataset_files(dir: &Path) -> [PathBuf; 4] {
    [GRID_FILE, TRANSITIONS_FILE, ACTIONS_FILE, INITIAL_FILE].map(|f| dir.join(f))
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [grid_p, tr_p, act_p, init_p] = dataset_files(dir);
    write_grid(&grid_p, dataset.grid())?;
    let p = dataset.state_dim();

    let mut w = writer(&tr_p)?;
    let mut header = vec![
        "subject_id".to_string(),
        "time_index".to_string(),
        "reward".to_string(),
        "anchor".to_string(),
    ];
    header.extend((0..p).map(|k| format!("state_{k}")));
    header.extend((0..p).map(|k| format!("next_{k}")));
    w.write_record(&header).map_err(|e| csv_err(&tr_p, e))?;
    for t in dataset.transitions() {
        let mut rec = vec![
            t.subject_id.clone(),
            t.time_index.to_string(),
            fmt(t.reward),
            t.action_anchor.map(fmt).unwrap_or_default(),
        ];
        rec.extend(t.state.components().iter().map(|&x| fmt(x)));
        rec.extend(t.next_state.components().iter().map(|&x| fmt(x)));
        w.write_record(&rec).map_err(|e| csv_err(&tr_p, e))?;
    }
    w.flush().map_err(|e| Error::io(&tr_p, e))?;

    let g = dataset.grid().len();
    let act_header: Vec<String> = (0..g).map(|k| format!("a_{k}")).collect();
    let acts: Vec<Vec<f64>> = dataset.transitions().iter().map(|t| t.action.values().to_vec()).collect();
    write_table(&act_p, &act_header, &acts)?;

    let init_header: Vec<String> = (0..p).map(|k| format!("state_{k}")).collect();
    let init: Vec<Vec<f64>> = dataset
        .initial_states()
        .iter()
        .map(|s| s.components().to_vec())
        .collect();
    write_table(&init_p, &init_header, &init)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let [grid_p, tr_p, act_p, init_p] = dataset_files(dir);
    let grid = read_grid(&grid_p)?;

    let mut rdr = reader(&tr_p)?;
    let header = rdr.headers().map_err(|e| csv_err(&tr_p, e))?.clone();
    if header.len() < 6 || header.len() % 2 != 0 || &header[0] != "subject_id" {
        return Err(Error::parse(&tr_p, "unexpected transitions header"));
    }
    let p = (header.len() - 4) / 2;
    let (_, actions) = read_table(&act_p)?;
    let mut transitions = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&tr_p, e))?;
        if rec.len() != header.len() {
            return Err(Error::parse(&tr_p, format!("row {}: wrong number of fields", i + 1)));
        }
        let time_index = rec[1]
            .parse::<usize>()
            .map_err(|_| Error::parse(&tr_p, format!("row {}: bad time_index '{}'", i + 1, &rec[1])))?;
        let reward = parse_f64(&tr_p, i + 1, &rec[2])?;
        let anchor = if rec[3].is_empty() {
            None
        } else {
            Some(parse_f64(&tr_p, i + 1, &rec[3])?)
        };
        let nums = (4..rec.len())
            .map(|j| parse_f64(&tr_p, i + 1, &rec[j]))
            .collect::<Result<Vec<_>>>()?;
        let action_values = actions
            .get(i)
            .ok_or_else(|| Error::parse(&act_p, format!("missing action row {}", i + 1)))?;
        if action_values.len() != grid.len() {
            return Err(Error::parse(&act_p, format!("row {}: action length differs from grid", i + 1)));
        }
        transitions.push(Transition {
            state: State::new(nums[..p].to_vec()).map_err(|e| Error::parse(&tr_p, e.to_string()))?,
            action: GridFunction::new(grid.clone(), action_values.clone())?,
            reward,
            next_state: State::new(nums[p..].to_vec()).map_err(|e| Error::parse(&tr_p, e.to_string()))?,
            subject_id: rec[0].to_string(),
            time_index,
            action_anchor: anchor,
        });
    }
    if actions.len() != transitions.len() {
        return Err(Error::parse(&act_p, "action rows do not match transition rows"));
    }
    let (_, init) = read_table(&init_p)?;
    let initial = init
        .into_iter()
        .map(State::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::parse(&init_p, e.to_string()))?;
    Dataset::new(transitions, initial, grid)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}
