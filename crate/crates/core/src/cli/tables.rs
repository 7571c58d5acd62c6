//! CSV files written by a sweep.
//!
//! `runs.csv`: `intersection,penetration,seed,vehicle_count,window_start,k,Q,V`, one row per
//! flow sample of every run that finished without a fault.
//!
//! `fits.csv`: `intersection,penetration,a,b,c,r_squared,k_crit,q_max,n_points,flag`, one row
//! per cell. Missing values are empty fields.
//!
//! `faults.csv`: `intersection,penetration,seed,vehicle_count,fault`, one row per faulted run.
//!
//! Rows are in ascending `(intersection, penetration, seed, vehicle_count, window_start)`
//! order. Floats are written in their shortest round-trip form.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::experiment::RunResult;
use crate::fdfit::{CellKey, CellSamples};
use crate::report::FitRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub intersection: String,
    pub penetration: f64,
    pub seed: u64,
    pub vehicle_count: usize,
    pub window_start: f64,
    pub k: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "V")]
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRow {
    pub intersection: String,
    pub penetration: f64,
    pub seed: u64,
    pub vehicle_count: usize,
    pub fault: String,
}

/// Sample and fault rows of results already in canonical order.
pub fn result_rows(results: &[RunResult]) -> (Vec<RunRow>, Vec<FaultRow>) {
    let mut runs = Vec::new();
    let mut faults = Vec::new();
    for r in results {
        match &r.fault {
            Some(f) => faults.push(FaultRow {
                intersection: r.intersection.clone(),
                penetration: r.penetration,
                seed: r.seed,
                vehicle_count: r.vehicle_count,
                fault: f.to_string(),
            }),
            None => runs.extend(r.samples.iter().map(|s| RunRow {
                intersection: r.intersection.clone(),
                penetration: r.penetration,
                seed: r.seed,
                vehicle_count: r.vehicle_count,
                window_start: s.window_start,
                k: s.k,
                q: s.q,
                v: s.v,
            })),
        }
    }
    (runs, faults)
}

fn run_order(a: &RunRow, b: &RunRow) -> std::cmp::Ordering {
    a.intersection
        .cmp(&b.intersection)
        .then(a.penetration.total_cmp(&b.penetration))
        .then(a.seed.cmp(&b.seed))
        .then(a.vehicle_count.cmp(&b.vehicle_count))
        .then(a.window_start.total_cmp(&b.window_start))
}

/// Pools rows into cells the same way the sweep pools run results.
pub fn cells_from_rows(runs: &[RunRow], faults: &[FaultRow]) -> Vec<CellSamples> {
    let mut runs: Vec<&RunRow> = runs.iter().collect();
    runs.sort_by(|a, b| run_order(a, b));
    let mut faults: Vec<&FaultRow> = faults.iter().collect();
    faults.sort_by(|a, b| {
        a.intersection
            .cmp(&b.intersection)
            .then(a.penetration.total_cmp(&b.penetration))
            .then(a.seed.cmp(&b.seed))
            .then(a.vehicle_count.cmp(&b.vehicle_count))
    });
    let keys: BTreeSet<CellKey> = runs
        .iter()
        .map(|r| CellKey::new(r.intersection.clone(), r.penetration))
        .chain(faults.iter().map(|f| CellKey::new(f.intersection.clone(), f.penetration)))
        .collect();
    let mut cells: Vec<CellSamples> = keys
        .into_iter()
        .map(|key| CellSamples {
            key,
            points: Vec::new(),
            faulted_runs: 0,
            fault_reason: None,
        })
        .collect();
    let find = |cells: &[CellSamples], intersection: &str, penetration: f64| {
        let key = CellKey::new(intersection, penetration);
        cells.binary_search_by(|c| c.key.cmp(&key)).expect("key collected above")
    };
    for r in runs {
        let i = find(&cells, &r.intersection, r.penetration);
        cells[i].points.push((r.k, r.q));
    }
    for f in faults {
        let i = find(&cells, &f.intersection, f.penetration);
        let cell = &mut cells[i];
        cell.faulted_runs += 1;
        if cell.fault_reason.is_none() {
            cell.fault_reason = Some(format!("seed {} n {}: {}", f.seed, f.vehicle_count, f.fault));
        }
    }
    cells
}

pub fn write_csv<W: Write, R: Serialize>(out: W, rows: &[R], header: &[&str]) -> Result<(), String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(header).map_err(|e| e.to_string())?;
    for r in rows {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

pub const RUNS_HEADER: [&str; 8] = [
    "intersection",
    "penetration",
    "seed",
    "vehicle_count",
    "window_start",
    "k",
    "Q",
    "V",
];
pub const FITS_HEADER: [&str; 10] = [
    "intersection",
    "penetration",
    "a",
    "b",
    "c",
    "r_squared",
    "k_crit",
    "q_max",
    "n_points",
    "flag",
];
pub const FAULTS_HEADER: [&str; 5] = ["intersection", "penetration", "seed", "vehicle_count", "fault"];

pub fn to_csv_string<R: Serialize>(rows: &[R], header: &[&str]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows, header).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

/// Reads rows, checking the header; errors name the 1-based line of the offending row.
pub fn read_csv<R: Read, T: DeserializeOwned>(input: R, header: &[&str]) -> Result<Vec<T>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let found = rdr.headers().map_err(|e| format!("line 1: {e}"))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(format!(
            "line 1: expected header {}, found {}",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: T = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            let msg = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            format!("line {line}: {msg}")
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn fit_rows_csv(fits: &[FitRow]) -> String {
    to_csv_string(fits, &FITS_HEADER)
}
