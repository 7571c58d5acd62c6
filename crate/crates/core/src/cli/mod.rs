//! The `mixfd` command line: `sweep` runs the experiment and writes every output file;
//! `fit` refits an existing `runs.csv` without simulating.

pub mod config;
pub mod svg;
pub mod tables;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::experiment::{run_sweep, Executor};
use crate::fdfit::{fit_cells, pool_results, CellFit, CellSamples, FitFlag};
use crate::geometry::IntersectionKind;
use crate::report::{render_markdown, FitRow};

pub use config::CliConfig;
use tables::{FaultRow, RunRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        1
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub no_plots: bool,
    pub seed_override: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitArgs {
    pub runs: PathBuf,
    /// Defaults to the directory holding `runs`.
    pub out: Option<PathBuf>,
    pub no_plots: bool,
}

/// What a command wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub fits: Vec<FitRow>,
    pub faulted_runs: usize,
}

impl Outcome {
    /// Cells whose every run faulted.
    pub fn empty_cells(&self) -> Vec<&FitRow> {
        self.fits
            .iter()
            .filter(|f| f.flag() == Some(FitFlag::NoData))
            .collect()
    }

    /// 0 on success, 2 when some cell has no unfaulted run.
    pub fn exit_code(&self) -> i32 {
        if self.empty_cells().is_empty() {
            0
        } else {
            2
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Files of a finished analysis, named relative to the output directory.
fn analysis_files(cells: &[CellSamples], fits: &[CellFit], plots: bool) -> Vec<(String, String)> {
    let rows: Vec<FitRow> = fits.iter().map(FitRow::from_cell).collect();
    let mut files = vec![
        ("fits.csv".to_string(), tables::fit_rows_csv(&rows)),
        ("report.md".to_string(), render_markdown(&rows)),
    ];
    if plots {
        let mut labels: Vec<&str> = cells.iter().map(|c| c.key.intersection.as_str()).collect();
        labels.dedup();
        for label in labels {
            let series: Vec<svg::Series> = cells
                .iter()
                .zip(fits)
                .filter(|(c, _)| c.key.intersection == label)
                .map(|(c, f)| svg::Series {
                    penetration: c.key.penetration,
                    points: c.points.clone(),
                    curve: f.fit.as_ref().map(|q| (q.a, q.b, q.c)),
                })
                .collect();
            let title = match IntersectionKind::from_label(label) {
                Some(kind) => format!("Intersection {label} ({kind})"),
                None => format!("Intersection {label}"),
            };
            files.push((format!("fd_{label}.svg"), svg::render(&title, &series)));
        }
    }
    files
}

fn write_files(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Runs the configured sweep and writes `runs.csv`, `faults.csv`, `fits.csv`, `report.md`
/// and one SVG per intersection. Nothing is written unless the configuration is valid and
/// every run completed.
pub fn cmd_sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let config = match &args.config {
        Some(path) => CliConfig::parse(&read_to_string(path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => CliConfig::default(),
    };
    let mut plan = config.plan().map_err(CliError::Config)?;
    if let Some(seeds) = &args.seed_override {
        plan.seeds = seeds.clone();
        plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let jobs = args.jobs.or(config.output.jobs).unwrap_or(0);
    let plots = !args.no_plots && config.output.emit_plots.unwrap_or(true);

    let results = run_sweep(&plan, &Executor { jobs, shuffle: None })
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (runs, faults) = tables::result_rows(&results);
    let cells = pool_results(&results);
    let fits = fit_cells(&cells);

    let mut files = vec![
        ("runs.csv".to_string(), tables::to_csv_string(&runs, &tables::RUNS_HEADER)),
        ("faults.csv".to_string(), tables::to_csv_string(&faults, &tables::FAULTS_HEADER)),
    ];
    files.extend(analysis_files(&cells, &fits, plots));
    let written = write_files(&out_dir, &files)?;
    Ok(Outcome {
        out_dir,
        files: written,
        fits: fits.iter().map(FitRow::from_cell).collect(),
        faulted_runs: faults.len(),
    })
}

/// Refits the samples of a `runs.csv`, reading `faults.csv` from the same directory when
/// present. The resulting `fits.csv` matches the one the sweep wrote byte for byte.
pub fn cmd_fit(args: &FitArgs) -> Result<Outcome, CliError> {
    let input = |path: &Path, msg: String| CliError::Input {
        path: path.to_path_buf(),
        msg,
    };
    let runs_text = read_to_string(&args.runs)?;
    let runs: Vec<RunRow> =
        tables::read_csv(runs_text.as_bytes(), &tables::RUNS_HEADER).map_err(|m| input(&args.runs, m))?;
    let dir = args
        .runs
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let faults_path = dir.join("faults.csv");
    let faults: Vec<FaultRow> = if faults_path.is_file() {
        let text = read_to_string(&faults_path)?;
        tables::read_csv(text.as_bytes(), &tables::FAULTS_HEADER).map_err(|m| input(&faults_path, m))?
    } else {
        Vec::new()
    };
    let cells = tables::cells_from_rows(&runs, &faults);
    if cells.is_empty() {
        return Err(input(&args.runs, "no cells to fit".into()));
    }
    let fits = fit_cells(&cells);
    let out_dir = args.out.clone().unwrap_or(dir);
    let files = analysis_files(&cells, &fits, !args.no_plots);
    let written = write_files(&out_dir, &files)?;
    Ok(Outcome {
        out_dir,
        files: written,
        fits: fits.iter().map(FitRow::from_cell).collect(),
        faulted_runs: faults.len(),
    })
}
