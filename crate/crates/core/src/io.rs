//! CSV datasets and their JSON sidecar.
//!
//! The data file has one row per covariate segment per process:
//! `subject_id,process,entry,exit,event,segment_start,cov1,cov2,...`.
//! Covariate columns are shared by both processes; the sidecar says which
//! columns belong to which process, names the protected column and carries
//! the restriction window. Time cells are decimal numbers or ISO dates
//! (`YYYY-MM-DD`), the latter converted to days since the sidecar epoch.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{CovariateTrajectory, Dataset, Process, ProcessObservation, RestrictionWindow, SubjectRecord};

const FIXED_COLUMNS: [&str; 6] = ["subject_id", "process", "entry", "exit", "event", "segment_start"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("line {line}: {detail}")]
    Parse { line: u64, detail: String },
    #[error("header: {0}")]
    Header(String),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("subject {subject}: {detail}")]
    Subject { subject: String, detail: String },
}

/// A time given either as a number in the data's time unit or as a date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeValue {
    Number(f64),
    Date(String),
}

impl TimeValue {
    pub fn resolve(&self, epoch: Option<NaiveDate>) -> Result<f64, String> {
        match self {
            TimeValue::Number(v) => Ok(*v),
            TimeValue::Date(s) => parse_time(s, epoch),
        }
    }
}

/// Dataset metadata stored next to the CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub protected_column: String,
    /// Promotion covariates; defaults to every covariate column.
    #[serde(default)]
    pub promotion_covariates: Option<Vec<String>>,
    #[serde(default)]
    pub retirement_covariates: Option<Vec<String>>,
    /// `[tau0, tau1]`.
    #[serde(default)]
    pub window: Option<[TimeValue; 2]>,
    /// Day zero for date-valued cells.
    #[serde(default)]
    pub epoch: Option<String>,
    #[serde(default = "default_time_unit")]
    pub time_unit: String,
}

fn default_time_unit() -> String {
    "days".into()
}

impl Sidecar {
    pub fn from_json(text: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Sidecar(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        Self::from_json(&read_text(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn epoch_date(&self) -> Result<Option<NaiveDate>, IoError> {
        self.epoch
            .as_deref()
            .map(|e| {
                NaiveDate::parse_from_str(e, "%Y-%m-%d").map_err(|err| IoError::Sidecar(format!("epoch `{e}`: {err}")))
            })
            .transpose()
    }

    pub fn restriction_window(&self) -> Result<Option<RestrictionWindow<f64>>, IoError> {
        let Some([a, b]) = &self.window else {
            return Ok(None);
        };
        let epoch = self.epoch_date()?;
        let tau0 = a.resolve(epoch).map_err(IoError::Sidecar)?;
        let tau1 = b.resolve(epoch).map_err(IoError::Sidecar)?;
        RestrictionWindow::new(tau0, tau1)
            .map(Some)
            .map_err(|e| IoError::Sidecar(e.to_string()))
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Parses a time cell: a decimal number, or an ISO date when an epoch is set.
pub fn parse_time(cell: &str, epoch: Option<NaiveDate>) -> Result<f64, String> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
        return Err(format!("time `{cell}` is not finite"));
    }
    let date = NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .map_err(|_| format!("`{cell}` is neither a number nor a YYYY-MM-DD date"))?;
    let epoch = epoch.ok_or_else(|| format!("date `{cell}` needs an epoch in the sidecar"))?;
    Ok((date - epoch).num_days() as f64)
}

struct Group {
    line: u64,
    entry: f64,
    exit: f64,
    event: bool,
    segments: Vec<(f64, Vec<f64>)>,
}

/// Parses CSV text into an unvalidated dataset.
pub fn parse_dataset(text: &str, sidecar: &Sidecar) -> Result<Dataset<f64>, IoError> {
    let epoch = sidecar.epoch_date()?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IoError::Header(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
        return Err(IoError::Header(format!("must start with {}", FIXED_COLUMNS.join(","))));
    }
    let columns = &header[FIXED_COLUMNS.len()..];
    let column_of = |name: &str| columns.iter().position(|c| c == name);
    let resolve = |names: &Option<Vec<String>>, process: Process| -> Result<(Vec<String>, Vec<usize>), IoError> {
        let names = names.clone().unwrap_or_else(|| columns.to_vec());
        let idx = names
            .iter()
            .map(|n| {
                column_of(n).ok_or_else(|| {
                    IoError::Sidecar(format!("{process} covariate `{n}` is not a column of the data file"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((names, idx))
    };
    let (promo_names, promo_idx) = resolve(&sidecar.promotion_covariates, Process::Promotion)?;
    let (retire_names, retire_idx) = resolve(&sidecar.retirement_covariates, Process::Retirement)?;
    let has_covariates = !promo_names.is_empty() || !retire_names.is_empty();
    if has_covariates && column_of(&sidecar.protected_column).is_none() {
        return Err(IoError::Sidecar(format!(
            "protected column `{}` is not a column of the data file",
            sidecar.protected_column
        )));
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<(String, Process), Group> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IoError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |detail: String| IoError::Parse { line, detail };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(err("empty subject_id".into()));
        }
        let process = match &record[1] {
            "P" => Process::Promotion,
            "R" => Process::Retirement,
            other => return Err(err(format!("process must be P or R, found `{other}`"))),
        };
        let time = |k: usize| parse_time(&record[k], epoch).map_err(|d| err(format!("{}: {d}", FIXED_COLUMNS[k])));
        let entry = time(2)?;
        let exit = time(3)?;
        let event = match &record[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("event must be 0 or 1, found `{other}`"))),
        };
        let start = time(5)?;
        let wanted = match process {
            Process::Promotion => &promo_idx,
            Process::Retirement => &retire_idx,
        };
        let values = wanted
            .iter()
            .map(|&c| {
                let cell = &record[FIXED_COLUMNS.len() + c];
                if cell.is_empty() {
                    return Err(err(format!("missing value for covariate `{}`", columns[c])));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("covariate `{}`: `{cell}` is not a finite number", columns[c])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let key = (id.clone(), process);
        match groups.get_mut(&key) {
            Some(g) => {
                if g.entry.to_bits() != entry.to_bits() || g.exit.to_bits() != exit.to_bits() || g.event != event {
                    return Err(err(format!(
                        "entry/exit/event differ from line {} for subject {id} process {}",
                        g.line,
                        process.code()
                    )));
                }
                g.segments.push((start, values));
            }
            None => {
                if !groups.contains_key(&(id.clone(), other(process))) {
                    order.push(id.clone());
                }
                groups.insert(
                    key,
                    Group {
                        line,
                        entry,
                        exit,
                        event,
                        segments: vec![(start, values)],
                    },
                );
            }
        }
    }

    let protected_p = promo_names.iter().position(|n| *n == sidecar.protected_column);
    let protected_r = retire_names.iter().position(|n| *n == sidecar.protected_column);
    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut build = |process: Process,
                         dim: usize|
         -> Result<(Option<ProcessObservation<f64>>, CovariateTrajectory<f64>), IoError> {
            match groups.remove(&(id.clone(), process)) {
                None => Ok((None, CovariateTrajectory::empty(dim))),
                Some(mut g) => {
                    g.segments.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let traj = CovariateTrajectory::new(dim, g.segments).map_err(|e| IoError::Subject {
                        subject: id.clone(),
                        detail: format!("{process} segments: {e}"),
                    })?;
                    Ok((Some(ProcessObservation::new(g.entry, g.exit, g.event)), traj))
                }
            }
        };
        let (promotion, x_traj) = build(Process::Promotion, promo_names.len())?;
        let (retirement, z_traj) = build(Process::Retirement, retire_names.len())?;
        let flag_of = |traj: &CovariateTrajectory<f64>, col: Option<usize>| {
            col.filter(|_| !traj.is_empty()).map(|c| traj.segment(0).1[c] != 0.0)
        };
        let protected_flag = flag_of(&x_traj, protected_p)
            .or_else(|| flag_of(&z_traj, protected_r))
            .unwrap_or(false);
        subjects.push(SubjectRecord {
            id,
            promotion,
            retirement,
            x_traj,
            z_traj,
            protected_flag,
        });
    }
    Ok(Dataset {
        subjects,
        promo_covariate_names: promo_names,
        retire_covariate_names: retire_names,
        protected_column: sidecar.protected_column.clone(),
    })
}

fn other(p: Process) -> Process {
    match p {
        Process::Promotion => Process::Retirement,
        Process::Retirement => Process::Promotion,
    }
}

/// Reads and parses a dataset and its sidecar (without validating).
pub fn read_dataset(data: &Path, sidecar: &Path) -> Result<(Dataset<f64>, Sidecar), IoError> {
    let sidecar = Sidecar::read(sidecar)?;
    let dataset = parse_dataset(&read_text(data)?, &sidecar)?;
    Ok((dataset, sidecar))
}

/// The covariate columns of a written file: promotion names, then the
/// retirement names not already present.
pub fn column_union(dataset: &Dataset<f64>) -> Vec<String> {
    let mut cols = dataset.promo_covariate_names.clone();
    for n in &dataset.retire_covariate_names {
        if !cols.contains(n) {
            cols.push(n.clone());
        }
    }
    cols
}

/// Serializes `dataset` as CSV. Numbers use the shortest representation
/// that parses back to the same value.
pub fn write_dataset(dataset: &Dataset<f64>) -> String {
    let cols = column_union(dataset);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(cols.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for s in &dataset.subjects {
        for process in [Process::Promotion, Process::Retirement] {
            let Some(obs) = s.observation(process) else {
                continue;
            };
            let names = dataset.covariate_names(process);
            for (start, values) in s.trajectory(process).segments() {
                let mut row = vec![
                    s.id.clone(),
                    process.code().to_string(),
                    obs.entry.to_string(),
                    obs.exit.to_string(),
                    if obs.event { "1" } else { "0" }.to_string(),
                    start.to_string(),
                ];
                for c in &cols {
                    row.push(
                        names
                            .iter()
                            .position(|n| n == c)
                            .map_or(String::new(), |j| values[j].to_string()),
                    );
                }
                w.write_record(&row).expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

/// A sidecar describing `dataset` exactly.
pub fn sidecar_for(dataset: &Dataset<f64>, window: Option<RestrictionWindow<f64>>, epoch: Option<String>) -> Sidecar {
    Sidecar {
        protected_column: dataset.protected_column.clone(),
        promotion_covariates: Some(dataset.promo_covariate_names.clone()),
        retirement_covariates: Some(dataset.retire_covariate_names.clone()),
        window: window.map(|w| [TimeValue::Number(w.tau0), TimeValue::Number(w.tau1)]),
        epoch,
        time_unit: default_time_unit(),
    }
}
