//! Two-process (promotion, retirement) observations in calendar time.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Which of the two modelled processes an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Process {
    /// Lower to higher rank, entered on reaching the lower rank.
    Promotion,
    /// Retirement, entered on becoming eligible.
    Retirement,
}

impl Process {
    pub fn code(self) -> &'static str {
        match self {
            Process::Promotion => "P",
            Process::Retirement => "R",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Process::Promotion => "promotion",
            Process::Retirement => "retirement",
        }
    }
}

impl fmt::Display for Process {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("segment start times must be strictly increasing (segment {index})")]
    UnorderedSegments { index: usize },
    #[error("segment {index} has {found} covariates, expected {expected}")]
    RaggedSegment {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("segment {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("time {t} precedes the first covariate segment (starts at {first})")]
    OutOfDomain { t: f64, first: f64 },
    #[error("covariate trajectory is empty")]
    EmptyTrajectory,
    #[error("restriction window requires tau0 < tau1 (got {tau0}, {tau1})")]
    InvalidWindow { tau0: f64, tau1: f64 },
}

/// Right-continuous piecewise-constant covariate path.
///
/// Segment `k` is valid on `[start_k, start_{k+1})`; the last segment extends
/// indefinitely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTrajectory<T> {
    dim: usize,
    starts: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> CovariateTrajectory<T> {
    pub fn new(dim: usize, segments: Vec<(T, Vec<T>)>) -> Result<Self, DataError> {
        let mut starts = Vec::with_capacity(segments.len());
        let mut values = Vec::with_capacity(segments.len() * dim);
        for (index, (start, vals)) in segments.into_iter().enumerate() {
            if !start.is_finite() {
                return Err(DataError::NonFinite { index });
            }
            if let Some(&prev) = starts.last() {
                if start <= prev {
                    return Err(DataError::UnorderedSegments { index });
                }
            }
            if vals.len() != dim {
                return Err(DataError::RaggedSegment {
                    index,
                    expected: dim,
                    found: vals.len(),
                });
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite { index });
            }
            starts.push(start);
            values.extend(vals);
        }
        Ok(Self { dim, starts, values })
    }

    /// A trajectory with no segments, used when a subject never enters a process.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            starts: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn constant(start: T, values: Vec<T>) -> Self {
        let dim = values.len();
        Self {
            dim,
            starts: vec![start],
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn first_start(&self) -> Option<T> {
        self.starts.first().copied()
    }

    pub fn segment_starts(&self) -> &[T] {
        &self.starts
    }

    pub fn segment(&self, k: usize) -> (T, &[T]) {
        (self.starts[k], &self.values[k * self.dim..(k + 1) * self.dim])
    }

    pub fn segments(&self) -> impl Iterator<Item = (T, &[T])> + '_ {
        (0..self.len()).map(move |k| self.segment(k))
    }

    /// Index of the segment in force at `t`.
    pub fn segment_index(&self, t: T) -> Result<usize, DataError> {
        let pos = self.starts.partition_point(|&s| s <= t);
        if pos == 0 {
            return Err(match self.first_start() {
                Some(first) => DataError::OutOfDomain {
                    t: t.to_f64_lossy(),
                    first: first.to_f64_lossy(),
                },
                None => DataError::EmptyTrajectory,
            });
        }
        Ok(pos - 1)
    }

    /// Covariate vector in force at `t`.
    pub fn evaluate(&self, t: T) -> Result<&[T], DataError> {
        let k = self.segment_index(t)?;
        Ok(self.segment(k).1)
    }

    /// True when every time in `[from, ∞)` can be evaluated.
    pub fn covers_from(&self, from: T) -> bool {
        self.first_start().is_some_and(|s| s <= from)
    }

    /// Copy with column `column` replaced by `value` in every segment.
    pub fn with_column(&self, column: usize, value: T) -> Self {
        assert!(column < self.dim);
        let mut out = self.clone();
        for k in 0..out.len() {
            out.values[k * self.dim + column] = value;
        }
        out
    }

    /// Copy with segment `k` split at `at` (same values on both sides).
    pub fn split_segment(&self, k: usize, at: T) -> Self {
        let (start, vals) = self.segment(k);
        assert!(at > start);
        if let Some(&next) = self.starts.get(k + 1) {
            assert!(at < next);
        }
        let mut out = self.clone();
        out.starts.insert(k + 1, at);
        let vals = vals.to_vec();
        let pos = (k + 1) * self.dim;
        out.values.splice(pos..pos, vals);
        out
    }

    pub fn cast<U: Scalar>(&self) -> CovariateTrajectory<U> {
        CovariateTrajectory {
            dim: self.dim,
            starts: self.starts.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            values: self.values.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// Entry, exit and event indicator of one process for one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessObservation<T> {
    pub entry: T,
    pub exit: T,
    pub event: bool,
}

impl<T: Scalar> ProcessObservation<T> {
    pub fn new(entry: T, exit: T, event: bool) -> Self {
        Self { entry, exit, event }
    }

    /// `Y(t)`: at risk on the closed interval `[entry, exit]`.
    pub fn at_risk(&self, t: T) -> bool {
        self.entry <= t && t <= self.exit
    }

    /// `N(t)`: one from the event time onward, if an event was observed.
    pub fn counting(&self, t: T) -> u8 {
        u8::from(self.event && self.exit <= t)
    }

    fn cast<U: Scalar>(&self) -> ProcessObservation<U> {
        ProcessObservation {
            entry: U::lit(self.entry.to_f64_lossy()),
            exit: U::lit(self.exit.to_f64_lossy()),
            event: self.event,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord<T> {
    pub id: String,
    pub promotion: Option<ProcessObservation<T>>,
    pub retirement: Option<ProcessObservation<T>>,
    /// Promotion-process covariates.
    pub x_traj: CovariateTrajectory<T>,
    /// Retirement-process covariates.
    pub z_traj: CovariateTrajectory<T>,
    pub protected_flag: bool,
}

impl<T: Scalar> SubjectRecord<T> {
    pub fn observation(&self, process: Process) -> Option<&ProcessObservation<T>> {
        match process {
            Process::Promotion => self.promotion.as_ref(),
            Process::Retirement => self.retirement.as_ref(),
        }
    }

    pub fn trajectory(&self, process: Process) -> &CovariateTrajectory<T> {
        match process {
            Process::Promotion => &self.x_traj,
            Process::Retirement => &self.z_traj,
        }
    }

    pub fn cast<U: Scalar>(&self) -> SubjectRecord<U> {
        SubjectRecord {
            id: self.id.clone(),
            promotion: self.promotion.as_ref().map(ProcessObservation::cast),
            retirement: self.retirement.as_ref().map(ProcessObservation::cast),
            x_traj: self.x_traj.cast(),
            z_traj: self.z_traj.cast(),
            protected_flag: self.protected_flag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub subjects: Vec<SubjectRecord<T>>,
    pub promo_covariate_names: Vec<String>,
    pub retire_covariate_names: Vec<String>,
    pub protected_column: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn covariate_names(&self, process: Process) -> &[String] {
        match process {
            Process::Promotion => &self.promo_covariate_names,
            Process::Retirement => &self.retire_covariate_names,
        }
    }

    pub fn column_index(&self, process: Process, name: &str) -> Option<usize> {
        self.covariate_names(process).iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord<T>> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn event_count(&self, process: Process) -> usize {
        self.subjects
            .iter()
            .filter_map(|s| s.observation(process))
            .filter(|o| o.event)
            .count()
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            subjects: self.subjects.iter().map(SubjectRecord::cast).collect(),
            promo_covariate_names: self.promo_covariate_names.clone(),
            retire_covariate_names: self.retire_covariate_names.clone(),
            protected_column: self.protected_column.clone(),
        }
    }
}

/// `[tau0, tau1]`, the calendar interval over which durations are restricted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionWindow<T> {
    pub tau0: T,
    pub tau1: T,
}

impl<T: Scalar> RestrictionWindow<T> {
    pub fn new(tau0: T, tau1: T) -> Result<Self, DataError> {
        if !(tau0 < tau1) || !tau0.is_finite() || !tau1.is_finite() {
            return Err(DataError::InvalidWindow {
                tau0: tau0.to_f64_lossy(),
                tau1: tau1.to_f64_lossy(),
            });
        }
        Ok(Self { tau0, tau1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationRule {
    ObservationOrder,
    TrajectoryCoverage,
    CovariateDimension,
    NonFiniteValue,
    PromotionAfterRetirement,
    ProtectedFlag,
    DuplicateId,
    UnknownProtectedColumn,
    NoEvents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationError {
    /// `None` for dataset-level violations.
    pub subject_id: Option<String>,
    pub rule: ValidationRule,
    pub detail: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject_id {
            Some(id) => write!(f, "subject {id}: {:?}: {}", self.rule, self.detail),
            None => write!(f, "dataset: {:?}: {}", self.rule, self.detail),
        }
    }
}

/// Every violation found in a dataset.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ValidationErrors(pub Vec<ValidationError>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} validation error(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

/// Checks every dataset invariant, returning the dataset untouched if all hold.
pub fn validate_dataset<T: Scalar>(raw: Dataset<T>) -> Result<Dataset<T>, ValidationErrors> {
    let errors = collect_violations(&raw);
    if errors.is_empty() {
        Ok(raw)
    } else {
        Err(ValidationErrors(errors))
    }
}

pub fn collect_violations<T: Scalar>(ds: &Dataset<T>) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let dataset_error = |rule, detail: String| ValidationError {
        subject_id: None,
        rule,
        detail,
    };

    let protected_idx = [Process::Promotion, Process::Retirement].map(|p| {
        let idx = ds.column_index(p, &ds.protected_column);
        if idx.is_none() {
            errors.push(dataset_error(
                ValidationRule::UnknownProtectedColumn,
                format!(
                    "protected column `{}` missing from {} covariates",
                    ds.protected_column, p
                ),
            ));
        }
        idx
    });

    let mut seen = HashSet::new();
    for s in &ds.subjects {
        let mut push = |rule, detail: String| {
            errors.push(ValidationError {
                subject_id: Some(s.id.clone()),
                rule,
                detail,
            })
        };
        if !seen.insert(s.id.as_str()) {
            push(ValidationRule::DuplicateId, "subject id appears twice".into());
        }
        for (k, process) in [Process::Promotion, Process::Retirement].into_iter().enumerate() {
            let traj = s.trajectory(process);
            let names = ds.covariate_names(process);
            if traj.dim() != names.len() {
                push(
                    ValidationRule::CovariateDimension,
                    format!(
                        "{process} trajectory has {} covariates, expected {}",
                        traj.dim(),
                        names.len()
                    ),
                );
            }
            if traj
                .segments()
                .any(|(t, v)| !t.is_finite() || v.iter().any(|x| !x.is_finite()))
            {
                push(
                    ValidationRule::NonFiniteValue,
                    format!("{process} trajectory has a missing or non-finite value"),
                );
            }
            if let (Some(col), true) = (protected_idx[k], traj.dim() == names.len()) {
                let expect = if s.protected_flag { T::one() } else { T::zero() };
                if traj.segments().any(|(_, v)| v[col] != expect) {
                    push(
                        ValidationRule::ProtectedFlag,
                        format!(
                            "{process} column `{}` disagrees with protected flag {}",
                            ds.protected_column, s.protected_flag
                        ),
                    );
                }
            }
            let Some(obs) = s.observation(process) else {
                continue;
            };
            if !obs.entry.is_finite() || !obs.exit.is_finite() {
                push(
                    ValidationRule::NonFiniteValue,
                    format!("{process} entry/exit not finite"),
                );
            } else if obs.entry > obs.exit {
                push(
                    ValidationRule::ObservationOrder,
                    format!("{process} entry {} after exit {}", obs.entry, obs.exit),
                );
            }
            if !traj.covers_from(obs.entry) {
                push(
                    ValidationRule::TrajectoryCoverage,
                    format!("{process} covariates do not cover entry time {}", obs.entry),
                );
            }
        }
        if let (Some(p), Some(r)) = (&s.promotion, &s.retirement) {
            if r.event && p.exit > r.exit {
                push(
                    ValidationRule::PromotionAfterRetirement,
                    format!("promotion exit {} after retirement at {}", p.exit, r.exit),
                );
            }
        }
    }

    for process in [Process::Promotion, Process::Retirement] {
        if ds.event_count(process) == 0 {
            errors.push(dataset_error(
                ValidationRule::NoEvents,
                format!("no events in {process} process"),
            ));
        }
    }
    errors
}
