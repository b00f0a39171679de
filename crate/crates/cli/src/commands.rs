//! One function per subcommand.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use semicomp::cox::{build_view, fit as fit_cox};
use semicomp::data::{
    collect_violations, validate_dataset, Process, ValidationError, ValidationErrors, ValidationRule,
};
use semicomp::io::{parse_time, read_dataset, sidecar_for, write_dataset, Sidecar};
use semicomp::prediction::{StateProbabilities, TargetContext};
use semicomp::simulation::{case_study_dataset, run_study, CaseStudyConfig, SimulationConfig};
use semicomp::variance::predict_with_se;
use semicomp::{CounterfactualPolicy, CountingProcessView, CoxFit, Dataset, RestrictionWindow};

use crate::manifest::{sha256_hex, RunManifest};
use crate::model::ModelFile;
use crate::schedule::{CompensationSchedule, CurvePoint};
use crate::{decimal, read_file, read_text, CliError, DAYS_PER_MONTH};

pub const MODEL_FILE: &str = "model.json";
pub const MEANS_FILE: &str = "means.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const DAMAGES_FILE: &str = "damages.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const EXAMPLE_DATA: &str = "officers.csv";
pub const EXAMPLE_SIDECAR: &str = "officers.json";

/// The bundled synthetic case-study dataset and its sidecar.
pub const BUNDLED_DATA: &str = include_str!("../data/officers.csv");
pub const BUNDLED_SIDECAR: &str = include_str!("../data/officers.json");

/// What a command did, for the terminal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub warnings: Vec<String>,
}

fn load_dataset(data: &Path, sidecar: &Path) -> Result<(Dataset, Sidecar), CliError> {
    let (raw, sidecar) = read_dataset(data, sidecar)?;
    Ok((validate_dataset(raw)?, sidecar))
}

/// Like `load_dataset`, but a protected column absent from the covariates is
/// allowed: fitting does not need it.
fn load_for_fit(data: &Path, sidecar: &Path) -> Result<Dataset, CliError> {
    let (raw, _) = read_dataset(data, sidecar)?;
    let violations: Vec<ValidationError> = collect_violations(&raw)
        .into_iter()
        .filter(|v| v.rule != ValidationRule::UnknownProtectedColumn)
        .collect();
    if violations.is_empty() {
        Ok(raw)
    } else {
        Err(ValidationErrors(violations).into())
    }
}

fn fit_process(dataset: &Dataset, process: Process) -> Result<(CountingProcessView, CoxFit), CliError> {
    let wrap = |source| CliError::Fit { process, source };
    let view = build_view(dataset, process).map_err(wrap)?;
    let fit = fit_cox(&view, &vec![0.0; view.dim()]).map_err(wrap)?;
    Ok((view, fit))
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, Serialize)]
pub struct ValidateOptions {
    pub data: PathBuf,
    pub sidecar: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub subjects: usize,
    pub promotion_events: usize,
    pub retirement_events: usize,
    pub violations: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} subjects, {} promotion events, {} retirement events",
            self.subjects, self.promotion_events, self.retirement_events
        )?;
        if self.is_valid() {
            write!(f, "\nvalid")
        } else {
            write!(f, "\n{} violation(s):", self.violations.len())?;
            for v in &self.violations {
                write!(f, "\n  {v}")?;
            }
            Ok(())
        }
    }
}

/// Parse errors are returned as `Err`; invariant violations are listed in
/// the report.
pub fn validate(opts: &ValidateOptions) -> Result<ValidationReport, CliError> {
    let (ds, _) = read_dataset(&opts.data, &opts.sidecar)?;
    Ok(ValidationReport {
        subjects: ds.len(),
        promotion_events: ds.event_count(Process::Promotion),
        retirement_events: ds.event_count(Process::Retirement),
        violations: collect_violations(&ds),
    })
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Serialize)]
pub struct FitOptions {
    pub data: PathBuf,
    pub sidecar: PathBuf,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn fit(opts: &FitOptions) -> Result<Outcome, CliError> {
    let mut manifest = RunManifest::new("fit", opts, None);
    let data_digest = manifest.add_input(&opts.data)?;
    manifest.add_input(&opts.sidecar)?;
    let ds = load_for_fit(&opts.data, &opts.sidecar)?;
    let (_, fit_p) = fit_process(&ds, Process::Promotion)?;
    let (_, fit_r) = fit_process(&ds, Process::Retirement)?;
    let model = ModelFile::new(&ds.protected_column, data_digest, &fit_p, &fit_r);
    manifest.write_output(&opts.out_dir, MODEL_FILE, model.to_json().as_bytes())?;
    manifest.write(&opts.out_dir)?;
    Ok(Outcome {
        summary: coefficient_table(&model),
        warnings: Vec::new(),
    })
}

fn coefficient_table(model: &ModelFile) -> String {
    let mut out = String::new();
    for pm in [&model.promotion, &model.retirement] {
        out.push_str(&format!(
            "{} ({} subjects, {} events, {} baseline jumps)\n",
            pm.process,
            pm.sample_size,
            pm.events,
            pm.baseline_jumps.len()
        ));
        out.push_str(&format!(
            "  {:<16} {:>10} {:>10} {:>10} {:>10}\n",
            "covariate", "estimate", "se", "hr", "p"
        ));
        for c in &pm.coefficients {
            let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "  {:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
                c.name,
                num(&c.estimate),
                num(&c.std_error),
                num(&c.hazard_ratio),
                num(&c.p_value)
            ));
        }
    }
    out
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, Serialize)]
pub struct PredictOptions {
    pub data: PathBuf,
    pub sidecar: PathBuf,
    /// Fitted model; the data are refitted when absent.
    pub model: Option<PathBuf>,
    /// `tau0,tau1` as numbers or dates; defaults to the sidecar window.
    pub window: Option<String>,
    /// `column=value` assignments; empty zeroes the protected column and
    /// `none` keeps the observed covariates.
    pub policy: Vec<String>,
    /// Restrict output to these subject ids.
    pub subjects: Vec<String>,
    /// Report durations in months instead of days.
    pub months: bool,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn parse_window(spec: &str, sidecar: &Sidecar) -> Result<RestrictionWindow, CliError> {
    let epoch = sidecar.epoch_date()?;
    let parts: Vec<&str> = spec.split(',').collect();
    let [a, b] = parts.as_slice() else {
        return Err(CliError::Config(format!("window `{spec}` is not `tau0,tau1`")));
    };
    let tau0 = parse_time(a, epoch).map_err(CliError::Config)?;
    let tau1 = parse_time(b, epoch).map_err(CliError::Config)?;
    RestrictionWindow::new(tau0, tau1).map_err(|e| CliError::Config(e.to_string()))
}

pub fn parse_policy(specs: &[String], protected_column: &str) -> Result<CounterfactualPolicy, CliError> {
    if specs.is_empty() {
        return Ok(CounterfactualPolicy::zero_protected(protected_column));
    }
    if specs.len() == 1 && specs[0] == "none" {
        return Ok(CounterfactualPolicy::identity());
    }
    let mut policy = CounterfactualPolicy::identity();
    for spec in specs {
        let (column, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("policy `{spec}` is not `column=value`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("policy `{spec}`: `{value}` is not a number")))?;
        policy = policy.and(column.trim(), value);
    }
    Ok(policy)
}

fn model_fit(
    model: &ModelFile,
    dataset: &Dataset,
    process: Process,
) -> Result<(CountingProcessView, CoxFit), CliError> {
    let pm = model.process(process);
    let names = dataset.covariate_names(process);
    if pm.covariate_names() != names {
        return Err(CliError::Model(format!(
            "{process} covariates {:?} do not match the data's {:?}",
            pm.covariate_names(),
            names
        )));
    }
    let wrap = |source| CliError::Fit { process, source };
    let view = build_view(dataset, process).map_err(wrap)?;
    let fit = CoxFit::evaluate_at(&view, &pm.estimates()?).map_err(wrap)?;
    Ok((view, fit))
}

struct Prediction {
    id: String,
    start: f64,
    end: f64,
    values: [f64; 3],
    std_errors: [f64; 3],
    curve: Vec<StateProbabilities<f64>>,
}

pub fn predict(opts: &PredictOptions) -> Result<Outcome, CliError> {
    let mut manifest = RunManifest::new("predict", opts, None);
    let data_digest = manifest.add_input(&opts.data)?;
    manifest.add_input(&opts.sidecar)?;
    let (ds, sidecar) = load_dataset(&opts.data, &opts.sidecar)?;
    let mut warnings = Vec::new();

    let ((vp, fp), (vr, fr)) = match &opts.model {
        Some(path) => {
            manifest.add_input(path)?;
            let model = ModelFile::from_json(&read_text(path)?)?;
            if model.data_sha256 != data_digest {
                warnings.push(format!(
                    "model was fitted to different data (sha256 {}); baselines and standard errors use {}",
                    model.data_sha256,
                    opts.data.display()
                ));
            }
            (
                model_fit(&model, &ds, Process::Promotion)?,
                model_fit(&model, &ds, Process::Retirement)?,
            )
        }
        None => (
            fit_process(&ds, Process::Promotion)?,
            fit_process(&ds, Process::Retirement)?,
        ),
    };
    for f in [&fp, &fr] {
        if !f.converged {
            warnings.push(format!(
                "{} coefficients are not at a maximum of the likelihood for these data",
                f.process
            ));
        }
    }

    let window = match &opts.window {
        Some(spec) => parse_window(spec, &sidecar)?,
        None => sidecar
            .restriction_window()?
            .ok_or_else(|| CliError::Config("no --window given and the sidecar has no window".into()))?,
    };
    let policy = parse_policy(&opts.policy, &ds.protected_column)?;
    let (scale, unit) = if opts.months {
        if sidecar.time_unit != "days" {
            return Err(CliError::Config(format!(
                "--months needs times in days, the sidecar says `{}`",
                sidecar.time_unit
            )));
        }
        (DAYS_PER_MONTH, "months")
    } else {
        (1.0, sidecar.time_unit.as_str())
    };

    let wanted: HashSet<&str> = opts.subjects.iter().map(String::as_str).collect();
    for id in &wanted {
        if ds.subject(id).is_none() {
            return Err(CliError::Config(format!("unknown subject `{id}`")));
        }
    }
    let mut targets = Vec::new();
    for s in &ds.subjects {
        if !wanted.is_empty() && !wanted.contains(s.id.as_str()) {
            continue;
        }
        match s.promotion {
            None => warnings.push(format!("subject {} skipped: no promotion record", s.id)),
            Some(p) if p.entry >= window.tau1 => warnings.push(format!(
                "subject {} skipped: enters at {} after the window end {}",
                s.id, p.entry, window.tau1
            )),
            Some(_) => targets.push(s),
        }
    }

    let ids: Vec<String> = ds.subjects.iter().map(|s| s.id.clone()).collect();
    let predictions = targets
        .par_iter()
        .map(|s| {
            let wrap = |detail: String| CliError::Prediction {
                subject: s.id.clone(),
                detail,
            };
            let ctx = TargetContext::new(&fp, &fr, s, &policy, &ds, window).map_err(|e| wrap(e.to_string()))?;
            let d = predict_with_se(&ctx, &fp, &vp, &fr, &vr, ids.clone()).map_err(|e| wrap(e.to_string()))?;
            let se = |e: &semicomp::RestrictedMeanEstimate| e.std_error.unwrap_or(f64::NAN);
            Ok(Prediction {
                id: s.id.clone(),
                start: ctx.start,
                end: window.tau1,
                values: [d.lt.value, d.cap.value, d.rt.value],
                std_errors: [se(&d.lt), se(&d.cap), se(&d.rt)],
                curve: ctx.state_probability_curve(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut means = csv::Writer::from_writer(Vec::new());
    means
        .write_record([
            "subject_id",
            "window_start",
            "window_end",
            "unit",
            "E_lt",
            "se_lt",
            "E_cap",
            "se_cap",
            "E_rt",
            "se_rt",
        ])
        .expect("in-memory write");
    let mut curves = csv::Writer::from_writer(Vec::new());
    curves
        .write_record(["subject_id", "time", "p_lt", "p_cap", "p_rt"])
        .expect("in-memory write");
    for p in &predictions {
        let mut row = vec![p.id.clone(), decimal(p.start), decimal(p.end), unit.to_string()];
        for k in 0..3 {
            row.push(decimal(p.values[k] / scale));
            row.push(decimal(p.std_errors[k] / scale));
        }
        means.write_record(&row).expect("in-memory write");
        for q in &p.curve {
            curves
                .write_record([
                    p.id.clone(),
                    decimal(q.time),
                    decimal(q.p_lt),
                    decimal(q.p_cap),
                    decimal(q.p_rt),
                ])
                .expect("in-memory write");
        }
    }
    let means = means.into_inner().expect("flush");
    let curves = curves.into_inner().expect("flush");
    manifest.write_output(&opts.out_dir, MEANS_FILE, &means)?;
    manifest.write_output(&opts.out_dir, CURVES_FILE, &curves)?;
    manifest.write(&opts.out_dir)?;
    Ok(Outcome {
        summary: format!(
            "{} subject(s) predicted over [{}, {}] in {unit}",
            predictions.len(),
            window.tau0,
            window.tau1
        ),
        warnings,
    })
}

// ---------------------------------------------------------------- compensate

/// One row of `means.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeansRow {
    pub subject_id: String,
    pub window_start: f64,
    pub window_end: f64,
    pub unit: String,
    #[serde(rename = "E_lt")]
    pub e_lt: f64,
    pub se_lt: f64,
    #[serde(rename = "E_cap")]
    pub e_cap: f64,
    pub se_cap: f64,
    #[serde(rename = "E_rt")]
    pub e_rt: f64,
    pub se_rt: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct CurveRow {
    subject_id: String,
    time: f64,
    p_lt: f64,
    p_cap: f64,
    p_rt: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct AmountRow {
    subject_id: String,
    amount: f64,
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>, CliError> {
    let bytes = read_file(path)?;
    let mut reader = csv::Reader::from_reader(bytes.as_slice());
    reader
        .deserialize()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| CliError::Table {
                path: path.to_path_buf(),
                line: e.position().map_or(k as u64 + 2, |p| p.line()),
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn read_means(path: &Path) -> Result<Vec<MeansRow>, CliError> {
    read_rows(path)
}

/// Per-subject amounts (`subject_id,amount`), rejecting duplicates.
fn read_amounts(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    let mut out = BTreeMap::new();
    for (k, row) in read_rows::<AmountRow>(path)?.into_iter().enumerate() {
        if out.insert(row.subject_id.clone(), row.amount).is_some() {
            return Err(CliError::Table {
                path: path.to_path_buf(),
                line: k as u64 + 2,
                detail: format!("duplicate subject {}", row.subject_id),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompensateOptions {
    /// `means.csv` from `predict`.
    pub means: PathBuf,
    /// `curves.csv` from `predict`; needed for a piecewise schedule.
    pub curves: Option<PathBuf>,
    pub schedule: PathBuf,
    /// Actual earnings, `subject_id,amount`; zero when absent.
    pub actual: Option<PathBuf>,
    /// Outside estimates to set beside the damages, `subject_id,amount`.
    pub compare: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn compensate(opts: &CompensateOptions) -> Result<Outcome, CliError> {
    let mut manifest = RunManifest::new("compensate", opts, None);
    manifest.add_input(&opts.means)?;
    manifest.add_input(&opts.schedule)?;
    let means = read_means(&opts.means)?;
    let schedule = CompensationSchedule::from_json(&read_text(&opts.schedule)?)?;
    let resolved = schedule.resolve()?;

    let curves = match (&opts.curves, schedule.constant()) {
        (Some(path), None) => {
            manifest.add_input(path)?;
            let mut by_subject: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
            for r in read_rows::<CurveRow>(path)? {
                by_subject.entry(r.subject_id).or_default().push(CurvePoint {
                    time: r.time,
                    p_lt: r.p_lt,
                    p_cap: r.p_cap,
                    p_rt: r.p_rt,
                });
            }
            Some(by_subject)
        }
        (None, None) => return Err(CliError::Schedule("a piecewise schedule needs --curves".into())),
        (_, Some(_)) => None,
    };
    let mut amounts = |path: &Option<PathBuf>| -> Result<Option<BTreeMap<String, f64>>, CliError> {
        path.as_ref()
            .map(|p| {
                manifest.add_input(p)?;
                read_amounts(p)
            })
            .transpose()
    };
    let actual = amounts(&opts.actual)?;
    let compare = amounts(&opts.compare)?;

    let mut header = vec!["subject_id", "unit", "method", "gross", "actual", "damages"];
    if compare.is_some() {
        header.extend(["comparison", "difference"]);
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(&header).expect("in-memory write");
    let mut warnings = Vec::new();
    for m in &means {
        let (method, gross) = match (schedule.constant(), &curves) {
            (Some(rates), _) => ("constant", rates.weigh(m.e_lt, m.e_cap, m.e_rt)),
            (None, Some(curves)) => {
                let curve = curves.get(&m.subject_id).ok_or_else(|| CliError::Prediction {
                    subject: m.subject_id.clone(),
                    detail: "no probability curve".into(),
                })?;
                let integral = resolved.integrate(curve).map_err(|e| CliError::Prediction {
                    subject: m.subject_id.clone(),
                    detail: e.to_string(),
                })?;
                let scale = if m.unit == "months" { DAYS_PER_MONTH } else { 1.0 };
                ("piecewise", integral / scale)
            }
            (None, None) => unreachable!("checked above"),
        };
        let paid = match &actual {
            Some(map) => *map.get(&m.subject_id).ok_or_else(|| CliError::Prediction {
                subject: m.subject_id.clone(),
                detail: "no actual earnings row".into(),
            })?,
            None => 0.0,
        };
        let damages = gross - paid;
        let mut row = vec![
            m.subject_id.clone(),
            m.unit.clone(),
            method.to_string(),
            decimal(gross),
            decimal(paid),
            decimal(damages),
        ];
        if let Some(map) = &compare {
            match map.get(&m.subject_id) {
                Some(&c) => row.extend([decimal(c), decimal(damages - c)]),
                None => {
                    warnings.push(format!("subject {}: no comparison estimate", m.subject_id));
                    row.extend(["NA".to_string(), "NA".to_string()]);
                }
            }
        }
        out.write_record(&row).expect("in-memory write");
    }
    manifest.write_output(&opts.out_dir, DAMAGES_FILE, &out.into_inner().expect("flush"))?;
    manifest.write(&opts.out_dir)?;
    Ok(Outcome {
        summary: format!("damages for {} subject(s)", means.len()),
        warnings,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOptions {
    /// Study configuration JSON; the frailty-free reference design when absent.
    pub config: Option<PathBuf>,
    pub replicates: Option<usize>,
    pub n: Option<usize>,
    pub frailty_variance: Option<f64>,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

pub fn resolve_simulation_config(opts: &SimulateOptions) -> Result<SimulationConfig, CliError> {
    let mut config = match &opts.config {
        Some(path) => {
            serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SimulationConfig::table1_middle(),
    };
    if let Some(r) = opts.replicates {
        config.replicates = r;
    }
    let mut tags = Vec::new();
    if let Some(n) = opts.n {
        config.n = n;
        tags.push(format!("n={n}"));
    }
    if let Some(v) = opts.frailty_variance {
        config.frailty_variance = v;
        tags.push(format!("v={v}"));
    }
    if let (Some(label), false) = (&mut config.label, tags.is_empty()) {
        label.push(' ');
        label.push_str(&tags.join(" "));
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn simulate(opts: &SimulateOptions) -> Result<Outcome, CliError> {
    let config = resolve_simulation_config(opts)?;
    let mut manifest = RunManifest::new("simulate", &config, Some(config.seed));
    if let Some(path) = &opts.config {
        manifest.add_input(path)?;
    }
    let report = run_study(&config)?;
    let mut config_json = serde_json::to_string_pretty(&config).expect("config serializes");
    config_json.push('\n');
    let csv = report.to_csv();
    manifest.write_output(&opts.out_dir, CONFIG_FILE, config_json.as_bytes())?;
    manifest.write_output(&opts.out_dir, REPORT_JSON, report.to_json().as_bytes())?;
    manifest.write_output(&opts.out_dir, REPORT_CSV, csv.as_bytes())?;
    manifest.write(&opts.out_dir)?;
    let warnings = report
        .excluded
        .iter()
        .map(|e| format!("replicate {} excluded: {}", e.replicate, e.reason))
        .collect();
    Ok(Outcome {
        summary: format!(
            "{} replicate(s); censoring {:.1}% promotion, {:.1}% retirement\n{csv}",
            report.replicates_used,
            100.0 * report.censoring[0],
            100.0 * report.censoring[1]
        ),
        warnings,
    })
}

// ---------------------------------------------------------------- example

/// The bundled dataset as regenerated from the case-study generator.
pub fn generate_example() -> Result<(String, String), CliError> {
    let config = CaseStudyConfig::default();
    let cs = case_study_dataset(&config)?;
    let sidecar = sidecar_for(&cs.dataset, Some(cs.window), Some(config.epoch.clone()));
    let mut json = sidecar.to_json();
    json.push('\n');
    Ok((write_dataset(&cs.dataset), json))
}

/// Writes the bundled dataset and sidecar into `out_dir`.
pub fn example(out_dir: &Path) -> Result<Outcome, CliError> {
    crate::write_file(&out_dir.join(EXAMPLE_DATA), BUNDLED_DATA.as_bytes())?;
    crate::write_file(&out_dir.join(EXAMPLE_SIDECAR), BUNDLED_SIDECAR.as_bytes())?;
    Ok(Outcome {
        summary: format!(
            "wrote {} and {} (sha256 {})",
            out_dir.join(EXAMPLE_DATA).display(),
            out_dir.join(EXAMPLE_SIDECAR).display(),
            sha256_hex(BUNDLED_DATA.as_bytes())
        ),
        warnings: Vec::new(),
    })
}
