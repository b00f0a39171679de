//! Synthetic personnel data shaped like a promotion/retirement case study.
//!
//! Lieutenants are appointed on staggered calendar dates, become eligible to
//! retire 25 years after hire, and carry annually updated seniority
//! covariates. Times are whole days since the configured epoch.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{subject_rng, SimulationError, GROUP_COLUMN};
use crate::data::{
    validate_dataset, CovariateTrajectory, Dataset, ProcessObservation, RestrictionWindow, SubjectRecord,
};

const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyConfig {
    pub n: usize,
    pub seed: u64,
    /// Calendar date of day zero (ISO 8601).
    pub epoch: String,
    /// Last day of follow-up.
    pub data_end: f64,
    pub window: [f64; 2],
    /// Lieutenant appointments are uniform over this many years from day zero.
    pub appointment_years: f64,
    pub group_probability: f64,
    /// Years of service at appointment are uniform on this range.
    pub service_at_appointment: [f64; 2],
    pub retirement_eligibility_years: f64,
    /// Annual promotion hazard at zero covariates.
    pub promotion_rate: f64,
    /// `group`, `years_lt`, `years_lt_sq` effects.
    pub promotion_effects: [f64; 3],
    /// Annual retirement hazard once eligible, at zero covariates.
    pub retirement_rate: f64,
    /// `group`, `service` (years beyond eligibility) effects.
    pub retirement_effects: [f64; 2],
    /// Annual hazard of leaving for other reasons (censoring).
    pub attrition_rate: f64,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        Self {
            n: 400,
            seed: 1905,
            epoch: "1990-01-01".into(),
            data_end: 7670.0,
            window: [3652.0, 7670.0],
            appointment_years: 16.0,
            group_probability: 0.55,
            service_at_appointment: [8.0, 18.0],
            retirement_eligibility_years: 25.0,
            promotion_rate: 0.04,
            promotion_effects: [0.35, 0.45, -0.05],
            retirement_rate: 0.2,
            retirement_effects: [-0.2, 0.08],
            attrition_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseStudyData {
    pub dataset: Dataset<f64>,
    pub window: RestrictionWindow<f64>,
}

fn years_to_days(y: f64) -> f64 {
    (y * DAYS_PER_YEAR).round()
}

/// First time the cumulative hazard of a piecewise-constant annual rate
/// schedule `(start_day, rate_per_year)` exceeds `target`.
fn first_passage(segments: &[(f64, f64)], target: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &(start, rate)) in segments.iter().enumerate() {
        let end = segments.get(k + 1).map_or(f64::INFINITY, |s| s.0);
        let per_day = rate / DAYS_PER_YEAR;
        let mass = per_day * (end - start);
        if acc + mass >= target {
            return start + (target - acc) / per_day;
        }
        acc += mass;
    }
    f64::INFINITY
}

/// Generates the bundled case-study dataset.
pub fn case_study_dataset(config: &CaseStudyConfig) -> Result<CaseStudyData, SimulationError> {
    let window = RestrictionWindow::new(config.window[0], config.window[1])
        .map_err(|e| SimulationError::Config(e.to_string()))?;
    let [pg, p1e, p2e] = config.promotion_effects;
    let [rg, r1e] = config.retirement_effects;
    let horizon_years = (config.data_end / DAYS_PER_YEAR).ceil() as usize + 1;
    let mut subjects = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rng = subject_rng(config.seed, 0, i);
        let group = rng.random_bool(config.group_probability);
        let g = if group { 1.0 } else { 0.0 };
        let p1 = years_to_days(rng.random_range(0.0..config.appointment_years));
        let service_at_appointment =
            rng.random_range(config.service_at_appointment[0]..config.service_at_appointment[1]);
        let hire = p1 - years_to_days(service_at_appointment);
        let r1 = hire + years_to_days(config.retirement_eligibility_years);

        let mut x_segments = Vec::new();
        let mut promo_rates = Vec::new();
        for k in 0..horizon_years {
            let y = k as f64;
            let start = p1 + years_to_days(y);
            if start > config.data_end {
                break;
            }
            x_segments.push((start, vec![g, y, y * y]));
            promo_rates.push((start, config.promotion_rate * (pg * g + p1e * y + p2e * y * y).exp()));
        }

        let first_service = service_at_appointment.floor() as usize;
        let mut z_segments = vec![(p1, vec![g, first_service as f64 - config.retirement_eligibility_years])];
        let mut retire_rates = Vec::new();
        for m in (first_service + 1)..(first_service + horizon_years) {
            let start = hire + years_to_days(m as f64);
            if start > config.data_end {
                break;
            }
            if start <= p1 {
                continue;
            }
            let service = m as f64 - config.retirement_eligibility_years;
            z_segments.push((start, vec![g, service]));
            if start >= r1 {
                retire_rates.push((start, config.retirement_rate * (rg * g + r1e * service).exp()));
            }
        }

        let promotion_latent = first_passage(&promo_rates, Exp1.sample(&mut rng));
        let retirement_latent = first_passage(&retire_rates, Exp1.sample(&mut rng));
        let attrition: f64 = Exp1.sample(&mut rng);
        let leave = p1 + years_to_days(attrition / config.attrition_rate);
        let censor = leave.min(config.data_end);

        let p_exit_raw = promotion_latent.min(retirement_latent).min(censor);
        let promoted = promotion_latent == p_exit_raw && promotion_latent < censor;
        let p_exit = p_exit_raw.ceil().min(config.data_end).max(p1);
        let retirement = (r1 <= censor).then(|| {
            let retired = retirement_latent <= censor;
            let exit = retirement_latent.min(censor).ceil().min(config.data_end).max(r1);
            ProcessObservation::new(r1, exit, retired)
        });

        subjects.push(SubjectRecord {
            id: format!("officer-{:03}", i + 1),
            promotion: Some(ProcessObservation::new(p1, p_exit, promoted)),
            x_traj: CovariateTrajectory::new(3, x_segments).map_err(|e| SimulationError::Config(e.to_string()))?,
            z_traj: if retirement.is_some() {
                CovariateTrajectory::new(2, z_segments).map_err(|e| SimulationError::Config(e.to_string()))?
            } else {
                CovariateTrajectory::empty(2)
            },
            protected_flag: group,
            retirement,
        });
    }
    let raw = Dataset {
        subjects,
        promo_covariate_names: vec![GROUP_COLUMN.into(), "years_lt".into(), "years_lt_sq".into()],
        retire_covariate_names: vec![GROUP_COLUMN.into(), "service".into()],
        protected_column: GROUP_COLUMN.into(),
    };
    Ok(CaseStudyData {
        dataset: validate_dataset(raw)?,
        window,
    })
}
