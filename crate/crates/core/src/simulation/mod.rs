//! Replicated Monte Carlo studies of the restricted mean estimators.
//!
//! [`generate_replicate`] draws the two-process design with constant
//! baseline hazards, a shared group indicator and an optional gamma frailty;
//! [`run_study`] fits both models on each replicate and summarizes bias,
//! empirical SD, mean model-based SE and Wald coverage against
//! [`true_restricted_mean`].

mod case_study;
pub mod instances;

pub use case_study::{case_study_dataset, CaseStudyConfig, CaseStudyData};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::cox::{build_view, fit, CoxError};
use crate::data::{
    validate_dataset, CovariateTrajectory, Dataset, Process, ProcessObservation, RestrictionWindow, SubjectRecord,
    ValidationErrors,
};
use crate::prediction::{CounterfactualPolicy, PredictionError, State, TargetContext};
use crate::scalar::{CompensatedSum, Scalar};
use crate::variance::{InfluenceEngine, VarianceError};

/// Name of the shared group indicator in generated datasets.
pub const GROUP_COLUMN: &str = "group";

/// Two-sided 95% normal quantile used for Wald intervals.
pub const WALD_Z: f64 = 1.96;

/// Largest tolerated fraction of failed replicates.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("generated data failed validation: {0}")]
    Validation(#[from] ValidationErrors),
    #[error(transparent)]
    Fit(#[from] CoxError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error(transparent)]
    Variance(#[from] VarianceError),
    #[error("{excluded} of {replicates} replicates failed (first: {first})")]
    TooManyExclusions {
        excluded: usize,
        replicates: usize,
        first: String,
    },
}

fn default_tau() -> f64 {
    5.0
}

/// Distribution of a continuous design covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CovariateDistribution {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl CovariateDistribution {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            CovariateDistribution::Uniform { low, high } => rng.random_range(low..high),
            CovariateDistribution::Normal { mean, sd } => Normal::new(mean, sd).expect("valid normal").sample(rng),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            CovariateDistribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            CovariateDistribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
        }
    }
}

fn default_x2_distribution() -> CovariateDistribution {
    CovariateDistribution::Uniform { low: 0.0, high: 10.0 }
}

fn default_z2_distribution() -> CovariateDistribution {
    CovariateDistribution::Normal { mean: 0.0, sd: 2.0 }
}

/// One simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    #[serde(default)]
    pub label: Option<String>,
    pub n: usize,
    pub replicates: usize,
    pub lambda0_p: f64,
    pub lambda0_r: f64,
    /// `(β1, β2)`: group and `x2` effects on promotion.
    pub beta: [f64; 2],
    /// `(θ1, θ2)`: group and `z2` effects on retirement.
    pub theta: [f64; 2],
    /// Upper bound of the uniform censoring time; `None` disables censoring.
    pub censor_max: Option<f64>,
    #[serde(default)]
    pub frailty_variance: f64,
    #[serde(default = "default_x2_distribution")]
    pub x2_distribution: CovariateDistribution,
    #[serde(default = "default_z2_distribution")]
    pub z2_distribution: CovariateDistribution,
    /// Counterfactual `(X̃2, Z̃2)`; the group indicator is set to zero.
    pub policy_covariates: [f64; 2],
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub seed: u64,
}

impl SimulationConfig {
    /// The frailty-free reference design: beta1 = -0.5, theta1 = 0.5, x2 = z2 = 1, n = 500.
    pub fn table1_middle() -> Self {
        Self {
            label: Some("reference beta1=-0.5 theta1=0.5 x2=1 z2=1".into()),
            n: 500,
            replicates: 1000,
            lambda0_p: 0.1,
            lambda0_r: 1.0 / 60.0,
            beta: [-0.5, 0.1],
            theta: [0.5, 0.1],
            censor_max: Some(200.0),
            frailty_variance: 0.0,
            x2_distribution: default_x2_distribution(),
            z2_distribution: default_z2_distribution(),
            policy_covariates: [1.0, 1.0],
            tau: 5.0,
            seed: 20_240_501,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        let bad = |m: &str| Err(SimulationError::Config(m.into()));
        let finite = [
            self.lambda0_p,
            self.lambda0_r,
            self.beta[0],
            self.beta[1],
            self.theta[0],
            self.theta[1],
            self.frailty_variance,
            self.policy_covariates[0],
            self.policy_covariates[1],
            self.tau,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all numeric fields must be finite");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.n > u32::MAX as usize || self.replicates > u32::MAX as usize {
            return bad("n and replicates must fit in 32 bits");
        }
        if !(self.lambda0_p > 0.0 && self.lambda0_r > 0.0) {
            return bad("baseline hazards must be positive");
        }
        if let Some(c) = self.censor_max {
            if !(c > 0.0) {
                return bad("censor_max must be positive");
            }
        }
        if !self.x2_distribution.is_valid() || !self.z2_distribution.is_valid() {
            return bad("covariate distributions need finite parameters (uniform low < high, normal sd >= 0)");
        }
        if self.frailty_variance < 0.0 {
            return bad("frailty_variance must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        Ok(())
    }

    /// Counterfactual constant hazards `(a_P, a_R)` before frailty.
    pub fn counterfactual_hazards(&self) -> (f64, f64) {
        (
            self.lambda0_p * (self.beta[1] * self.policy_covariates[0]).exp(),
            self.lambda0_r * (self.theta[1] * self.policy_covariates[1]).exp(),
        )
    }
}

/// Latent quantities for one generated subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentSubject {
    pub group: bool,
    pub x2: f64,
    pub z2: f64,
    pub frailty: f64,
    pub promotion_time: f64,
    pub retirement_time: f64,
    pub censoring_time: f64,
}

/// Generator for `(seed, replicate, subject)`; independent of thread layout.
pub fn subject_rng(seed: u64, replicate: usize, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replicate as u64) << 32) | subject as u64);
    rng
}

/// Draws one subject's latent times.
pub fn draw_subject(config: &SimulationConfig, rng: &mut ChaCha8Rng) -> LatentSubject {
    let group = rng.random_bool(0.5);
    let x2 = config.x2_distribution.sample(rng);
    let z2 = config.z2_distribution.sample(rng);
    let v = config.frailty_variance;
    let frailty = if v > 0.0 {
        Gamma::new(1.0 / v, v).expect("valid gamma").sample(rng)
    } else {
        1.0
    };
    let g = if group { 1.0 } else { 0.0 };
    let rate_p = config.lambda0_p * frailty * (config.beta[0] * g + config.beta[1] * x2).exp();
    let rate_r = config.lambda0_r * frailty * (config.theta[0] * g + config.theta[1] * z2).exp();
    let promotion_time = exponential(rate_p, rng);
    let retirement_time = exponential(rate_r, rng);
    let censoring_time = match config.censor_max {
        Some(c) => rng.random_range(0.0..c),
        None => f64::INFINITY,
    };
    LatentSubject {
        group,
        x2,
        z2,
        frailty,
        promotion_time,
        retirement_time,
        censoring_time,
    }
}

fn exponential(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    if rate > 0.0 && rate.is_finite() {
        Exp::new(rate).expect("positive rate").sample(rng)
    } else if rate > 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// The observed record implied by a latent subject.
pub fn observe(id: String, s: &LatentSubject) -> SubjectRecord<f64> {
    let g = if s.group { 1.0 } else { 0.0 };
    let p_exit = s.promotion_time.min(s.retirement_time).min(s.censoring_time);
    let r_exit = s.retirement_time.min(s.censoring_time);
    SubjectRecord {
        id,
        promotion: Some(ProcessObservation::new(0.0, p_exit, s.promotion_time == p_exit)),
        retirement: Some(ProcessObservation::new(0.0, r_exit, s.retirement_time == r_exit)),
        x_traj: CovariateTrajectory::constant(0.0, vec![g, s.x2]),
        z_traj: CovariateTrajectory::constant(0.0, vec![g, s.z2]),
        protected_flag: s.group,
    }
}

/// Replicate `replicate` of the design, validated.
pub fn generate_replicate(config: &SimulationConfig, replicate: usize) -> Result<Dataset<f64>, SimulationError> {
    config.validate()?;
    let subjects = (0..config.n)
        .map(|i| {
            let mut rng = subject_rng(config.seed, replicate, i);
            observe(format!("r{replicate}-s{i}"), &draw_subject(config, &mut rng))
        })
        .collect();
    let raw = Dataset {
        subjects,
        promo_covariate_names: vec![GROUP_COLUMN.into(), "x2".into()],
        retire_covariate_names: vec![GROUP_COLUMN.into(), "z2".into()],
        protected_column: GROUP_COLUMN.into(),
    };
    Ok(validate_dataset(raw)?)
}

/// The target subject: group member with the configured covariates, entering
/// both processes at zero.
pub fn target_record<T: Scalar>(config: &SimulationConfig) -> SubjectRecord<T> {
    let [x2, z2] = config.policy_covariates;
    let obs = ProcessObservation::new(T::zero(), T::lit(config.tau), false);
    SubjectRecord {
        id: "target".into(),
        promotion: Some(obs),
        retirement: Some(obs),
        x_traj: CovariateTrajectory::constant(T::zero(), vec![T::one(), T::lit(x2)]),
        z_traj: CovariateTrajectory::constant(T::zero(), vec![T::one(), T::lit(z2)]),
        protected_flag: true,
    }
}

/// Restricted means over `[0, τ]` for constant hazards `a_P`, `a_R`.
pub fn constant_hazard_means(a_p: f64, a_r: f64, tau: f64) -> [f64; 3] {
    let lt = mean_exponential(a_p + a_r, tau);
    let r_alive = mean_exponential(a_r, tau);
    [lt, r_alive - lt, tau - r_alive]
}

/// `∫_0^τ e^{−a t} dt`, continuous at `a = 0`.
fn mean_exponential(a: f64, tau: f64) -> f64 {
    if a * tau < 1e-300 {
        tau
    } else {
        -(-a * tau).exp_m1() / a
    }
}

/// True restricted mean duration in `state` for the configured
/// counterfactual (group indicator zero).
///
/// With frailty, the constant-hazard expressions are averaged over
/// `w ~ Gamma(1/v, scale v)` by double-exponential quadrature.
pub fn true_restricted_mean(config: &SimulationConfig, state: State) -> f64 {
    let (a_p, a_r) = config.counterfactual_hazards();
    let idx = state_index(state);
    let v = config.frailty_variance;
    if v <= 0.0 {
        return constant_hazard_means(a_p, a_r, config.tau)[idx];
    }
    let k = 1.0 / v;
    // w = s^{1/k} removes the w^{k-1} endpoint behaviour; s = x/(1-x) maps
    // the half-line onto [0, 1).
    let log_norm = -ln_gamma(k + 1.0) - k * v.ln();
    let integrand = |x: f64| {
        if x >= 1.0 {
            return 0.0;
        }
        let s = x / (1.0 - x);
        let w = s.powf(v);
        let log_weight = -w / v + log_norm - 2.0 * (1.0 - x).ln();
        let weight = log_weight.exp();
        if weight == 0.0 {
            return 0.0;
        }
        weight * constant_hazard_means(w * a_p, w * a_r, config.tau)[idx]
    };
    quadrature::double_exponential::integrate(integrand, 0.0, 1.0, 1e-12).integral
}

/// `∫_0^τ (1 + v c t)^{−1/v} dt`, the frailty-averaged survival integral.
pub fn frailty_survival_integral(c: f64, v: f64, tau: f64) -> f64 {
    if c == 0.0 {
        return tau;
    }
    if v == 0.0 {
        return mean_exponential(c, tau);
    }
    let e = 1.0 - 1.0 / v;
    if e.abs() < 1e-12 {
        (v * c * tau).ln_1p() / (v * c)
    } else {
        ((1.0 + v * c * tau).powf(e) - 1.0) / (v * c * e)
    }
}

/// Brute-force Monte Carlo of the restricted means over `draws` latent
/// `(w, P*, R*)` triples at the counterfactual hazards, ordered lt, cap, rt.
pub fn monte_carlo_restricted_means(config: &SimulationConfig, draws: usize, seed: u64) -> [f64; 3] {
    const CHUNKS: usize = 1000;
    let (a_p, a_r) = config.counterfactual_hazards();
    let v = config.frailty_variance;
    let tau = config.tau;
    let sums: Vec<[f64; 3]> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = draws / CHUNKS + usize::from(c < draws % CHUNKS);
            let mut acc = [CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new()];
            for _ in 0..count {
                let w = if v > 0.0 {
                    Gamma::new(1.0 / v, v).expect("valid gamma").sample(&mut rng)
                } else {
                    1.0
                };
                let p = exponential(w * a_p, &mut rng);
                let r = exponential(w * a_r, &mut rng);
                let alive = r.min(tau);
                let lower = p.min(alive);
                acc[0].add(lower);
                acc[1].add(alive - lower);
                acc[2].add(tau - alive);
            }
            acc.map(|a| a.value())
        })
        .collect();
    let total = |k: usize| sums.iter().map(|s| s[k]).collect::<CompensatedSum<f64>>().value() / draws as f64;
    [total(0), total(1), total(2)]
}

fn state_index(state: State) -> usize {
    match state {
        State::Lt => 0,
        State::Cap => 1,
        State::Rt => 2,
    }
}

/// Everything recorded from one successful replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    /// Ordered lt, cap, rt.
    pub estimates: [f64; 3],
    pub std_errors: [f64; 3],
    pub beta1: f64,
    pub beta1_se: f64,
    pub theta1: f64,
    pub theta1_se: f64,
    pub promotion_censored: f64,
    pub retirement_censored: f64,
}

/// Fits both models on `dataset` and evaluates the target at precision `T`.
pub fn estimate_replicate<T: Scalar>(
    config: &SimulationConfig,
    replicate: usize,
    dataset: &Dataset<f64>,
) -> Result<ReplicateOutcome, SimulationError> {
    let data: Dataset<T> = dataset.cast();
    let view_p = build_view(&data, Process::Promotion)?;
    let view_r = build_view(&data, Process::Retirement)?;
    let fit_p = fit(&view_p, &vec![T::zero(); view_p.dim()])?;
    let fit_r = fit(&view_r, &vec![T::zero(); view_r.dim()])?;
    let window = RestrictionWindow {
        tau0: T::zero(),
        tau1: T::lit(config.tau),
    };
    let ctx = TargetContext::new(
        &fit_p,
        &fit_r,
        &target_record(config),
        &CounterfactualPolicy::zero_protected(GROUP_COLUMN),
        &data,
        window,
    )?;
    let means = ctx.restricted_means();
    let ids = data.subjects.iter().map(|s| s.id.clone()).collect();
    let se = InfluenceEngine::new(&ctx, &fit_p, &view_p, &fit_r, &view_r, ids)?.standard_errors();
    let censored = |p: Process| {
        let n = dataset.len() as f64;
        (dataset.len() - dataset.event_count(p)) as f64 / n
    };
    Ok(ReplicateOutcome {
        replicate,
        estimates: State::ALL.map(|s| means.get(s).value.to_f64_lossy()),
        std_errors: se.map(Scalar::to_f64_lossy),
        beta1: fit_p.beta_hat[0].to_f64_lossy(),
        beta1_se: fit_p.standard_errors()[0].to_f64_lossy(),
        theta1: fit_r.beta_hat[0].to_f64_lossy(),
        theta1_se: fit_r.standard_errors()[0].to_f64_lossy(),
        promotion_censored: censored(Process::Promotion),
        retirement_censored: censored(Process::Retirement),
    })
}

/// Performance of one estimated quantity across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub quantity: String,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Empirical SD; undefined with a single replicate.
    pub esd: Option<f64>,
    pub ase: f64,
    pub cp: f64,
}

impl MetricSummary {
    pub fn from_draws(quantity: &str, truth: f64, estimates: &[f64], std_errors: &[f64]) -> Self {
        let m = estimates.len() as f64;
        let mean = compensated_mean(estimates);
        let esd = (estimates.len() > 1).then(|| {
            let ss: CompensatedSum<f64> = estimates.iter().map(|e| (e - mean) * (e - mean)).collect();
            (ss.value() / (m - 1.0)).sqrt()
        });
        let covered = estimates
            .iter()
            .zip(std_errors)
            .filter(|(e, se)| (*e - truth).abs() <= WALD_Z * **se)
            .count();
        Self {
            quantity: quantity.into(),
            true_value: truth,
            mean_estimate: mean,
            bias: mean - truth,
            esd,
            ase: compensated_mean(std_errors),
            cp: covered as f64 / m,
        }
    }
}

fn compensated_mean(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum<f64>>().value() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedReplicate {
    pub replicate: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    pub replicates_used: usize,
    pub excluded: Vec<ExcludedReplicate>,
    /// Mean censored fraction per process, ordered promotion, retirement.
    pub censoring: [f64; 2],
    /// `E_lt`, `E_cap`, `E_rt`, `beta1`, `theta1`.
    pub metrics: Vec<MetricSummary>,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl SimulationReport {
    pub fn metric(&self, quantity: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.quantity == quantity)
    }

    /// ESD over ASE, when the ESD is defined.
    pub fn esd_ase_ratio(&self, quantity: &str) -> Option<f64> {
        let m = self.metric(quantity)?;
        m.esd.map(|esd| esd / m.ase)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table-shaped CSV, one row per quantity.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let label = self.config.label.clone().unwrap_or_default();
        w.write_record([
            "configuration",
            "quantity",
            "true",
            "mean",
            "bias",
            "esd",
            "ase",
            "cp",
            "replicates",
            "excluded",
        ])
        .expect("in-memory write");
        for m in &self.metrics {
            w.write_record([
                label.clone(),
                m.quantity.clone(),
                format!("{:.6}", m.true_value),
                format!("{:.6}", m.mean_estimate),
                format!("{:.6}", m.bias),
                m.esd.map_or_else(|| "NA".into(), |v| format!("{v:.6}")),
                format!("{:.6}", m.ase),
                format!("{:.4}", m.cp),
                self.replicates_used.to_string(),
                self.excluded.len().to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}

/// Runs the study in double precision.
pub fn run_study(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    run_study_with::<f64>(config)
}

/// Runs every replicate (in parallel) with the estimators evaluated at `T`.
pub fn run_study_with<T: Scalar>(config: &SimulationConfig) -> Result<SimulationReport, SimulationError> {
    config.validate()?;
    let results: Vec<Result<ReplicateOutcome, String>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            generate_replicate(config, r)
                .and_then(|d| estimate_replicate::<T>(config, r, &d))
                .map_err(|e| e.to_string())
                .and_then(|o| {
                    let finite = o.estimates.iter().chain(&o.std_errors).all(|v| v.is_finite());
                    if finite {
                        Ok(o)
                    } else {
                        Err("non-finite estimate or standard error".into())
                    }
                })
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut excluded = Vec::new();
    for (replicate, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => outcomes.push(o),
            Err(reason) => excluded.push(ExcludedReplicate { replicate, reason }),
        }
    }
    if excluded.len() as f64 > MAX_EXCLUDED_FRACTION * config.replicates as f64 || outcomes.is_empty() {
        return Err(SimulationError::TooManyExclusions {
            excluded: excluded.len(),
            replicates: config.replicates,
            first: excluded.first().map(|e| e.reason.clone()).unwrap_or_default(),
        });
    }
    let mut metrics = Vec::new();
    for state in State::ALL {
        let i = state_index(state);
        let est: Vec<f64> = outcomes.iter().map(|o| o.estimates[i]).collect();
        let se: Vec<f64> = outcomes.iter().map(|o| o.std_errors[i]).collect();
        let name = format!("E_{}", state.label());
        metrics.push(MetricSummary::from_draws(
            &name,
            true_restricted_mean(config, state),
            &est,
            &se,
        ));
    }
    let pick = |f: fn(&ReplicateOutcome) -> (f64, f64)| -> (Vec<f64>, Vec<f64>) { outcomes.iter().map(f).unzip() };
    let (b, bse) = pick(|o| (o.beta1, o.beta1_se));
    metrics.push(MetricSummary::from_draws("beta1", config.beta[0], &b, &bse));
    let (t, tse) = pick(|o| (o.theta1, o.theta1_se));
    metrics.push(MetricSummary::from_draws("theta1", config.theta[0], &t, &tse));
    let censoring = [
        compensated_mean(&outcomes.iter().map(|o| o.promotion_censored).collect::<Vec<_>>()),
        compensated_mean(&outcomes.iter().map(|o| o.retirement_censored).collect::<Vec<_>>()),
    ];
    Ok(SimulationReport {
        config: config.clone(),
        replicates_used: outcomes.len(),
        excluded,
        censoring,
        metrics,
        outcomes,
    })
}

/// Mean censored fractions `(promotion, retirement)` over the first
/// `replicates` generated datasets, without fitting.
pub fn censoring_fractions(config: &SimulationConfig, replicates: usize) -> Result<(f64, f64), SimulationError> {
    let per: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let d = generate_replicate(config, r)?;
            let n = d.len() as f64;
            Ok((
                (d.len() - d.event_count(Process::Promotion)) as f64 / n,
                (d.len() - d.event_count(Process::Retirement)) as f64 / n,
            ))
        })
        .collect::<Result<_, SimulationError>>()?;
    let (p, r): (Vec<f64>, Vec<f64>) = per.into_iter().unzip();
    Ok((compensated_mean(&p), compensated_mean(&r)))
}
