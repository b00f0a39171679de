//! Counterfactual survival curves, state probabilities and restricted mean
//! durations for one target subject.
//!
//! Both fitted survival functions are step functions, so every integral over
//! the restriction window is an exact finite sum over the merged knot grid.

use serde::{Deserialize, Serialize};

use crate::cox::CoxFit;
use crate::data::{CovariateTrajectory, DataError, Dataset, Process, RestrictionWindow, SubjectRecord};
use crate::linalg::dot;
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictionError {
    #[error("policy column `{0}` is not a covariate of either process")]
    UnknownColumn(String),
    #[error("subject {0} has no promotion observation")]
    MissingPromotion(String),
    #[error("subject {id} enters at {entry}, not before the window end {tau1}")]
    WindowEntry { id: String, entry: f64, tau1: f64 },
    #[error("{process} covariates do not cover the prediction range: {source}")]
    TrajectoryDomain {
        process: Process,
        #[source]
        source: DataError,
    },
    #[error("curve entry {entry} is after the horizon {horizon}")]
    Horizon { entry: f64, horizon: f64 },
    #[error("model has {model} {process} covariates but the trajectory has {data}")]
    CovariateMismatch {
        process: Process,
        model: usize,
        data: usize,
    },
}

/// The three occupation states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    /// Lower rank, not retired.
    Lt,
    /// Higher rank, not retired.
    Cap,
    /// Retired.
    Rt,
}

impl State {
    pub const ALL: [State; 3] = [State::Lt, State::Cap, State::Rt];

    pub fn label(self) -> &'static str {
        match self {
            State::Lt => "lt",
            State::Cap => "cap",
            State::Rt => "rt",
        }
    }
}

impl std::str::FromStr for State {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lt" => Ok(State::Lt),
            "cap" => Ok(State::Cap),
            "rt" => Ok(State::Rt),
            other => Err(format!("unknown state `{other}` (expected lt, cap or rt)")),
        }
    }
}

/// Replaces covariate columns with fixed values in every segment.
///
/// The default construction zeroes the protected-group indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualPolicy<T> {
    pub assignments: Vec<(String, T)>,
}

impl<T: Scalar> CounterfactualPolicy<T> {
    pub fn zero_protected(column: impl Into<String>) -> Self {
        Self::set(column, T::zero())
    }

    pub fn set(column: impl Into<String>, value: T) -> Self {
        Self {
            assignments: vec![(column.into(), value)],
        }
    }

    pub fn and(mut self, column: impl Into<String>, value: T) -> Self {
        self.assignments.push((column.into(), value));
        self
    }

    pub fn identity() -> Self {
        Self {
            assignments: Vec::new(),
        }
    }
}

/// Applies `policy` to every trajectory segment of `record`.
///
/// Columns are looked up by name in the dataset's covariate lists; a column
/// present in only one process is replaced there only.
pub fn apply_policy<T: Scalar>(
    record: &SubjectRecord<T>,
    policy: &CounterfactualPolicy<T>,
    dataset: &Dataset<T>,
) -> Result<SubjectRecord<T>, PredictionError> {
    let mut out = record.clone();
    for (column, value) in &policy.assignments {
        let px = dataset.column_index(Process::Promotion, column);
        let pz = dataset.column_index(Process::Retirement, column);
        if px.is_none() && pz.is_none() {
            return Err(PredictionError::UnknownColumn(column.clone()));
        }
        if let Some(j) = px {
            if j < out.x_traj.dim() && !out.x_traj.is_empty() {
                out.x_traj = out.x_traj.with_column(j, *value);
            }
        }
        if let Some(j) = pz {
            if j < out.z_traj.dim() && !out.z_traj.is_empty() {
                out.z_traj = out.z_traj.with_column(j, *value);
            }
        }
        if *column == dataset.protected_column {
            out.protected_flag = *value != T::zero();
        }
    }
    Ok(out)
}

/// Right-continuous step survival curve equal to one up to `entry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve<T> {
    pub entry: T,
    /// `(time, S(time))` at each baseline jump after `entry`.
    pub knots: Vec<(T, T)>,
}

impl<T: Scalar> SurvivalCurve<T> {
    /// `S ≡ 1`: no hazard can accrue.
    pub fn flat(entry: T) -> Self {
        Self {
            entry,
            knots: Vec::new(),
        }
    }

    pub fn eval(&self, t: T) -> T {
        let pos = self.knots.partition_point(|&(u, _)| u <= t);
        if pos == 0 {
            T::one()
        } else {
            self.knots[pos - 1].1
        }
    }

    pub fn knot_times(&self) -> impl Iterator<Item = T> + '_ {
        self.knots.iter().map(|&(u, _)| u)
    }
}

/// `Ŝ(t) = exp(−Σ_{u ∈ (entry, t]} dΛ̂₀(u)·exp(β̂ᵀx(u)))` on `(entry, horizon]`.
pub fn survival_curve<T: Scalar>(
    fit: &CoxFit<T>,
    traj: &CovariateTrajectory<T>,
    entry: T,
    horizon: T,
) -> Result<SurvivalCurve<T>, PredictionError> {
    if entry > horizon {
        return Err(PredictionError::Horizon {
            entry: entry.to_f64_lossy(),
            horizon: horizon.to_f64_lossy(),
        });
    }
    if traj.dim() != fit.dim() {
        return Err(PredictionError::CovariateMismatch {
            process: fit.process,
            model: fit.dim(),
            data: traj.dim(),
        });
    }
    traj.evaluate(entry)
        .map_err(|source| PredictionError::TrajectoryDomain {
            process: fit.process,
            source,
        })?;
    let mut cumulative = CompensatedSum::new();
    let mut knots = Vec::new();
    for j in fit
        .baseline_jumps
        .iter()
        .filter(|j| j.time > entry && j.time <= horizon)
    {
        let x = traj
            .evaluate(j.time)
            .map_err(|source| PredictionError::TrajectoryDomain {
                process: fit.process,
                source,
            })?;
        cumulative.add(j.jump * dot(&fit.beta_hat, x).exp());
        knots.push((j.time, (-cumulative.value()).exp()));
    }
    Ok(SurvivalCurve { entry, knots })
}

/// Sorted grid `a = g_0 < … < g_m = b` containing every knot strictly inside `(a, b)`.
pub fn merged_grid<T: Scalar>(a: T, b: T, knots: impl IntoIterator<Item = T>) -> Vec<T> {
    let mut grid: Vec<T> = knots.into_iter().filter(|&u| u > a && u < b).collect();
    grid.push(a);
    grid.push(b);
    grid.sort_by(|x, y| x.partial_cmp(y).expect("finite grid"));
    grid.dedup();
    grid
}

/// `∫_a^b f(t) dt` for `f` constant on each `[g_j, g_{j+1})`, evaluated at the left end.
pub fn integrate_on_grid<T: Scalar>(grid: &[T], mut f: impl FnMut(T) -> T) -> T {
    grid.windows(2)
        .map(|w| (w[1] - w[0]) * f(w[0]))
        .collect::<CompensatedSum<T>>()
        .value()
}

/// Point estimate (and, once computed, standard error) of one restricted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestrictedMeanEstimate<T> {
    pub subject_id: String,
    pub state: State,
    pub value: T,
    pub std_error: Option<T>,
    pub window: RestrictionWindow<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDurations<T> {
    pub lt: RestrictedMeanEstimate<T>,
    pub cap: RestrictedMeanEstimate<T>,
    pub rt: RestrictedMeanEstimate<T>,
}

impl<T: Scalar> StateDurations<T> {
    pub fn get(&self, state: State) -> &RestrictedMeanEstimate<T> {
        match state {
            State::Lt => &self.lt,
            State::Cap => &self.cap,
            State::Rt => &self.rt,
        }
    }

    pub fn get_mut(&mut self, state: State) -> &mut RestrictedMeanEstimate<T> {
        match state {
            State::Lt => &mut self.lt,
            State::Cap => &mut self.cap,
            State::Rt => &mut self.rt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateProbabilities<T> {
    pub time: T,
    pub p_lt: T,
    pub p_cap: T,
    pub p_rt: T,
}

/// Everything about one target subject's counterfactual prediction.
#[derive(Debug, Clone)]
pub struct TargetContext<T> {
    pub subject_id: String,
    pub window: RestrictionWindow<T>,
    /// `max(tau0, P1)`, where integration starts.
    pub start: T,
    pub promotion_entry: T,
    pub retirement_entry: Option<T>,
    pub x_counterfactual: CovariateTrajectory<T>,
    pub z_counterfactual: CovariateTrajectory<T>,
    pub promotion_curve: SurvivalCurve<T>,
    pub retirement_curve: SurvivalCurve<T>,
    pub grid: Vec<T>,
}

impl<T: Scalar> TargetContext<T> {
    pub fn new(
        fit_p: &CoxFit<T>,
        fit_r: &CoxFit<T>,
        record: &SubjectRecord<T>,
        policy: &CounterfactualPolicy<T>,
        dataset: &Dataset<T>,
        window: RestrictionWindow<T>,
    ) -> Result<Self, PredictionError> {
        let cf = apply_policy(record, policy, dataset)?;
        Self::from_counterfactual(fit_p, fit_r, &cf, window)
    }

    /// Builds the context from a record whose covariates are already the
    /// hypothetical ones.
    pub fn from_counterfactual(
        fit_p: &CoxFit<T>,
        fit_r: &CoxFit<T>,
        cf: &SubjectRecord<T>,
        window: RestrictionWindow<T>,
    ) -> Result<Self, PredictionError> {
        let promotion = cf
            .promotion
            .ok_or_else(|| PredictionError::MissingPromotion(cf.id.clone()))?;
        let p1 = promotion.entry;
        if p1 >= window.tau1 {
            return Err(PredictionError::WindowEntry {
                id: cf.id.clone(),
                entry: p1.to_f64_lossy(),
                tau1: window.tau1.to_f64_lossy(),
            });
        }
        let start = window.tau0.max(p1);
        let promotion_curve = survival_curve(fit_p, &cf.x_traj, p1, window.tau1)?;
        let retirement_entry = cf.retirement.map(|r| r.entry);
        let retirement_curve = match retirement_entry {
            Some(r1) if r1 < window.tau1 => survival_curve(fit_r, &cf.z_traj, r1, window.tau1)?,
            Some(r1) => SurvivalCurve::flat(r1),
            None => SurvivalCurve::flat(window.tau1),
        };
        let grid = merged_grid(
            start,
            window.tau1,
            promotion_curve.knot_times().chain(retirement_curve.knot_times()),
        );
        Ok(Self {
            subject_id: cf.id.clone(),
            window,
            start,
            promotion_entry: p1,
            retirement_entry,
            x_counterfactual: cf.x_traj.clone(),
            z_counterfactual: cf.z_traj.clone(),
            promotion_curve,
            retirement_curve,
            grid,
        })
    }

    pub fn probabilities_at(&self, t: T) -> StateProbabilities<T> {
        let sp = self.promotion_curve.eval(t);
        let sr = self.retirement_curve.eval(t);
        let p_cap = (T::one() - sp) * sr;
        StateProbabilities {
            time: t,
            p_lt: sr - p_cap,
            p_cap,
            p_rt: T::one() - sr,
        }
    }

    pub fn restricted_means(&self) -> StateDurations<T> {
        let mut lt = CompensatedSum::new();
        let mut cap = CompensatedSum::new();
        let mut rt = CompensatedSum::new();
        for w in self.grid.windows(2) {
            let dt = w[1] - w[0];
            let p = self.probabilities_at(w[0]);
            lt.add(dt * p.p_lt);
            cap.add(dt * p.p_cap);
            rt.add(dt * p.p_rt);
        }
        let make = |state, value| RestrictedMeanEstimate {
            subject_id: self.subject_id.clone(),
            state,
            value,
            std_error: None,
            window: self.window,
        };
        StateDurations {
            lt: make(State::Lt, lt.value()),
            cap: make(State::Cap, cap.value()),
            rt: make(State::Rt, rt.value()),
        }
    }

    /// State probabilities at the window start, every knot in `(start, tau1]`
    /// and the window end.
    pub fn state_probability_curve(&self) -> Vec<StateProbabilities<T>> {
        let mut times: Vec<T> = self
            .promotion_curve
            .knot_times()
            .chain(self.retirement_curve.knot_times())
            .filter(|&u| u > self.start && u <= self.window.tau1)
            .collect();
        times.push(self.start);
        times.push(self.window.tau1);
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        times.dedup();
        times.into_iter().map(|t| self.probabilities_at(t)).collect()
    }
}

/// Restricted mean durations in the three states (values only).
pub fn restricted_means<T: Scalar>(
    fit_p: &CoxFit<T>,
    fit_r: &CoxFit<T>,
    record: &SubjectRecord<T>,
    policy: &CounterfactualPolicy<T>,
    dataset: &Dataset<T>,
    window: RestrictionWindow<T>,
) -> Result<StateDurations<T>, PredictionError> {
    Ok(TargetContext::new(fit_p, fit_r, record, policy, dataset, window)?.restricted_means())
}

pub fn state_probability_curve<T: Scalar>(
    fit_p: &CoxFit<T>,
    fit_r: &CoxFit<T>,
    record: &SubjectRecord<T>,
    policy: &CounterfactualPolicy<T>,
    dataset: &Dataset<T>,
    window: RestrictionWindow<T>,
) -> Result<Vec<StateProbabilities<T>>, PredictionError> {
    Ok(TargetContext::new(fit_p, fit_r, record, policy, dataset, window)?.state_probability_curve())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cox::BaselineJump;
    use crate::data::ProcessObservation;
    use crate::linalg::Matrix;

    /// A fit carrying only what prediction reads.
    pub(crate) fn stub_fit(process: Process, beta: Vec<f64>, jumps: &[(f64, f64)]) -> CoxFit<f64> {
        let p = beta.len();
        CoxFit {
            process,
            covariate_names: (0..p).map(|j| format!("c{j}")).collect(),
            beta_hat: beta,
            hessian: Matrix::identity(p),
            hessian_inverse: Matrix::identity(p),
            aliased: vec![false; p],
            baseline_jumps: jumps.iter().map(|&(time, jump)| BaselineJump { time, jump }).collect(),
            risk_summaries: vec![],
            score_residuals: vec![],
            subject_ids: vec![],
            sample_size: 1,
            events: jumps.len(),
            log_likelihood: 0.0,
            converged: true,
            iterations: 0,
            final_score_norm: 0.0,
        }
    }

    fn record(p1: f64, r1: Option<f64>, flag: f64, sen: f64) -> SubjectRecord<f64> {
        SubjectRecord {
            id: "t".into(),
            promotion: Some(ProcessObservation::new(p1, p1 + 1.0, false)),
            retirement: r1.map(|r| ProcessObservation::new(r, r + 1.0, false)),
            x_traj: CovariateTrajectory::new(
                2,
                vec![
                    (p1.min(0.0), vec![flag, sen]),
                    (p1.min(0.0) + 50.0, vec![flag, sen + 1.0]),
                ],
            )
            .unwrap(),
            z_traj: CovariateTrajectory::constant(r1.unwrap_or(0.0).min(0.0), vec![flag]),
            protected_flag: flag != 0.0,
        }
    }

    fn schema() -> Dataset<f64> {
        Dataset {
            subjects: vec![],
            promo_covariate_names: vec!["wm".into(), "sen".into()],
            retire_covariate_names: vec!["wm".into()],
            protected_column: "wm".into(),
        }
    }

    #[test]
    fn policy_zeroes_only_target_column() {
        let r = record(0.0, Some(0.0), 1.0, 3.5);
        let cf = apply_policy(&r, &CounterfactualPolicy::zero_protected("wm"), &schema()).unwrap();
        for (_, v) in cf.x_traj.segments() {
            assert_eq!(v[0], 0.0);
        }
        assert_eq!(cf.x_traj.segment(0).1[1], 3.5);
        assert_eq!(cf.z_traj.segment(0).1, &[0.0]);
        assert!(!cf.protected_flag);
        let again = apply_policy(&cf, &CounterfactualPolicy::zero_protected("wm"), &schema()).unwrap();
        assert_eq!(again, cf);
        let zero = record(0.0, Some(0.0), 0.0, 3.5);
        assert_eq!(
            apply_policy(&zero, &CounterfactualPolicy::zero_protected("wm"), &schema()).unwrap(),
            zero
        );
        assert_eq!(
            apply_policy(&zero, &CounterfactualPolicy::zero_protected("nope"), &schema()).unwrap_err(),
            PredictionError::UnknownColumn("nope".into())
        );
    }

    #[test]
    fn single_jump_survival() {
        let fit = stub_fit(Process::Promotion, vec![0.0], &[(2.0, 0.2)]);
        let traj = CovariateTrajectory::constant(0.0, vec![1.0]);
        let c = survival_curve(&fit, &traj, 0.0, 10.0).unwrap();
        assert_eq!(c.eval(1.99), 1.0);
        assert!((c.eval(2.0) - (-0.2f64).exp()).abs() < 1e-15);
        assert!((c.eval(9.0) - (-0.2f64).exp()).abs() < 1e-15);
        let none = survival_curve(&fit, &traj, 2.0, 10.0).unwrap();
        assert!(none.knots.is_empty());
        assert!(matches!(
            survival_curve(&fit, &CovariateTrajectory::constant(1.0, vec![1.0]), 0.0, 10.0),
            Err(PredictionError::TrajectoryDomain { .. })
        ));
    }

    #[test]
    fn no_hazard_gives_full_lower_rank_time() {
        let fp = stub_fit(Process::Promotion, vec![0.0, 0.0], &[]);
        let fr = stub_fit(Process::Retirement, vec![0.0], &[]);
        let w = RestrictionWindow::new(1.0, 6.0).unwrap();
        let r = record(0.0, Some(0.0), 1.0, 1.0);
        let m = restricted_means(&fp, &fr, &r, &CounterfactualPolicy::zero_protected("wm"), &schema(), w).unwrap();
        assert_eq!(m.lt.value, 5.0);
        assert_eq!(m.cap.value, 0.0);
        assert_eq!(m.rt.value, 0.0);
    }

    #[test]
    fn immediate_promotion_without_retirement() {
        // a huge jump right at entry+ makes S^P ~ 0 across the window
        let fp = stub_fit(Process::Promotion, vec![0.0, 0.0], &[(1e-9, 1e6)]);
        let fr = stub_fit(Process::Retirement, vec![0.0], &[]);
        let w = RestrictionWindow::new(0.0, 4.0).unwrap();
        let r = record(0.0, Some(0.0), 0.0, 1.0);
        let m = restricted_means(&fp, &fr, &r, &CounterfactualPolicy::identity(), &schema(), w).unwrap();
        assert!((m.cap.value - 4.0).abs() < 1e-8);
    }

    #[test]
    fn state_curve_partitions_unity() {
        let fp = stub_fit(
            Process::Promotion,
            vec![0.3, 0.1],
            &[(1.0, 0.1), (2.5, 0.3), (7.0, 0.2)],
        );
        let fr = stub_fit(Process::Retirement, vec![0.5], &[(0.5, 0.05), (3.0, 0.4), (4.0, 0.1)]);
        let w = RestrictionWindow::new(0.0, 6.0).unwrap();
        let r = record(0.0, Some(2.0), 1.0, 1.0);
        let ctx = TargetContext::new(&fp, &fr, &r, &CounterfactualPolicy::zero_protected("wm"), &schema(), w).unwrap();
        let curve = ctx.state_probability_curve();
        assert_eq!(curve[0].time, 0.0);
        assert_eq!(curve[0].p_lt, 1.0);
        assert_eq!(curve.last().unwrap().time, 6.0);
        for p in &curve {
            assert!((p.p_lt + p.p_cap + p.p_rt - 1.0).abs() < 1e-15);
            if p.time < 2.0 {
                assert_eq!(p.p_rt, 0.0);
            }
        }
        // retirement jump at 0.5 precedes R1 = 2 and is ignored
        assert_eq!(ctx.retirement_curve.knots.len(), 2);
        let m = ctx.restricted_means();
        assert!((m.lt.value + m.cap.value + m.rt.value - 6.0).abs() < 1e-12);
    }

    #[test]
    fn entry_after_window_rejected() {
        let fp = stub_fit(Process::Promotion, vec![0.0, 0.0], &[]);
        let fr = stub_fit(Process::Retirement, vec![0.0], &[]);
        let w = RestrictionWindow::new(0.0, 4.0).unwrap();
        let mut r = record(-1.0, None, 0.0, 1.0);
        r.promotion = Some(ProcessObservation::new(4.0, 5.0, false));
        assert!(matches!(
            restricted_means(&fp, &fr, &r, &CounterfactualPolicy::identity(), &schema(), w),
            Err(PredictionError::WindowEntry { .. })
        ));
    }
}
