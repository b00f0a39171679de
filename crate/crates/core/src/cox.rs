//! Proportional-hazards fitting on calendar time with delayed entry and
//! time-varying covariates.
//!
//! Risk sets are closed intervals `[entry, exit]`, ties use the Breslow
//! approximation, and the baseline hazard is the Breslow–Aalen estimator.
//! The view precomputes every at-risk row (subject, covariates at the event
//! time) once, so each Newton iteration is a single pass over that design.

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset, Process, ProcessObservation};
use crate::linalg::{dot, sup_norm, Matrix, NotPositiveDefinite};
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoxError {
    #[error("no events in the {0} process")]
    NoEvents(Process),
    #[error("Newton-Raphson did not converge after {iterations} iterations (score sup-norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },
    #[error("coefficient {coefficient} diverged to {value} (monotone likelihood, e.g. a separating covariate)")]
    MonotoneLikelihood { coefficient: usize, value: f64 },
    #[error("information matrix is singular ({0})")]
    SingularHessian(#[from] NotPositiveDefinite),
    #[error("coefficient vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coefficient vector is not finite")]
    NonFiniteCoefficients,
    #[error("subject {subject}: {source}")]
    Covariates {
        subject: String,
        #[source]
        source: DataError,
    },
}

/// Counting-process representation of one process.
///
/// Members are the dataset subjects with an observation for the process, in
/// dataset order.
#[derive(Debug, Clone)]
pub struct CountingProcessView<T> {
    process: Process,
    dim: usize,
    covariate_names: Vec<String>,
    sample_size: usize,
    member_index: Vec<usize>,
    ids: Vec<String>,
    observations: Vec<ProcessObservation<T>>,
    trajectories: Vec<crate::data::CovariateTrajectory<T>>,
    event_times: Vec<T>,
    event_counts: Vec<usize>,
    offsets: Vec<usize>,
    row_member: Vec<usize>,
    row_event: Vec<bool>,
    row_cov: Vec<T>,
}

/// One at-risk row of the design: a member and its covariates at an event time.
#[derive(Debug, Clone, Copy)]
pub struct RiskRow<'a, T> {
    pub member: usize,
    pub event: bool,
    pub covariates: &'a [T],
}

pub fn build_view<T: Scalar>(dataset: &Dataset<T>, process: Process) -> Result<CountingProcessView<T>, CoxError> {
    let names = dataset.covariate_names(process).to_vec();
    let dim = names.len();
    let mut member_index = Vec::new();
    let mut ids = Vec::new();
    let mut observations = Vec::new();
    let mut trajectories = Vec::new();
    for (i, s) in dataset.subjects.iter().enumerate() {
        if let Some(obs) = s.observation(process) {
            member_index.push(i);
            ids.push(s.id.clone());
            observations.push(*obs);
            trajectories.push(s.trajectory(process).clone());
        }
    }

    let mut times: Vec<T> = observations.iter().filter(|o| o.event).map(|o| o.exit).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite event times"));
    let mut event_times: Vec<T> = Vec::new();
    let mut event_counts: Vec<usize> = Vec::new();
    for t in times {
        if event_times.last() == Some(&t) {
            *event_counts.last_mut().unwrap() += 1;
        } else {
            event_times.push(t);
            event_counts.push(1);
        }
    }

    let mut by_entry: Vec<usize> = (0..observations.len()).collect();
    by_entry.sort_by(|&a, &b| {
        observations[a]
            .entry
            .partial_cmp(&observations[b].entry)
            .expect("finite entry times")
            .then(a.cmp(&b))
    });

    let mut offsets = Vec::with_capacity(event_times.len() + 1);
    let mut row_member = Vec::new();
    let mut row_event = Vec::new();
    let mut row_cov = Vec::new();
    offsets.push(0);
    let mut candidates: Vec<usize> = Vec::new();
    for &t in &event_times {
        let admitted = by_entry.partition_point(|&m| observations[m].entry <= t);
        candidates.clear();
        candidates.extend(
            by_entry[..admitted]
                .iter()
                .copied()
                .filter(|&m| observations[m].exit >= t),
        );
        candidates.sort_unstable();
        for &m in &candidates {
            let cov = trajectories[m].evaluate(t).map_err(|source| CoxError::Covariates {
                subject: ids[m].clone(),
                source,
            })?;
            if cov.len() != dim {
                return Err(CoxError::Covariates {
                    subject: ids[m].clone(),
                    source: DataError::RaggedSegment {
                        index: 0,
                        expected: dim,
                        found: cov.len(),
                    },
                });
            }
            row_member.push(m);
            row_event.push(observations[m].event && observations[m].exit == t);
            row_cov.extend_from_slice(cov);
        }
        offsets.push(row_member.len());
    }

    Ok(CountingProcessView {
        process,
        dim,
        covariate_names: names,
        sample_size: dataset.len(),
        member_index,
        ids,
        observations,
        trajectories,
        event_times,
        event_counts,
        offsets,
        row_member,
        row_event,
        row_cov,
    })
}

impl<T: Scalar> CountingProcessView<T> {
    pub fn process(&self) -> Process {
        self.process
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// `n`, the number of subjects in the originating dataset; the
    /// normalisation of the risk-set averages.
    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    /// Number of subjects with an observation for this process.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Dataset position of view member `m`.
    pub fn dataset_index(&self, m: usize) -> usize {
        self.member_index[m]
    }

    pub fn observation(&self, m: usize) -> &ProcessObservation<T> {
        &self.observations[m]
    }

    pub fn trajectory(&self, m: usize) -> &crate::data::CovariateTrajectory<T> {
        &self.trajectories[m]
    }

    pub fn event_times(&self) -> &[T] {
        &self.event_times
    }

    pub fn event_counts(&self) -> &[usize] {
        &self.event_counts
    }

    pub fn total_events(&self) -> usize {
        self.event_counts.iter().sum()
    }

    pub fn at_risk(&self, m: usize, t: T) -> bool {
        self.observations[m].at_risk(t)
    }

    pub fn counting(&self, m: usize, t: T) -> u8 {
        self.observations[m].counting(t)
    }

    /// At-risk rows at the `k`-th event time.
    pub fn risk_set(&self, k: usize) -> impl Iterator<Item = RiskRow<'_, T>> + '_ {
        (self.offsets[k]..self.offsets[k + 1]).map(move |r| RiskRow {
            member: self.row_member[r],
            event: self.row_event[r],
            covariates: &self.row_cov[r * self.dim..(r + 1) * self.dim],
        })
    }

    pub fn risk_set_size(&self, k: usize) -> usize {
        self.offsets[k + 1] - self.offsets[k]
    }

    fn check_coefficients(&self, b: &[T]) -> Result<(), CoxError> {
        if b.len() != self.dim {
            return Err(CoxError::DimensionMismatch {
                expected: self.dim,
                found: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(CoxError::NonFiniteCoefficients);
        }
        Ok(())
    }
}

/// `S⁽⁰⁾`, `S⁽¹⁾`, `S⁽²⁾` and `x̄` at one event time, normalised by `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetAggregates<T> {
    pub time: T,
    pub s0: T,
    pub s1: Vec<T>,
    pub s2: Matrix<T>,
    pub xbar: Vec<T>,
}

/// Per-event-time working quantities with the exponent centred by the
/// risk-set maximum.
struct Centered<T> {
    shift: T,
    weight_sum: T,
    xbar: Vec<T>,
    /// Σ w (x − x̄)(x − x̄)ᵀ / Σ w
    spread: Matrix<T>,
    event_lp: T,
    event_cov_sum: Vec<T>,
}

fn centered<T: Scalar>(view: &CountingProcessView<T>, k: usize, b: &[T], with_spread: bool) -> Centered<T> {
    let p = view.dim;
    let shift = view
        .risk_set(k)
        .map(|r| dot(b, r.covariates))
        .fold(T::neg_infinity(), T::max);
    let mut weight_sum = CompensatedSum::new();
    let mut wx = vec![T::zero(); p];
    let mut event_lp = T::zero();
    let mut event_cov_sum = vec![T::zero(); p];
    for r in view.risk_set(k) {
        let lp = dot(b, r.covariates);
        let w = (lp - shift).exp();
        weight_sum.add(w);
        for (a, &x) in wx.iter_mut().zip(r.covariates) {
            *a = *a + w * x;
        }
        if r.event {
            event_lp = event_lp + lp;
            for (a, &x) in event_cov_sum.iter_mut().zip(r.covariates) {
                *a = *a + x;
            }
        }
    }
    let weight_sum = weight_sum.value();
    let xbar: Vec<T> = wx.iter().map(|&v| v / weight_sum).collect();
    let mut spread = Matrix::zeros(p, p);
    if with_spread && p > 0 {
        let mut dev = vec![T::zero(); p];
        for r in view.risk_set(k) {
            let w = (dot(b, r.covariates) - shift).exp() / weight_sum;
            for j in 0..p {
                dev[j] = r.covariates[j] - xbar[j];
            }
            spread.add_outer(&dev, &dev, w);
        }
    }
    Centered {
        shift,
        weight_sum,
        xbar,
        spread,
        event_lp,
        event_cov_sum,
    }
}

pub fn risk_set_aggregates<T: Scalar>(
    view: &CountingProcessView<T>,
    k: usize,
    b: &[T],
) -> Result<RiskSetAggregates<T>, CoxError> {
    view.check_coefficients(b)?;
    let c = centered(view, k, b, true);
    let n = T::from_usize_lossy(view.sample_size);
    let s0 = c.weight_sum * c.shift.exp() / n;
    let s1: Vec<T> = c.xbar.iter().map(|&x| x * s0).collect();
    let mut s2 = c.spread.clone();
    s2.add_outer(&c.xbar, &c.xbar, T::one());
    let s2 = s2.scale(s0);
    Ok(RiskSetAggregates {
        time: view.event_times[k],
        s0,
        s1,
        s2,
        xbar: c.xbar,
    })
}

/// Log partial likelihood with Breslow ties.
pub fn log_partial_likelihood<T: Scalar>(view: &CountingProcessView<T>, b: &[T]) -> Result<T, CoxError> {
    view.check_coefficients(b)?;
    Ok(loglik_unchecked(view, b))
}

fn loglik_unchecked<T: Scalar>(view: &CountingProcessView<T>, b: &[T]) -> T {
    let mut total = CompensatedSum::new();
    for k in 0..view.event_times.len() {
        let c = centered(view, k, b, false);
        let d = T::from_usize_lossy(view.event_counts[k]);
        total.add(c.event_lp - d * (c.shift + c.weight_sum.ln()));
    }
    total.value()
}

/// Score vector and observed information (the negative Hessian of the log
/// partial likelihood) at `b`.
pub fn score_and_hessian<T: Scalar>(view: &CountingProcessView<T>, b: &[T]) -> Result<(Vec<T>, Matrix<T>), CoxError> {
    view.check_coefficients(b)?;
    let e = evaluate(view, b);
    Ok((e.score, e.information))
}

struct Evaluation<T> {
    loglik: T,
    score: Vec<T>,
    information: Matrix<T>,
}

fn evaluate<T: Scalar>(view: &CountingProcessView<T>, b: &[T]) -> Evaluation<T> {
    let p = view.dim;
    let mut loglik = CompensatedSum::new();
    let mut score: Vec<CompensatedSum<T>> = vec![CompensatedSum::new(); p];
    let mut information = Matrix::zeros(p, p);
    for k in 0..view.event_times.len() {
        let c = centered(view, k, b, true);
        let d = T::from_usize_lossy(view.event_counts[k]);
        loglik.add(c.event_lp - d * (c.shift + c.weight_sum.ln()));
        for ((s, &e), &m) in score.iter_mut().zip(&c.event_cov_sum).zip(&c.xbar) {
            s.add(e - d * m);
        }
        information.add_assign(&c.spread.scale(d));
    }
    Evaluation {
        loglik: loglik.value(),
        score: score.iter().map(CompensatedSum::value).collect(),
        information,
    }
}

/// Breslow–Aalen jumps `dΛ̂₀(t_k) = d_k / Σ_{j ∈ R(t_k)} exp(bᵀx_j(t_k))`.
pub fn breslow_baseline<T: Scalar>(view: &CountingProcessView<T>, b: &[T]) -> Result<Vec<BaselineJump<T>>, CoxError> {
    view.check_coefficients(b)?;
    Ok((0..view.event_times.len())
        .map(|k| {
            let c = centered(view, k, b, false);
            let d = T::from_usize_lossy(view.event_counts[k]);
            BaselineJump {
                time: view.event_times[k],
                jump: d * (-c.shift).exp() / c.weight_sum,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineJump<T> {
    pub time: T,
    pub jump: T,
}

/// Risk-set summary at an event time, evaluated at the fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary<T> {
    pub time: T,
    /// `S⁽⁰⁾(t; β̂)`, normalised by the sample size.
    pub s0: T,
    pub xbar: Vec<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions<T> {
    /// Sup-norm score tolerance; `None` picks the precision default
    /// (`1e-8` in double precision).
    pub tolerance: Option<T>,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Any coefficient beyond this magnitude is reported as divergent.
    pub divergence_bound: T,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: None,
            max_iterations: 50,
            max_halvings: 10,
            divergence_bound: T::lit(50.0),
        }
    }
}

/// A fitted proportional-hazards model for one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit<T> {
    pub process: Process,
    pub covariate_names: Vec<String>,
    pub beta_hat: Vec<T>,
    /// Observed information `n·Â` at `beta_hat`.
    pub hessian: Matrix<T>,
    /// Inverse information; rows and columns of aliased covariates are zero.
    pub hessian_inverse: Matrix<T>,
    /// Covariates with no within-risk-set variation, held at zero.
    pub aliased: Vec<bool>,
    pub baseline_jumps: Vec<BaselineJump<T>>,
    pub risk_summaries: Vec<RiskSummary<T>>,
    /// Per view member `∫ {x_i(t) − x̄(t; β̂)} dM̂_i(t)`.
    pub score_residuals: Vec<Vec<T>>,
    pub subject_ids: Vec<String>,
    pub sample_size: usize,
    pub events: usize,
    pub log_likelihood: T,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: T,
}

impl<T: Scalar> CoxFit<T> {
    pub fn dim(&self) -> usize {
        self.beta_hat.len()
    }

    /// `sqrt(diag(I⁻¹))`; NaN for aliased covariates.
    pub fn standard_errors(&self) -> Vec<T> {
        self.hessian_inverse
            .diagonal()
            .into_iter()
            .zip(&self.aliased)
            .map(|(v, &a)| if a { T::nan() } else { v.sqrt() })
            .collect()
    }

    /// `Â⁻¹ = n·I⁻¹`.
    pub fn scaled_information_inverse(&self) -> Matrix<T> {
        self.hessian_inverse.scale(T::from_usize_lossy(self.sample_size))
    }

    /// Cumulative baseline hazard over `(from, to]`.
    pub fn cumulative_baseline(&self, from: T, to: T) -> T {
        self.baseline_jumps
            .iter()
            .filter(|j| j.time > from && j.time <= to)
            .map(|j| j.jump)
            .sum()
    }

    /// Rebuilds every derived quantity at fixed coefficients (e.g. a stored
    /// model) without running Newton-Raphson.
    pub fn evaluate_at(view: &CountingProcessView<T>, beta: &[T]) -> Result<Self, CoxError> {
        view.check_coefficients(beta)?;
        let eval = evaluate(view, beta);
        let aliased = detect_aliased(&eval.information);
        let tol = T::default_score_tolerance(view.total_events());
        let norm = active_norm(&eval.score, &aliased);
        finish(view, beta.to_vec(), eval, aliased, norm <= tol, 0, norm)
    }
}

/// Newton-Raphson with step-halving from `init`.
pub fn fit<T: Scalar>(view: &CountingProcessView<T>, init: &[T]) -> Result<CoxFit<T>, CoxError> {
    fit_with(view, init, &FitOptions::default())
}

pub fn fit_with<T: Scalar>(
    view: &CountingProcessView<T>,
    init: &[T],
    options: &FitOptions<T>,
) -> Result<CoxFit<T>, CoxError> {
    view.check_coefficients(init)?;
    if view.total_events() == 0 {
        return Err(CoxError::NoEvents(view.process));
    }
    let tol = options
        .tolerance
        .unwrap_or_else(|| T::default_score_tolerance(view.total_events()));
    let p = view.dim;
    let mut beta = init.to_vec();
    let aliased = detect_aliased(&evaluate(view, &beta).information);
    for j in 0..p {
        if aliased[j] {
            beta[j] = T::zero();
        }
    }
    let active: Vec<usize> = (0..p).filter(|&j| !aliased[j]).collect();

    let step_tolerance = T::lit(1e-6).max(tol.sqrt());
    let mut iteration = 0;
    loop {
        let eval = evaluate(view, &beta);
        let norm = active_norm(&eval.score, &aliased);
        let chol = eval.information.submatrix(&active).cholesky()?;
        let rhs: Vec<T> = active.iter().map(|&j| eval.score[j]).collect();
        let step = chol.solve(&rhs);
        let step_norm = sup_norm(&step);
        if norm <= tol {
            if step_norm <= step_tolerance {
                return finish(view, beta, eval, aliased, true, iteration, norm);
            }
            // Score is flat but Newton still wants to move: check whether the
            // likelihood keeps rising all the way past the divergence bound.
            let reach = options.divergence_bound * T::lit(2.0) / step_norm;
            let mut probe = beta.clone();
            for (a, &j) in active.iter().enumerate() {
                probe[j] = beta[j] + reach * step[a];
            }
            let slack = T::epsilon() * T::lit(64.0) * (T::one() + eval.loglik.abs());
            if loglik_unchecked(view, &probe) >= eval.loglik - slack {
                let (a, _) =
                    step.iter().enumerate().fold(
                        (0, T::zero()),
                        |best, (a, v)| if v.abs() > best.1 { (a, v.abs()) } else { best },
                    );
                return Err(CoxError::MonotoneLikelihood {
                    coefficient: active[a],
                    value: probe[active[a]].to_f64_lossy(),
                });
            }
        }
        if iteration == options.max_iterations {
            return Err(CoxError::NonConvergence {
                iterations: iteration,
                score_norm: norm.to_f64_lossy(),
            });
        }
        iteration += 1;

        let slack = T::epsilon() * T::lit(64.0) * (T::one() + eval.loglik.abs());
        let mut scale = T::one();
        let mut candidate = beta.clone();
        for halving in 0..=options.max_halvings {
            for (a, &j) in active.iter().enumerate() {
                candidate[j] = beta[j] + scale * step[a];
            }
            let ll = loglik_unchecked(view, &candidate);
            if ll.is_finite() && ll >= eval.loglik - slack {
                break;
            }
            if halving < options.max_halvings {
                scale = scale / T::lit(2.0);
            }
        }
        beta = candidate;
        if let Some((j, v)) = beta
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= options.divergence_bound))
        {
            return Err(CoxError::MonotoneLikelihood {
                coefficient: j,
                value: v.to_f64_lossy(),
            });
        }
    }
}

fn detect_aliased<T: Scalar>(information: &Matrix<T>) -> Vec<bool> {
    let diag = information.diagonal();
    let scale = diag.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let floor = T::epsilon().sqrt() * scale;
    diag.iter().map(|&d| !(d > floor)).collect()
}

fn active_norm<T: Scalar>(score: &[T], aliased: &[bool]) -> T {
    let active: Vec<T> = score
        .iter()
        .zip(aliased)
        .filter(|(_, &a)| !a)
        .map(|(&s, _)| s)
        .collect();
    sup_norm(&active)
}

fn finish<T: Scalar>(
    view: &CountingProcessView<T>,
    beta: Vec<T>,
    eval: Evaluation<T>,
    aliased: Vec<bool>,
    converged: bool,
    iterations: usize,
    final_score_norm: T,
) -> Result<CoxFit<T>, CoxError> {
    let p = view.dim;
    let active: Vec<usize> = (0..p).filter(|&j| !aliased[j]).collect();
    let inverse_active = eval.information.submatrix(&active).cholesky()?.inverse();
    let mut hessian_inverse = Matrix::zeros(p, p);
    for (a, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            hessian_inverse[(i, j)] = inverse_active[(a, c)];
        }
    }

    let n = T::from_usize_lossy(view.sample_size);
    let mut baseline_jumps = Vec::with_capacity(view.event_times.len());
    let mut risk_summaries = Vec::with_capacity(view.event_times.len());
    let mut residuals: Vec<Vec<CompensatedSum<T>>> = vec![vec![CompensatedSum::new(); p]; view.len()];
    for k in 0..view.event_times.len() {
        let c = centered(view, k, &beta, false);
        let d = T::from_usize_lossy(view.event_counts[k]);
        let jump = d * (-c.shift).exp() / c.weight_sum;
        let time = view.event_times[k];
        baseline_jumps.push(BaselineJump { time, jump });
        risk_summaries.push(RiskSummary {
            time,
            s0: c.weight_sum * c.shift.exp() / n,
            xbar: c.xbar.clone(),
        });
        for r in view.risk_set(k) {
            let lp = dot(&beta, r.covariates);
            let compensator = lp.exp() * jump;
            let dm = if r.event { T::one() - compensator } else { -compensator };
            for ((res, &x), &m) in residuals[r.member].iter_mut().zip(r.covariates).zip(&c.xbar) {
                res.add((x - m) * dm);
            }
        }
    }

    Ok(CoxFit {
        process: view.process,
        covariate_names: view.covariate_names.clone(),
        beta_hat: beta,
        hessian: eval.information,
        hessian_inverse,
        aliased,
        baseline_jumps,
        risk_summaries,
        score_residuals: residuals
            .into_iter()
            .map(|r| r.iter().map(CompensatedSum::value).collect())
            .collect(),
        subject_ids: view.ids.clone(),
        sample_size: view.sample_size,
        events: view.total_events(),
        log_likelihood: eval.loglik,
        converged,
        iterations,
        final_score_norm,
    })
}
