//! Influence-function standard errors for the restricted mean durations.
//!
//! For a target subject with counterfactual covariates, each sample subject
//! `i` contributes an influence path `ξ_i(t)` built from its score residual
//! (through `β̂`) and its martingale increments (through `Λ̂₀`), for both
//! processes. The variance of `n^{1/2}(Ê − E)` is estimated by the sample
//! mean of `(∫ ξ_i dt)²`.
//!
//! Two routes compute `∫ ξ_i dt`: [`InfluenceEngine::xi_functions`] builds the
//! four step functions on the merged grid and integrates them, while
//! [`InfluenceEngine::row`] collapses the time integrals into per-event-time
//! kernels first. They agree to rounding and the tests hold them to it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{CountingProcessView, CoxError, CoxFit};
use crate::data::{CovariateTrajectory, Process};
use crate::linalg::{dot, Matrix};
use crate::prediction::{PredictionError, State, StateDurations, SurvivalCurve, TargetContext};
use crate::scalar::{CompensatedSum, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VarianceError {
    #[error(transparent)]
    Fit(#[from] CoxError),
    #[error(transparent)]
    Prediction(#[from] PredictionError),
    #[error("{process} fit does not match its view ({detail})")]
    FitViewMismatch { process: Process, detail: String },
}

/// `dM_i(u) = dN_i(u) − Y_i(u)·exp(β̂ᵀx_i(u))·dΛ̂₀(u)` at every baseline jump
/// where member `i` is at risk (the increment is zero elsewhere).
pub fn martingale_increments<T: Scalar>(
    view: &CountingProcessView<T>,
    fit: &CoxFit<T>,
) -> Result<Vec<Vec<(T, T)>>, VarianceError> {
    check_pair(view, fit)?;
    let mut out = vec![Vec::new(); view.len()];
    for (k, jump) in fit.baseline_jumps.iter().enumerate() {
        for r in view.risk_set(k) {
            let compensator = dot(&fit.beta_hat, r.covariates).exp() * jump.jump;
            let dn = if r.event { T::one() } else { T::zero() };
            out[r.member].push((jump.time, dn - compensator));
        }
    }
    Ok(out)
}

fn check_pair<T: Scalar>(view: &CountingProcessView<T>, fit: &CoxFit<T>) -> Result<(), VarianceError> {
    let mismatch = |detail: String| VarianceError::FitViewMismatch {
        process: view.process(),
        detail,
    };
    if fit.process != view.process() {
        return Err(mismatch(format!("fit is for the {} process", fit.process)));
    }
    if fit.baseline_jumps.len() != view.event_times().len() || fit.risk_summaries.len() != fit.baseline_jumps.len() {
        return Err(mismatch("event times differ".into()));
    }
    if fit.score_residuals.len() != view.len() || fit.sample_size != view.sample_size() {
        return Err(mismatch("subjects differ".into()));
    }
    if fit.dim() != view.dim() {
        return Err(mismatch("covariate dimension differs".into()));
    }
    Ok(())
}

/// Window integrals of one sample subject's influence, split by source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRow<T> {
    pub subject_id: String,
    /// Coefficient (`ξ_{i1}`) contribution per state, ordered lt, cap, rt.
    pub promotion_coefficient: [T; 3],
    /// Baseline (`ξ_{i2}`) contribution per state.
    pub promotion_baseline: [T; 3],
    pub retirement_coefficient: [T; 3],
    pub retirement_baseline: [T; 3],
}

impl<T: Scalar> InfluenceRow<T> {
    /// `∫ ξ_i(t) dt` for `state`.
    pub fn integral(&self, state: State) -> T {
        let s = state_index(state);
        self.promotion_coefficient[s]
            + self.promotion_baseline[s]
            + self.retirement_coefficient[s]
            + self.retirement_baseline[s]
    }
}

fn state_index(state: State) -> usize {
    match state {
        State::Lt => 0,
        State::Cap => 1,
        State::Rt => 2,
    }
}

/// The four influence paths for one sample subject, as step functions on
/// the target's merged grid (value on `[grid[j], grid[j+1])` at index `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct XiFunctions<T> {
    pub grid: Vec<T>,
    pub xi1_p: Vec<T>,
    pub xi2_p: Vec<T>,
    pub xi1_r: Vec<T>,
    pub xi2_r: Vec<T>,
    sp: Vec<T>,
    sr: Vec<T>,
}

impl<T: Scalar> XiFunctions<T> {
    /// Combined `ξ_i(t)` for `state` at grid index `j`.
    pub fn combined(&self, state: State, j: usize) -> T {
        let phi_p = self.xi1_p[j] + self.xi2_p[j];
        let phi_r = self.xi1_r[j] + self.xi2_r[j];
        let (sp, sr) = (self.sp[j], self.sr[j]);
        match state {
            State::Cap => -sr * phi_p + (T::one() - sp) * phi_r,
            State::Lt => sr * phi_p + sp * phi_r,
            State::Rt => -phi_r,
        }
    }

    pub fn integral(&self, state: State) -> T {
        let mut acc = CompensatedSum::new();
        for j in 0..self.grid.len().saturating_sub(1) {
            acc.add((self.grid[j + 1] - self.grid[j]) * self.combined(state, j));
        }
        acc.value()
    }
}

/// Target-specific quantities for one process.
struct ProcessSide<'a, T> {
    fit: &'a CoxFit<T>,
    /// Dataset index → view member.
    member_of: Vec<Option<usize>>,
    increments: Vec<Vec<(T, T)>>,
    /// `Â⁻¹`.
    a_inverse: Matrix<T>,
    /// Per baseline jump: `h(u) = e^{β̂ᵀx̃(u)} (x̃(u) − x̄(u)) dΛ̂₀(u)` if the
    /// target accrues hazard at `u`, else `None`.
    h: Vec<Option<Vec<T>>>,
    /// Per baseline jump: `e^{β̂ᵀx̃(u)} / S⁽⁰⁾(u)` (zero where the target is not accruing).
    c: Vec<T>,
    /// Per state: `G = Σ_u h(u) Ω(u)`.
    g: [Vec<T>; 3],
    /// Per state and baseline jump: `c(u) Ω(u)`.
    k: [Vec<T>; 3],
    entry: Option<T>,
    curve: &'a SurvivalCurve<T>,
}

impl<'a, T: Scalar> ProcessSide<'a, T> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        view: &CountingProcessView<T>,
        fit: &'a CoxFit<T>,
        traj: &CovariateTrajectory<T>,
        entry: Option<T>,
        curve: &'a SurvivalCurve<T>,
        ctx: &TargetContext<T>,
        omega: [&dyn Fn(T, T) -> T; 3],
    ) -> Result<Self, VarianceError> {
        check_pair(view, fit)?;
        let n = view.sample_size();
        let mut member_of = vec![None; n];
        for m in 0..view.len() {
            member_of[view.dataset_index(m)] = Some(m);
        }
        let increments = martingale_increments(view, fit)?;
        let p = fit.dim();

        // Suffix integrals of each state's weight over the grid.
        let grid = &ctx.grid;
        let cells = grid.len() - 1;
        let mut suffix = [
            vec![T::zero(); cells + 1],
            vec![T::zero(); cells + 1],
            vec![T::zero(); cells + 1],
        ];
        for j in (0..cells).rev() {
            let dt = grid[j + 1] - grid[j];
            let sp = ctx.promotion_curve.eval(grid[j]);
            let sr = ctx.retirement_curve.eval(grid[j]);
            for s in 0..3 {
                suffix[s][j] = suffix[s][j + 1] + dt * omega[s](sp, sr);
            }
        }
        let omega_at = |s: usize, u: T| -> T {
            if u <= ctx.start {
                suffix[s][0]
            } else if u >= ctx.window.tau1 {
                T::zero()
            } else {
                let j = grid.partition_point(|&g| g < u);
                debug_assert!(grid[j] == u, "jump time missing from grid");
                suffix[s][j]
            }
        };

        let jumps = fit.baseline_jumps.len();
        let mut h = vec![None; jumps];
        let mut c = vec![T::zero(); jumps];
        let mut g = [vec![T::zero(); p], vec![T::zero(); p], vec![T::zero(); p]];
        let mut k = [vec![T::zero(); jumps], vec![T::zero(); jumps], vec![T::zero(); jumps]];
        if let Some(entry) = entry {
            for (idx, (jump, summary)) in fit.baseline_jumps.iter().zip(&fit.risk_summaries).enumerate() {
                let u = jump.time;
                if u <= entry || u > ctx.window.tau1 {
                    continue;
                }
                let x = traj.evaluate(u).map_err(|source| PredictionError::TrajectoryDomain {
                    process: fit.process,
                    source,
                })?;
                let risk = dot(&fit.beta_hat, x).exp();
                let hu: Vec<T> = x
                    .iter()
                    .zip(&summary.xbar)
                    .map(|(&xj, &mj)| risk * (xj - mj) * jump.jump)
                    .collect();
                c[idx] = risk / summary.s0;
                for s in 0..3 {
                    let w = omega_at(s, u);
                    for j in 0..p {
                        g[s][j] = g[s][j] + hu[j] * w;
                    }
                    k[s][idx] = c[idx] * w;
                }
                h[idx] = Some(hu);
            }
        }
        Ok(Self {
            fit,
            member_of,
            increments,
            a_inverse: fit.scaled_information_inverse(),
            h,
            c,
            g,
            k,
            entry,
            curve,
        })
    }

    fn coefficient_direction(&self, member: usize) -> Vec<T> {
        self.a_inverse.mul_vec(&self.fit.score_residuals[member])
    }

    /// (coefficient part, baseline part) per state for dataset subject `i`.
    fn integrals(&self, i: usize) -> ([T; 3], [T; 3]) {
        let zero = [T::zero(); 3];
        let Some(member) = self.member_of[i] else {
            return (zero, zero);
        };
        if self.entry.is_none() {
            return (zero, zero);
        }
        let v = self.coefficient_direction(member);
        let mut coef = zero;
        let mut base = zero;
        for s in 0..3 {
            coef[s] = dot(&self.g[s], &v);
            let mut acc = CompensatedSum::new();
            let mut idx = 0;
            for &(u, dm) in &self.increments[member] {
                while self.fit.baseline_jumps[idx].time < u {
                    idx += 1;
                }
                acc.add(self.k[s][idx] * dm);
            }
            base[s] = acc.value();
        }
        (coef, base)
    }

    /// `(ξ_{i1}(g), ξ_{i2}(g))` at each grid point, built directly.
    fn paths(&self, i: usize, grid: &[T]) -> (Vec<T>, Vec<T>) {
        let zeros = vec![T::zero(); grid.len()];
        let (Some(member), Some(_)) = (self.member_of[i], self.entry) else {
            return (zeros.clone(), zeros);
        };
        let v = self.coefficient_direction(member);
        let dm_at = |u: T| -> T {
            self.increments[member]
                .iter()
                .find(|&&(t, _)| t == u)
                .map_or(T::zero(), |&(_, dm)| dm)
        };
        let mut xi1 = Vec::with_capacity(grid.len());
        let mut xi2 = Vec::with_capacity(grid.len());
        for &t in grid {
            let mut hsum = vec![T::zero(); v.len()];
            let mut msum = T::zero();
            for (idx, jump) in self.fit.baseline_jumps.iter().enumerate() {
                if jump.time > t {
                    break;
                }
                if let Some(hu) = &self.h[idx] {
                    for (a, &b) in hsum.iter_mut().zip(hu) {
                        *a = *a + b;
                    }
                    msum = msum + self.c[idx] * dm_at(jump.time);
                }
            }
            let s = self.curve.eval(t);
            xi1.push(-s * dot(&hsum, &v));
            xi2.push(-s * msum);
        }
        (xi1, xi2)
    }
}

/// Influence decomposition of one target's restricted means over a sample.
pub struct InfluenceEngine<'a, T> {
    ctx: &'a TargetContext<T>,
    promotion: ProcessSide<'a, T>,
    retirement: ProcessSide<'a, T>,
    ids: Vec<String>,
}

impl<'a, T: Scalar> InfluenceEngine<'a, T> {
    /// `ids` are the dataset subject ids in dataset order.
    pub fn new(
        ctx: &'a TargetContext<T>,
        fit_p: &'a CoxFit<T>,
        view_p: &CountingProcessView<T>,
        fit_r: &'a CoxFit<T>,
        view_r: &CountingProcessView<T>,
        ids: Vec<String>,
    ) -> Result<Self, VarianceError> {
        if view_p.sample_size() != view_r.sample_size() || ids.len() != view_p.sample_size() {
            return Err(VarianceError::FitViewMismatch {
                process: Process::Retirement,
                detail: "views come from different datasets".into(),
            });
        }
        let one = T::one();
        let promotion = ProcessSide::new(
            view_p,
            fit_p,
            &ctx.x_counterfactual,
            Some(ctx.promotion_entry),
            &ctx.promotion_curve,
            ctx,
            [&|sp, sr| -(sr * sp), &|sp, sr| sr * sp, &|_, _| T::zero()],
        )?;
        // retirement contributes only if the target can retire inside the window
        let r_entry = ctx.retirement_entry.filter(|&r1| r1 < ctx.window.tau1);
        let retirement = ProcessSide::new(
            view_r,
            fit_r,
            &ctx.z_counterfactual,
            r_entry,
            &ctx.retirement_curve,
            ctx,
            [&|sp, sr| -(sp * sr), &move |sp, sr| -((one - sp) * sr), &|_, sr| sr],
        )?;
        Ok(Self {
            ctx,
            promotion,
            retirement,
            ids,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.ids.len()
    }

    /// Influence row for dataset subject `i`.
    pub fn row(&self, i: usize) -> InfluenceRow<T> {
        let (pc, pb) = self.promotion.integrals(i);
        let (rc, rb) = self.retirement.integrals(i);
        InfluenceRow {
            subject_id: self.ids[i].clone(),
            promotion_coefficient: pc,
            promotion_baseline: pb,
            retirement_coefficient: rc,
            retirement_baseline: rb,
        }
    }

    /// Rows for every sample subject, in dataset order.
    pub fn rows(&self) -> Vec<InfluenceRow<T>> {
        (0..self.sample_size()).into_par_iter().map(|i| self.row(i)).collect()
    }

    /// The four influence paths of subject `i` evaluated on the target grid.
    pub fn xi_functions(&self, i: usize) -> XiFunctions<T> {
        let grid = self.ctx.grid.clone();
        let (xi1_p, xi2_p) = self.promotion.paths(i, &grid);
        let (xi1_r, xi2_r) = self.retirement.paths(i, &grid);
        let sp = grid.iter().map(|&t| self.ctx.promotion_curve.eval(t)).collect();
        let sr = grid.iter().map(|&t| self.ctx.retirement_curve.eval(t)).collect();
        XiFunctions {
            grid,
            xi1_p,
            xi2_p,
            xi1_r,
            xi2_r,
            sp,
            sr,
        }
    }

    /// Standard errors ordered lt, cap, rt.
    pub fn standard_errors(&self) -> [T; 3] {
        let rows = self.rows();
        let n = self.sample_size();
        State::ALL.map(|state| {
            let integrals: Vec<T> = rows.iter().map(|r| r.integral(state)).collect();
            restricted_mean_se(&integrals, n)
        })
    }

    pub fn fill_standard_errors(&self, durations: &mut StateDurations<T>) {
        let se = self.standard_errors();
        for (state, se) in State::ALL.into_iter().zip(se) {
            durations.get_mut(state).std_error = Some(se);
        }
    }
}

/// `sqrt(n⁻¹ · n⁻¹ Σ_i (∫ξ_i dt)²)`.
pub fn restricted_mean_se<T: Scalar>(integrals: &[T], n: usize) -> T {
    let n = T::from_usize_lossy(n);
    let second_moment = integrals.iter().map(|&v| v * v).collect::<CompensatedSum<T>>().value() / n;
    (second_moment / n).sqrt()
}

/// Estimates and standard errors for one target in one call.
pub fn predict_with_se<T: Scalar>(
    ctx: &TargetContext<T>,
    fit_p: &CoxFit<T>,
    view_p: &CountingProcessView<T>,
    fit_r: &CoxFit<T>,
    view_r: &CountingProcessView<T>,
    ids: Vec<String>,
) -> Result<StateDurations<T>, VarianceError> {
    let mut durations = ctx.restricted_means();
    InfluenceEngine::new(ctx, fit_p, view_p, fit_r, view_r, ids)?.fill_standard_errors(&mut durations);
    Ok(durations)
}
