//! Small random single-process datasets for checking the fitting code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{CovariateTrajectory, Dataset, ProcessObservation, SubjectRecord};

/// Shape of a random promotion-only instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub dim: usize,
    /// Maximum covariate segments per subject (1 = time-fixed).
    pub max_segments: usize,
    /// Round times to this grid to create ties (0 = continuous).
    pub time_grid: f64,
    pub event_probability: f64,
}

/// A random delayed-entry dataset with at least one event and at least two
/// subjects at risk at the first event.
pub fn random_instance(spec: &InstanceSpec, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let ds = draw(spec, &mut rng);
        if ds.subjects.iter().any(|s| s.promotion.is_some_and(|o| o.event)) {
            return ds;
        }
    }
}

fn snap(t: f64, grid: f64) -> f64 {
    if grid > 0.0 {
        (t / grid).round() * grid
    } else {
        t
    }
}

fn draw(spec: &InstanceSpec, rng: &mut ChaCha8Rng) -> Dataset<f64> {
    let subjects = (0..spec.n)
        .map(|i| {
            let entry = snap(rng.random_range(0.0..2.0), spec.time_grid);
            let exit = entry + snap(rng.random_range(0.05..5.0), spec.time_grid).max(spec.time_grid.max(0.05));
            let event = rng.random_bool(spec.event_probability);
            let k = rng.random_range(1..=spec.max_segments.max(1));
            let mut starts = vec![entry];
            for _ in 1..k {
                let s = snap(rng.random_range(entry..exit), spec.time_grid);
                if s > *starts.last().unwrap() {
                    starts.push(s);
                }
            }
            let base: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(rng)).collect();
            let segments = starts
                .into_iter()
                .enumerate()
                .map(|(j, s)| {
                    let values = base
                        .iter()
                        .map(|&b| {
                            let drift: f64 = StandardNormal.sample(rng);
                            b + if j == 0 { 0.0 } else { 0.5 * drift }
                        })
                        .collect();
                    (s, values)
                })
                .collect();
            SubjectRecord {
                id: format!("s{i}"),
                promotion: Some(ProcessObservation::new(entry, exit, event)),
                retirement: None,
                x_traj: CovariateTrajectory::new(spec.dim, segments).expect("increasing starts"),
                z_traj: CovariateTrajectory::empty(0),
                protected_flag: false,
            }
        })
        .collect();
    Dataset {
        subjects,
        promo_covariate_names: (0..spec.dim).map(|j| format!("x{}", j + 1)).collect(),
        retire_covariate_names: Vec::new(),
        protected_column: String::new(),
    }
}

/// Maximizer of `f` over `[lo, hi]` on a grid of spacing `step`.
pub fn grid_search_max(lo: f64, hi: f64, step: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let points = ((hi - lo) / step).round() as usize;
    let mut best = (lo, f(lo));
    for k in 1..=points {
        let b = lo + k as f64 * step;
        let v = f(b);
        if v > best.1 {
            best = (b, v);
        }
    }
    best
}
