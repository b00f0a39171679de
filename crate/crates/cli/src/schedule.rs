//! Pay schedules for the compensation calculation.

use serde::{Deserialize, Serialize};

use semicomp::io::TimeValue;
use semicomp::prediction::{integrate_on_grid, merged_grid};

use crate::CliError;

/// Pay rates per unit of duration in the three states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rates {
    pub wage_lower: f64,
    pub wage_higher: f64,
    pub pension: f64,
}

impl Rates {
    fn is_valid(&self) -> bool {
        [self.wage_lower, self.wage_higher, self.pension]
            .iter()
            .all(|r| r.is_finite() && *r >= 0.0)
    }

    /// Rate-weighted sum of state durations or probabilities.
    pub fn weigh(&self, lt: f64, cap: f64, rt: f64) -> f64 {
        self.wage_lower * lt + self.wage_higher * cap + self.pension * rt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSegment {
    pub start: TimeValue,
    #[serde(flatten)]
    pub rates: Rates,
}

/// Either one set of constant rates or rates changing at given times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CompensationSchedule {
    Constant(Rates),
    Piecewise {
        /// `YYYY-MM-DD` reference for date-valued segment starts.
        #[serde(default)]
        epoch: Option<String>,
        segments: Vec<RateSegment>,
    },
}

/// A validated piecewise schedule on the data's time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSchedule {
    pub starts: Vec<f64>,
    pub rates: Vec<Rates>,
}

/// One point of a state-probability step function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub time: f64,
    pub p_lt: f64,
    pub p_cap: f64,
    pub p_rt: f64,
}

impl CompensationSchedule {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let schedule: Self = serde_json::from_str(text).map_err(|e| {
            CliError::Schedule(format!(
                "{e} (expected {{wage_lower, wage_higher, pension}} or {{segments: [{{start, wage_lower, wage_higher, pension}}]}})"
            ))
        })?;
        schedule.resolve()?;
        Ok(schedule)
    }

    /// Constant rates, or `None` for a piecewise schedule.
    pub fn constant(&self) -> Option<Rates> {
        match self {
            Self::Constant(r) => Some(*r),
            Self::Piecewise { .. } => None,
        }
    }

    /// Segment starts in data time, checked strictly increasing with
    /// non-negative rates. A constant schedule starts at `-inf`.
    pub fn resolve(&self) -> Result<ResolvedSchedule, CliError> {
        let (starts, rates) = match self {
            Self::Constant(r) => (vec![f64::NEG_INFINITY], vec![*r]),
            Self::Piecewise { epoch, segments } => {
                let epoch = epoch
                    .as_deref()
                    .map(|e| {
                        chrono::NaiveDate::parse_from_str(e, "%Y-%m-%d")
                            .map_err(|err| CliError::Schedule(format!("epoch `{e}`: {err}")))
                    })
                    .transpose()?;
                let starts = segments
                    .iter()
                    .map(|s| s.start.resolve(epoch).map_err(CliError::Schedule))
                    .collect::<Result<Vec<_>, _>>()?;
                (starts, segments.iter().map(|s| s.rates).collect())
            }
        };
        if starts.is_empty() {
            return Err(CliError::Schedule("no segments".into()));
        }
        if let Some(k) = starts.windows(2).position(|w| w[1] <= w[0]) {
            return Err(CliError::Schedule(format!(
                "segment {} does not start after segment {k}",
                k + 1
            )));
        }
        if let Some(k) = rates.iter().position(|r| !r.is_valid()) {
            return Err(CliError::Schedule(format!(
                "segment {k} has a negative or non-finite rate"
            )));
        }
        Ok(ResolvedSchedule { starts, rates })
    }
}

impl ResolvedSchedule {
    pub fn rates_at(&self, t: f64) -> &Rates {
        let k = self.starts.partition_point(|&s| s <= t);
        &self.rates[k.saturating_sub(1)]
    }

    /// `∫ {w_lt p_lt + w_cap p_cap + pension p_rt} dt` over the span of
    /// `curve`, exact for the step functions involved.
    pub fn integrate(&self, curve: &[CurvePoint]) -> Result<f64, CliError> {
        let (Some(first), Some(last)) = (curve.first(), curve.last()) else {
            return Err(CliError::Schedule("empty probability curve".into()));
        };
        if self.starts[0] > first.time {
            return Err(CliError::Schedule(format!(
                "schedule starts at {} but the window starts at {}",
                self.starts[0], first.time
            )));
        }
        let grid = merged_grid(
            first.time,
            last.time,
            curve.iter().map(|p| p.time).chain(self.starts.iter().copied()),
        );
        Ok(integrate_on_grid(&grid, |t| {
            let k = curve.partition_point(|p| p.time <= t).saturating_sub(1);
            let p = &curve[k];
            self.rates_at(t).weigh(p.p_lt, p.p_cap, p.p_rt)
        }))
    }
}
