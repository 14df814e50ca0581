//! Route plan scores.
//!
//! * budget: time left in the day minus the time the vehicle spends with at
//!   least one passenger on board. Higher means more slack for later trips.
//! * ptt: passenger travel time, the on-board count times segment duration,
//!   summed over segments. Lower is better, so it is negated when ranking.
//!
//! Both sum over consecutive planned stops only; the leg from the plan anchor
//! to the first stop is not counted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RoutePlan, Seconds};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum UtilityError {
    #[error("clock {now} is past the end of the day ({t_max})")]
    DayOver { now: Seconds, t_max: Seconds },
    #[error("unknown metric {0:?} (expected `budget` or `ptt`)")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Budget,
    Ptt,
}

impl FromStr for Metric {
    type Err = UtilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "budget" => Ok(Metric::Budget),
            "ptt" => Ok(Metric::Ptt),
            other => Err(UtilityError::UnknownMetric(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Budget => "budget",
            Metric::Ptt => "ptt",
        })
    }
}

/// The scoring clock: current time and end of day, with `now <= t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Horizon {
    now: Seconds,
    t_max: Seconds,
}

impl Horizon {
    pub fn new(now: Seconds, t_max: Seconds) -> Result<Self, UtilityError> {
        if now > t_max {
            return Err(UtilityError::DayOver { now, t_max });
        }
        Ok(Self { now, t_max })
    }

    /// Clamps `now` to `t_max`. Used inside lookahead, where sampled futures
    /// may run to the last second of the day.
    pub fn clamped(now: Seconds, t_max: Seconds) -> Self {
        Self {
            now: now.min(t_max),
            t_max,
        }
    }

    pub fn now(&self) -> Seconds {
        self.now
    }

    pub fn t_max(&self) -> Seconds {
        self.t_max
    }
}

fn occupied_time(plan: &RoutePlan) -> Seconds {
    plan.stops
        .windows(2)
        .filter(|w| w[0].load > 0)
        .map(|w| w[1].arrival - w[0].arrival)
        .sum()
}

pub fn budget(plan: &RoutePlan, horizon: &Horizon) -> Seconds {
    horizon.t_max - horizon.now - occupied_time(plan)
}

/// Budget utility at time `t`; errors once the day is over.
pub fn budget_utility(plan: &RoutePlan, t: Seconds, t_max: Seconds) -> Result<Seconds, UtilityError> {
    Ok(budget(plan, &Horizon::new(t, t_max)?))
}

/// Passenger travel time in passenger-seconds.
pub fn ptt_utility(plan: &RoutePlan) -> i64 {
    plan.stops
        .windows(2)
        .map(|w| i64::from(w[0].load) * (w[1].arrival - w[0].arrival))
        .sum()
}

impl Metric {
    /// Higher-is-better score of one plan.
    #[inline]
    pub fn score_plan(self, plan: &RoutePlan, horizon: &Horizon) -> i64 {
        match self {
            Metric::Budget => budget(plan, horizon),
            Metric::Ptt => -ptt_utility(plan),
        }
    }
}

pub fn score(metric: Metric, plan: &RoutePlan, t: Seconds, t_max: Seconds) -> Result<i64, UtilityError> {
    Ok(metric.score_plan(plan, &Horizon::new(t, t_max)?))
}
