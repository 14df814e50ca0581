//! Insertion heuristic for pickup and delivery with time windows.
//!
//! A new trip is inserted into an existing plan by placing its pickup before
//! original stop `i` and its dropoff before original stop `j` (`i <= j`,
//! both in `0..=n`). Existing stops are never reordered.
//!
//! Enumeration walks the plan incrementally and stops early: arrivals only
//! move later when stops are inserted, so once an original stop misses its
//! `latest` (or the extra passenger overflows capacity) every later dropoff
//! position for the same pickup fails too. The suffix after the dropoff is
//! skipped as soon as its arrival realigns with the original annotation.

use serde::{Deserialize, Serialize};

use crate::model::{Constraints, RoutePlan, Stop, Trip};
use crate::network::TravelMatrix;
use crate::utility::{Horizon, Metric};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionCandidate {
    pub pickup_index: usize,
    pub dropoff_index: usize,
    pub plan: RoutePlan,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoredCandidate {
    pub candidate: InsertionCandidate,
    pub utility: i64,
}

/// The stop sequence for insertion point `(i, j)`; not annotated.
pub fn insert_at(plan: &RoutePlan, trip: &Trip, i: usize, j: usize, t_max: i64) -> RoutePlan {
    debug_assert!(i <= j && j <= plan.stops.len());
    let mut stops = Vec::with_capacity(plan.stops.len() + 2);
    stops.extend_from_slice(&plan.stops[..i]);
    stops.push(Stop::pickup(trip, t_max));
    stops.extend_from_slice(&plan.stops[i..j]);
    stops.push(Stop::dropoff(trip));
    stops.extend_from_slice(&plan.stops[j..]);
    RoutePlan {
        stops,
        ..plan.clone()
    }
}

/// Every feasible `(i, j)` insertion point in lexicographic order.
///
/// `plan` must be annotated against `matrix` and feasible.
pub fn feasible_points(plan: &RoutePlan, trip: &Trip, matrix: &TravelMatrix, limits: &Constraints) -> Vec<(usize, usize)> {
    let stops = &plan.stops;
    let n = stops.len();
    let cap = limits.capacity as i32;
    let mut points = Vec::new();

    for i in 0..=n {
        // state just before the pickup
        let (mut at, mut time, load_before) = if i == 0 {
            (plan.origin, plan.departure, plan.initial_load as i32)
        } else {
            let s = &stops[i - 1];
            (s.location, s.arrival, s.load)
        };
        if load_before + 1 > cap {
            continue;
        }
        time = (time + matrix.tt(at, trip.pickup)).max(trip.earliest_pickup);
        if time > limits.t_max {
            continue;
        }
        at = trip.pickup;

        // walk j from i to n; stops[i..j] carry the extra passenger
        for j in i..=n {
            if j > i {
                let s = &stops[j - 1];
                time = (time + matrix.tt(at, s.location)).max(s.earliest);
                if time > s.latest || s.load + 1 > cap {
                    break;
                }
                at = s.location;
            }
            let drop_time = (time + matrix.tt(at, trip.dropoff)).max(crate::model::DAY_START);
            if drop_time > trip.latest_dropoff {
                continue;
            }
            if suffix_feasible(stops, j, trip.dropoff, drop_time, matrix) {
                points.push((i, j));
            }
        }
    }
    points
}

fn suffix_feasible(stops: &[Stop], from: usize, mut at: crate::model::LocationId, mut time: i64, matrix: &TravelMatrix) -> bool {
    for s in &stops[from..] {
        time = (time + matrix.tt(at, s.location)).max(s.earliest);
        if time == s.arrival {
            // realigned with the original (feasible) annotation
            return true;
        }
        if time > s.latest {
            return false;
        }
        at = s.location;
    }
    true
}

/// Every feasible insertion of `trip` into `plan`, as annotated plans.
pub fn feasible_plans(plan: &RoutePlan, trip: &Trip, matrix: &TravelMatrix, limits: &Constraints) -> Vec<InsertionCandidate> {
    feasible_points(plan, trip, matrix, limits)
        .into_iter()
        .map(|(i, j)| InsertionCandidate {
            pickup_index: i,
            dropoff_index: j,
            plan: insert_at(plan, trip, i, j, limits.t_max).annotated(matrix),
        })
        .collect()
}

/// Highest-utility feasible insertion; ties go to the lowest `(i, j)`.
pub fn best_feasible_plan(
    plan: &RoutePlan,
    trip: &Trip,
    matrix: &TravelMatrix,
    limits: &Constraints,
    metric: Metric,
    horizon: &Horizon,
) -> Option<ScoredCandidate> {
    let mut best: Option<ScoredCandidate> = None;
    for candidate in feasible_plans(plan, trip, matrix, limits) {
        let utility = metric.score_plan(&candidate.plan, horizon);
        if best.as_ref().is_none_or(|b| utility > b.utility) {
            best = Some(ScoredCandidate { candidate, utility });
        }
    }
    best
}
