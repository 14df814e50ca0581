//! Request-vehicle (RV) and vehicle-vehicle (VV) graphs, and the greedy
//! independent-set construction that turns them into fleet actions.
//!
//! An RV edge is one feasible insertion of the incoming request into one
//! vehicle's plan; a vehicle may have several. A VV edge is the single best
//! transfer of one not-yet-picked-up request between a pair of vehicles.
//! Each generated action uses exactly one RV edge plus VV edges that share
//! no vehicle with each other or with the serving vehicle, so every vehicle's
//! plan in the action was checked for feasibility on its own.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::insertion::{best_feasible_plan, feasible_plans, InsertionCandidate};
use crate::model::{Action, FleetState, Request, RequestId, RoutePlan, Swap, VehicleId};
use crate::network::TravelMatrix;
use crate::utility::{Horizon, Metric};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RvEdge {
    pub vehicle: VehicleId,
    /// Position among this vehicle's feasible insertions.
    pub ordinal: usize,
    pub candidate: InsertionCandidate,
    pub utility: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RvGraph {
    pub request: RequestId,
    pub fleet_size: usize,
    /// Ordered by vehicle, then ordinal.
    pub edges: Vec<RvEdge>,
}

impl RvGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn degree(&self, vehicle: VehicleId) -> usize {
        self.edges.iter().filter(|e| e.vehicle == vehicle).count()
    }

    /// Highest-utility edge, first in edge order on ties.
    pub fn best_edge(&self) -> Option<&RvEdge> {
        self.edges.iter().fold(None, |best: Option<&RvEdge>, e| match best {
            Some(b) if b.utility >= e.utility => Some(b),
            _ => Some(e),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VvEdge {
    /// Donor vehicle.
    pub from: VehicleId,
    /// Recipient vehicle.
    pub to: VehicleId,
    pub request: RequestId,
    pub from_plan: RoutePlan,
    pub to_plan: RoutePlan,
    pub utility: i64,
}

impl VvEdge {
    fn touches(&self, v: VehicleId) -> bool {
        self.from == v || self.to == v
    }

    fn key(&self) -> (VehicleId, VehicleId, RequestId) {
        (self.from, self.to, self.request)
    }

    fn beats(&self, other: &VvEdge) -> bool {
        self.utility > other.utility || (self.utility == other.utility && self.key() < other.key())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VvGraph {
    /// At most one edge per unordered vehicle pair, ordered by pair.
    pub edges: Vec<VvEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredAction {
    pub action: Action,
    /// RV edge utility plus the utilities of the swaps applied with it.
    pub utility: i64,
}

fn horizon(state: &FleetState) -> Horizon {
    Horizon::clamped(state.now, state.constraints.t_max)
}

pub fn build_rv_graph(state: &FleetState, request: &Request, matrix: &TravelMatrix, metric: Metric) -> RvGraph {
    let trip = request.trip();
    let horizon = horizon(state);
    let mut edges = Vec::new();
    for v in &state.vehicles {
        for (ordinal, candidate) in feasible_plans(&v.plan, &trip, matrix, &state.constraints)
            .into_iter()
            .enumerate()
        {
            let utility = metric.score_plan(&candidate.plan, &horizon);
            edges.push(RvEdge {
                vehicle: v.id,
                ordinal,
                candidate,
                utility,
            });
        }
    }
    RvGraph {
        request: request.id,
        fleet_size: state.fleet_size(),
        edges,
    }
}

/// Best single-request transfer for every vehicle pair. Swap utility is the
/// change in the two plans' summed scores.
pub fn build_vv_graph(state: &FleetState, matrix: &TravelMatrix, metric: Metric) -> VvGraph {
    let horizon = horizon(state);
    let limits = &state.constraints;
    let base: Vec<i64> = state
        .vehicles
        .iter()
        .map(|v| metric.score_plan(&v.plan, &horizon))
        .collect();
    // donor side depends only on (donor, request)
    let donors: Vec<Vec<(RequestId, RoutePlan, i64)>> = state
        .vehicles
        .iter()
        .map(|v| {
            let mut ids = v.plan.unpicked();
            ids.sort();
            ids.into_iter()
                .filter(|r| !v.onboard.contains(r))
                .map(|r| {
                    let after = v.plan.without(r, matrix);
                    let score = metric.score_plan(&after, &horizon);
                    (r, after, score)
                })
                .filter(|(_, after, _)| after.is_feasible(limits.capacity))
                .collect()
        })
        .collect();

    let mut edges = Vec::new();
    let n = state.fleet_size();
    for a in 0..n {
        for b in a + 1..n {
            let mut best: Option<VvEdge> = None;
            for (donor, recipient) in [(a, b), (b, a)] {
                let to_plan = &state.vehicles[recipient].plan;
                for (request, from_plan, donor_score) in &donors[donor] {
                    let trip = state.vehicles[donor]
                        .plan
                        .trip_of(*request)
                        .expect("unpicked request has both stops");
                    let Some(ins) = best_feasible_plan(to_plan, &trip, matrix, limits, metric, &horizon) else {
                        continue;
                    };
                    let edge = VvEdge {
                        from: VehicleId(donor as u32),
                        to: VehicleId(recipient as u32),
                        request: *request,
                        utility: donor_score + ins.utility - base[donor] - base[recipient],
                        from_plan: from_plan.clone(),
                        to_plan: ins.candidate.plan,
                    };
                    if best.as_ref().is_none_or(|b| edge.beats(b)) {
                        best = Some(edge);
                    }
                }
            }
            edges.extend(best);
        }
    }
    VvGraph { edges }
}

/// For every RV edge, record the bare action, then greedily add the best
/// remaining swap that avoids every vehicle already used, recording each
/// extension. Returns the `k_max` highest-utility actions (stable on ties).
pub fn select_actions(rv: &RvGraph, vv: &VvGraph, k_max: usize) -> Vec<ScoredAction> {
    let mut recorded = Vec::new();
    for edge in &rv.edges {
        let mut plans = vec![edge.candidate.plan.clone()];
        let mut swaps = Vec::new();
        let mut utility = edge.utility;
        let mut used = vec![edge.vehicle];
        let push = |plans: &Vec<RoutePlan>, swaps: &Vec<Swap>, utility, out: &mut Vec<ScoredAction>| {
            let mut plans = plans.clone();
            plans.sort_by_key(|p| p.vehicle);
            out.push(ScoredAction {
                action: Action {
                    serving: Some(edge.vehicle),
                    plans,
                    swaps: swaps.clone(),
                },
                utility,
            });
        };
        push(&plans, &swaps, utility, &mut recorded);
        loop {
            let next = vv
                .edges
                .iter()
                .filter(|e| !used.iter().any(|&v| e.touches(v)))
                .fold(None, |best: Option<&VvEdge>, e| match best {
                    Some(b) if !e.beats(b) => Some(b),
                    _ => Some(e),
                });
            let Some(swap) = next else { break };
            plans.push(swap.from_plan.clone());
            plans.push(swap.to_plan.clone());
            swaps.push(Swap {
                request: swap.request,
                from: swap.from,
                to: swap.to,
            });
            utility += swap.utility;
            used.extend([swap.from, swap.to]);
            push(&plans, &swaps, utility, &mut recorded);
        }
    }
    recorded.sort_by_key(|a| std::cmp::Reverse(a.utility));
    recorded.truncate(k_max);
    recorded
}

/// Candidate fleet actions for the incoming request, best first. Empty when
/// no vehicle can serve the request.
pub fn generate_actions(
    state: &FleetState,
    request: &Request,
    matrix: &TravelMatrix,
    k_max: usize,
    metric: Metric,
) -> Vec<ScoredAction> {
    let rv = build_rv_graph(state, request, matrix, metric);
    if rv.is_empty() {
        return Vec::new();
    }
    let vv = build_vv_graph(state, matrix, metric);
    select_actions(&rv, &vv, k_max)
}

impl fmt::Display for RvGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rv request {} vehicles {} edges {}", self.request, self.fleet_size, self.edges.len())?;
        for e in &self.edges {
            write!(
                f,
                "  r{} -- v{} #{} at ({},{}) utility {} ",
                self.request, e.vehicle, e.ordinal, e.candidate.pickup_index, e.candidate.dropoff_index, e.utility
            )?;
            write!(f, "{}", e.candidate.plan)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Display for VvGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "vv edges {}", self.edges.len())?;
        for e in &self.edges {
            write!(f, "  v{} -> v{} request {} utility {} from ", e.from, e.to, e.request, e.utility)?;
            write!(f, "{}", e.from_plan)?;
            write!(f, " to ")?;
            write!(f, "{}", e.to_plan)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Display for ScoredAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action.serving {
            Some(v) => write!(f, "serve v{v}")?,
            None => write!(f, "reject")?,
        }
        for s in &self.action.swaps {
            write!(f, " + swap r{} v{}->v{}", s.request, s.from, s.to)?;
        }
        write!(f, " utility {}", self.utility)
    }
}
