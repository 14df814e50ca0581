//! Decision loop, policies, day replay and the execution-trace audit.
//!
//! [`Dispatcher`] owns the authoritative fleet state and is the only code
//! path that turns a request into a committed action; the replay simulator
//! and the live service both drive it. Every action a policy returns is
//! re-checked by [`check_action`] before it is applied, and a failure stops
//! the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{ChainStore, DemandError};
use crate::graphs::generate_actions;
use crate::mcts::{evaluate, greedy_insertion, SearchBudget, SearchError};
use crate::model::{
    Action, Constraints, ExecEvent, FleetState, LocationId, Request, RequestId, RoutePlan, Seconds, StopKind, VehicleId,
};
use crate::network::TravelMatrix;
use crate::utility::Metric;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("request stream is not sorted: request {0} arrives before the previous epoch")]
    Unsorted(RequestId),
    #[error("policy returned an invalid action for request {request}: {reason}")]
    InvalidAction { request: RequestId, reason: String },
    #[error("unknown policy {0:?} (expected mcvrp-budget, mcvrp-ptt, greedy-budget or greedy-ptt)")]
    UnknownPolicy(String),
    #[error("policy {0} needs a chain store")]
    MissingChains(PolicyKind),
    #[error("request {0} is already known")]
    DuplicateRequest(RequestId),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "mcvrp-budget")]
    McvrpBudget,
    #[serde(rename = "mcvrp-ptt")]
    McvrpPtt,
    #[serde(rename = "greedy-budget")]
    GreedyBudget,
    #[serde(rename = "greedy-ptt")]
    GreedyPtt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::McvrpBudget,
        PolicyKind::McvrpPtt,
        PolicyKind::GreedyBudget,
        PolicyKind::GreedyPtt,
    ];

    pub fn metric(self) -> Metric {
        match self {
            PolicyKind::McvrpBudget | PolicyKind::GreedyBudget => Metric::Budget,
            PolicyKind::McvrpPtt | PolicyKind::GreedyPtt => Metric::Ptt,
        }
    }

    pub fn uses_search(self) -> bool {
        matches!(self, PolicyKind::McvrpBudget | PolicyKind::McvrpPtt)
    }

    pub fn build(self, budget: &SearchBudget, seed: u64, chains: Option<Arc<ChainStore>>) -> Result<Box<dyn Policy>, SimError> {
        if !self.uses_search() {
            return Ok(Box::new(GreedyPolicy {
                metric: self.metric(),
                k_max: budget.k_max,
            }));
        }
        budget.validate()?;
        let chains = chains.ok_or(SimError::MissingChains(self))?;
        if chains.is_empty() {
            return Err(DemandError::EmptyStore.into());
        }
        Ok(Box::new(SearchPolicy {
            kind: self,
            budget: budget.clone(),
            seed,
            chains,
        }))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::McvrpBudget => "mcvrp-budget",
            PolicyKind::McvrpPtt => "mcvrp-ptt",
            PolicyKind::GreedyBudget => "greedy-budget",
            PolicyKind::GreedyPtt => "greedy-ptt",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| SimError::UnknownPolicy(s.to_string()))
    }
}

/// What a policy decided and what it looked at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    /// Candidate actions generated for the request.
    pub candidates: usize,
    /// Index of the chosen candidate (0 when rejecting).
    pub chosen: usize,
    /// Mean root score per candidate, when a search ran.
    pub scores: Option<Vec<f64>>,
    pub simulations: u64,
}

pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    /// `state` is the pre-decision state with `request` incoming.
    fn decide(&mut self, state: &FleetState, request: &Request, matrix: &TravelMatrix) -> Result<Decision, SimError>;
}

pub struct GreedyPolicy {
    pub metric: Metric,
    pub k_max: usize,
}

impl Policy for GreedyPolicy {
    fn kind(&self) -> PolicyKind {
        match self.metric {
            Metric::Budget => PolicyKind::GreedyBudget,
            Metric::Ptt => PolicyKind::GreedyPtt,
        }
    }

    fn decide(&mut self, state: &FleetState, request: &Request, matrix: &TravelMatrix) -> Result<Decision, SimError> {
        let actions = generate_actions(state, request, matrix, self.k_max, self.metric);
        let candidates = actions.len();
        Ok(Decision {
            action: actions.into_iter().next().map_or_else(Action::reject, |a| a.action),
            candidates,
            chosen: 0,
            scores: None,
            simulations: 0,
        })
    }
}

pub struct SearchPolicy {
    kind: PolicyKind,
    budget: SearchBudget,
    seed: u64,
    chains: Arc<ChainStore>,
}

impl SearchPolicy {
    /// Chain sampling stream for one epoch: depends on the run seed and the
    /// request only, so replays are reproducible.
    fn rng(&self, request: &Request) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(u64::from(request.id.0));
        rng
    }
}

impl Policy for SearchPolicy {
    fn kind(&self) -> PolicyKind {
        self.kind
    }

    fn decide(&mut self, state: &FleetState, request: &Request, matrix: &TravelMatrix) -> Result<Decision, SimError> {
        let metric = self.kind.metric();
        let mut actions = generate_actions(state, request, matrix, self.budget.k_max, metric);
        let candidates = actions.len();
        if candidates <= 1 {
            return Ok(Decision {
                action: actions.pop().map_or_else(Action::reject, |a| a.action),
                candidates,
                chosen: 0,
                scores: None,
                simulations: 0,
            });
        }
        let futures = self.chains.sample_futures(state.now, self.budget.n_chains, &mut self.rng(request))?;
        let eval = evaluate(&actions, state, &futures, matrix, metric, &self.budget)?;
        Ok(Decision {
            action: actions.swap_remove(eval.chosen).action,
            candidates,
            chosen: eval.chosen,
            simulations: eval.simulations.iter().sum(),
            scores: Some(eval.scores),
        })
    }
}

/// Checks an action against the pre-decision state without trusting any
/// annotation it carries: arrivals are recomputed from the travel matrix.
pub fn check_action(state: &FleetState, request: &Request, action: &Action, matrix: &TravelMatrix) -> Result<(), String> {
    let Some(serving) = action.serving else {
        return if action.plans.is_empty() && action.swaps.is_empty() {
            Ok(())
        } else {
            Err("a rejection must not change any plan".into())
        };
    };
    let n = state.fleet_size();
    let mut touched = BTreeSet::from([serving]);
    for s in &action.swaps {
        if s.from == s.to {
            return Err(format!("swap of request {} within vehicle {}", s.request, s.from));
        }
        for v in [s.from, s.to] {
            if !touched.insert(v) {
                return Err(format!("vehicle {v} appears in more than one edge"));
            }
        }
    }
    if touched.iter().any(|v| v.index() >= n) {
        return Err("action names a vehicle outside the fleet".into());
    }
    let planned: Vec<VehicleId> = action.plans.iter().map(|p| p.vehicle).collect();
    let planned_set: BTreeSet<VehicleId> = planned.iter().copied().collect();
    if planned.len() != planned_set.len() || planned_set != touched {
        return Err(format!("plans for {planned:?} but edges touch {touched:?}"));
    }

    // request conservation over the touched vehicles
    let mut before: BTreeMap<RequestId, VehicleId> = BTreeMap::new();
    for &v in &touched {
        for r in state.vehicles[v.index()].assigned() {
            before.insert(r, v);
        }
    }
    let mut expected = before.clone();
    expected.insert(request.id, serving);
    for s in &action.swaps {
        if before.get(&s.request) != Some(&s.from) {
            return Err(format!("swapped request {} is not on vehicle {}", s.request, s.from));
        }
        if state.vehicles[s.from.index()].onboard.contains(&s.request) {
            return Err(format!("swapped request {} is already on board", s.request));
        }
        expected.insert(s.request, s.to);
    }
    let mut after: BTreeMap<RequestId, VehicleId> = BTreeMap::new();
    for plan in &action.plans {
        for s in &plan.stops {
            if let Some(prev) = after.insert(s.request, plan.vehicle) {
                if prev != plan.vehicle {
                    return Err(format!("request {} split across vehicles", s.request));
                }
            }
        }
    }
    if after != expected {
        return Err(format!("assignment after action {after:?} differs from expected {expected:?}"));
    }

    // per-plan feasibility, recomputed from scratch
    let trips: BTreeMap<RequestId, (LocationId, LocationId, Seconds, Seconds)> = state
        .vehicles
        .iter()
        .flat_map(|v| v.plan.stops.iter())
        .map(|s| (s.request, s))
        .fold(BTreeMap::new(), |mut acc, (r, s)| {
            let e = acc.entry(r).or_insert((s.location, s.location, Seconds::MIN, Seconds::MAX));
            match s.kind {
                StopKind::Pickup => {
                    e.0 = s.location;
                    e.2 = s.earliest;
                }
                StopKind::Dropoff => {
                    e.1 = s.location;
                    e.3 = s.latest;
                }
            }
            acc
        });
    for plan in &action.plans {
        let vehicle = &state.vehicles[plan.vehicle.index()];
        let current = &vehicle.plan;
        if (plan.origin, plan.departure, plan.initial_load) != (current.origin, current.departure, current.initial_load) {
            return Err(format!("vehicle {} plan is re-anchored", plan.vehicle));
        }
        let mut at = plan.origin;
        let mut time = plan.departure;
        let mut load = vehicle.onboard.len() as i64;
        let mut picked: BTreeSet<RequestId> = vehicle.onboard.clone();
        for s in &plan.stops {
            let (pickup_at, dropoff_at, earliest, latest) = if s.request == request.id {
                (request.pickup, request.dropoff, request.earliest_pickup, request.latest_dropoff)
            } else {
                match trips.get(&s.request) {
                    Some(&t) => t,
                    None => return Err(format!("unknown request {} in plan", s.request)),
                }
            };
            time += matrix.tt(at, s.location);
            at = s.location;
            match s.kind {
                StopKind::Pickup => {
                    if s.location != pickup_at || !picked.insert(s.request) {
                        return Err(format!("bad pickup for request {}", s.request));
                    }
                    time = time.max(earliest);
                    if time > state.constraints.t_max {
                        return Err(format!("pickup of {} after the end of the day", s.request));
                    }
                    load += 1;
                }
                StopKind::Dropoff => {
                    if s.location != dropoff_at || !picked.remove(&s.request) {
                        return Err(format!("bad dropoff for request {}", s.request));
                    }
                    if latest != Seconds::MAX && time > latest {
                        return Err(format!("request {} dropped at {time}, after {latest}", s.request));
                    }
                    load -= 1;
                }
            }
            if load > i64::from(state.constraints.capacity) {
                return Err(format!("vehicle {} over capacity", plan.vehicle));
            }
        }
        if !picked.is_empty() {
            return Err(format!("vehicle {} ends with passengers {picked:?}", plan.vehicle));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Epoch,
    Pickup,
    Dropoff,
    Reject,
}

/// One line of the execution trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: TraceKind,
    pub time: Seconds,
    pub vehicle: Option<VehicleId>,
    pub request: RequestId,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            TraceKind::Epoch => "epoch",
            TraceKind::Pickup => "pickup",
            TraceKind::Dropoff => "dropoff",
            TraceKind::Reject => "reject",
        };
        match self.vehicle {
            Some(v) => write!(f, "{kind} {} {v} {}", self.time, self.request),
            None => write!(f, "{kind} {} - {}", self.time, self.request),
        }
    }
}

impl From<ExecEvent> for TraceEvent {
    fn from(e: ExecEvent) -> Self {
        Self {
            kind: match e.kind {
                StopKind::Pickup => TraceKind::Pickup,
                StopKind::Dropoff => TraceKind::Dropoff,
            },
            time: e.time,
            vehicle: Some(e.vehicle),
            request: e.request,
        }
    }
}

pub fn format_trace(trace: &[TraceEvent]) -> String {
    trace.iter().map(|e| format!("{e}\n")).collect()
}

/// Result of one committed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub request: Request,
    pub epoch_time: Seconds,
    pub decision: Decision,
    pub compute: Duration,
}

/// RV-graph-only verdict on a copy of `state` advanced to `t`: the best
/// single insertion of `request`, or `None` when no vehicle can take it.
pub fn preview(state: &FleetState, request: &Request, t: Seconds, matrix: &TravelMatrix, metric: Metric) -> Option<RoutePlan> {
    let mut probe = state.clone();
    probe.advance_to(t.max(state.now), matrix, |_| {});
    greedy_insertion(&probe, request, matrix, metric)
}

/// Owns the fleet state and serializes decisions.
pub struct Dispatcher {
    matrix: Arc<TravelMatrix>,
    state: FleetState,
    policy: Box<dyn Policy>,
    trace: Vec<TraceEvent>,
    epochs: Vec<EpochRecord>,
    known: BTreeSet<RequestId>,
    last_epoch: Seconds,
}

impl Dispatcher {
    pub fn new(matrix: Arc<TravelMatrix>, fleet_size: usize, constraints: Constraints, policy: Box<dyn Policy>) -> Self {
        let state = FleetState::new(fleet_size, matrix.depot(), constraints);
        Self {
            matrix,
            state,
            policy,
            trace: Vec::new(),
            epochs: Vec::new(),
            known: BTreeSet::new(),
            last_epoch: Seconds::MIN,
        }
    }

    pub fn state(&self) -> &FleetState {
        &self.state
    }

    pub fn matrix(&self) -> &Arc<TravelMatrix> {
        &self.matrix
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy.kind()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn epochs(&self) -> &[EpochRecord] {
        &self.epochs
    }

    pub fn last_epoch(&self) -> Option<Seconds> {
        (self.last_epoch != Seconds::MIN).then_some(self.last_epoch)
    }

    /// Executes committed stops up to `t` without deciding anything.
    pub fn advance_to(&mut self, t: Seconds) {
        let trace = &mut self.trace;
        self.state.advance_to(t, &self.matrix, |e| trace.push(e.into()));
    }

    /// RV-graph-only verdict for `request` if it were decided at `t`: the
    /// best single insertion, or `None` when no vehicle can take it. Does not
    /// change any state.
    pub fn preview(&self, request: &Request, t: Seconds) -> Option<RoutePlan> {
        preview(&self.state, request, t, &self.matrix, self.policy.kind().metric())
    }

    /// Runs one decision epoch for `request` at `epoch_time` and commits the
    /// result.
    pub fn step(&mut self, epoch_time: Seconds, request: Request) -> Result<&EpochRecord, SimError> {
        if epoch_time < self.last_epoch {
            return Err(SimError::Unsorted(request.id));
        }
        if !self.known.insert(request.id) {
            return Err(SimError::DuplicateRequest(request.id));
        }
        self.last_epoch = epoch_time;
        self.advance_to(epoch_time);
        self.state.incoming = Some(request.clone());

        let start = Instant::now();
        let decision = self.policy.decide(&self.state, &request, &self.matrix)?;
        let compute = start.elapsed();

        check_action(&self.state, &request, &decision.action, &self.matrix).map_err(|reason| SimError::InvalidAction {
            request: request.id,
            reason,
        })?;
        self.state.apply(&decision.action);
        debug_assert_eq!(self.state.check_consistency(), Ok(()));
        self.trace.push(TraceEvent {
            kind: TraceKind::Epoch,
            time: epoch_time,
            vehicle: decision.action.serving,
            request: request.id,
        });
        if decision.action.serving.is_none() {
            self.trace.push(TraceEvent {
                kind: TraceKind::Reject,
                time: epoch_time,
                vehicle: None,
                request: request.id,
            });
        }
        self.epochs.push(EpochRecord {
            request,
            epoch_time,
            decision,
            compute,
        });
        Ok(self.epochs.last().expect("just pushed"))
    }

    /// Drives every vehicle to the end of its plan.
    pub fn finish(&mut self) {
        self.advance_to(Seconds::MAX / 4);
    }

    /// Running metrics over the epochs so far.
    pub fn metrics(&self) -> DayMetrics {
        DayMetrics::from_run(&self.epochs, &self.trace, &self.state, &self.matrix)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub total: usize,
    pub served: usize,
    pub rejected: usize,
    /// Percentage served; 100 with `empty_day` set when there were no requests.
    pub service_rate: f64,
    pub empty_day: bool,
    pub compute_seconds: Vec<f64>,
    pub median_compute: f64,
    pub mean_compute: f64,
    /// Seconds each vehicle drove with at least one passenger aboard.
    pub occupied_seconds: Vec<Seconds>,
    /// Seconds each vehicle spent driving, from the matrix.
    pub driven_seconds: Vec<Seconds>,
}

pub(crate) fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2],
        n => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

impl DayMetrics {
    fn from_run(epochs: &[EpochRecord], trace: &[TraceEvent], state: &FleetState, matrix: &TravelMatrix) -> Self {
        let total = epochs.len();
        let served = epochs.iter().filter(|e| e.decision.action.serving.is_some()).count();
        let mut compute: Vec<f64> = epochs.iter().map(|e| e.compute.as_secs_f64()).collect();
        let mean_compute = if total == 0 { 0.0 } else { compute.iter().sum::<f64>() / total as f64 };
        compute.sort_by(f64::total_cmp);
        let median_compute = median(&compute);
        compute = epochs.iter().map(|e| e.compute.as_secs_f64()).collect();

        let locations = request_locations(epochs.iter().map(|e| &e.request));
        let n = state.fleet_size();
        let mut occupied = vec![0; n];
        let mut driven = vec![0; n];
        let mut last: Vec<(LocationId, Seconds, i64)> = vec![(matrix.depot(), 0, 0); n];
        for e in trace {
            let (Some(v), Some(kind)) = (e.vehicle, stop_kind(e.kind)) else { continue };
            let Some(&(p, d)) = locations.get(&e.request) else { continue };
            let at = if kind == StopKind::Pickup { p } else { d };
            let (prev, t, load) = last[v.index()];
            driven[v.index()] += matrix.tt(prev, at);
            if load > 0 {
                occupied[v.index()] += e.time - t;
            }
            let load = load + if kind == StopKind::Pickup { 1 } else { -1 };
            last[v.index()] = (at, e.time, load);
        }
        Self {
            total,
            served,
            rejected: total - served,
            service_rate: if total == 0 { 100.0 } else { 100.0 * served as f64 / total as f64 },
            empty_day: total == 0,
            compute_seconds: compute,
            median_compute,
            mean_compute,
            occupied_seconds: occupied,
            driven_seconds: driven,
        }
    }
}

fn stop_kind(kind: TraceKind) -> Option<StopKind> {
    match kind {
        TraceKind::Pickup => Some(StopKind::Pickup),
        TraceKind::Dropoff => Some(StopKind::Dropoff),
        _ => None,
    }
}

fn request_locations<'a>(requests: impl Iterator<Item = &'a Request>) -> BTreeMap<RequestId, (LocationId, LocationId)> {
    requests.map(|r| (r.id, (r.pickup, r.dropoff))).collect()
}

/// Counts of invariant breaches found in an execution trace.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub window_violations: usize,
    pub capacity_violations: usize,
    pub teleports: usize,
    /// Served requests without exactly one pickup then one dropoff, or
    /// events for requests that were never served.
    pub conservation_violations: usize,
    pub details: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.window_violations + self.capacity_violations + self.teleports + self.conservation_violations == 0
    }
}

/// Audits the trace against the original requests only: windows, capacity,
/// travel feasibility between consecutive stops of each vehicle (all
/// vehicles start at the depot at time 0), and pickup/dropoff pairing.
pub fn audit_trace(trace: &[TraceEvent], requests: &[Request], capacity: u32, matrix: &TravelMatrix) -> AuditReport {
    let mut report = AuditReport::default();
    let by_id: BTreeMap<RequestId, &Request> = requests.iter().map(|r| (r.id, r)).collect();
    let served: BTreeSet<RequestId> = trace
        .iter()
        .filter(|e| e.kind == TraceKind::Epoch && e.vehicle.is_some())
        .map(|e| e.request)
        .collect();
    let mut vehicles: BTreeMap<VehicleId, (LocationId, Seconds, u32)> = BTreeMap::new();
    let mut pickups: BTreeMap<RequestId, (VehicleId, Seconds)> = BTreeMap::new();
    let mut dropoffs: BTreeMap<RequestId, Seconds> = BTreeMap::new();
    let flag = |report: &mut AuditReport, msg: String| report.details.push(msg);

    for e in trace {
        let (Some(v), Some(kind)) = (e.vehicle, stop_kind(e.kind)) else { continue };
        let Some(r) = by_id.get(&e.request) else {
            report.conservation_violations += 1;
            flag(&mut report, format!("event for unknown request {}", e.request));
            continue;
        };
        if !served.contains(&e.request) {
            report.conservation_violations += 1;
            flag(&mut report, format!("request {} executed without being accepted", e.request));
        }
        let at = if kind == StopKind::Pickup { r.pickup } else { r.dropoff };
        let (prev, t, load) = vehicles.entry(v).or_insert((matrix.depot(), 0, 0));
        if e.time - *t < matrix.tt(*prev, at) {
            report.teleports += 1;
            flag(&mut report, format!("vehicle {v} reached {at} at {} from {prev} at {t}", e.time));
        }
        *prev = at;
        *t = e.time;
        match kind {
            StopKind::Pickup => {
                if pickups.insert(r.id, (v, e.time)).is_some() {
                    report.conservation_violations += 1;
                    flag(&mut report, format!("request {} picked up twice", r.id));
                }
                if e.time < r.earliest_pickup {
                    report.window_violations += 1;
                    flag(&mut report, format!("request {} picked up early at {}", r.id, e.time));
                }
                *load += 1;
                if *load > capacity {
                    report.capacity_violations += 1;
                    flag(&mut report, format!("vehicle {v} carries {load} at {}", e.time));
                }
            }
            StopKind::Dropoff => {
                match pickups.get(&r.id) {
                    Some(&(pv, _)) if pv == v => {}
                    _ => {
                        report.conservation_violations += 1;
                        flag(&mut report, format!("request {} dropped by {v} without a pickup", r.id));
                    }
                }
                if dropoffs.insert(r.id, e.time).is_some() {
                    report.conservation_violations += 1;
                    flag(&mut report, format!("request {} dropped twice", r.id));
                }
                if e.time > r.latest_dropoff {
                    report.window_violations += 1;
                    flag(&mut report, format!("request {} dropped late at {}", r.id, e.time));
                }
                *load = load.saturating_sub(1);
            }
        }
    }
    for r in &served {
        if !pickups.contains_key(r) || !dropoffs.contains_key(r) {
            report.conservation_violations += 1;
            flag(&mut report, format!("served request {r} never completed"));
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    /// Epochs happen at request arrival; compute time is only recorded.
    #[default]
    Serialized,
    /// The clock also advances by compute time: an epoch happens at the
    /// later of the arrival and the end of the previous decision.
    StrictRealtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayOutcome {
    pub metrics: DayMetrics,
    pub trace: Vec<TraceEvent>,
    pub audit: AuditReport,
    pub epochs: Vec<EpochRecord>,
}

/// Replays one day of requests (sorted by arrival) through `policy`.
pub fn run_day(
    requests: &[Request],
    fleet_size: usize,
    constraints: Constraints,
    policy: Box<dyn Policy>,
    matrix: Arc<TravelMatrix>,
    clock: ClockMode,
) -> Result<DayOutcome, SimError> {
    if let Some(w) = requests.windows(2).find(|w| w[1].arrival_time < w[0].arrival_time) {
        return Err(SimError::Unsorted(w[1].id));
    }
    let mut dispatcher = Dispatcher::new(matrix.clone(), fleet_size, constraints, policy);
    let mut busy_until = Seconds::MIN;
    for r in requests {
        let epoch = match clock {
            ClockMode::Serialized => r.arrival_time,
            ClockMode::StrictRealtime => r.arrival_time.max(busy_until),
        };
        let compute = dispatcher.step(epoch, r.clone())?.compute;
        busy_until = epoch + compute.as_secs_f64().ceil() as Seconds;
    }
    dispatcher.finish();
    let metrics = dispatcher.metrics();
    let audit = audit_trace(dispatcher.trace(), requests, constraints.capacity, &matrix);
    Ok(DayOutcome {
        metrics,
        trace: dispatcher.trace,
        audit,
        epochs: dispatcher.epochs,
    })
}

/// Re-runs recorded epochs `(epoch time, request)` through a fresh
/// dispatcher and advances the clock to `until`.
pub fn replay(
    epochs: &[(Seconds, Request)],
    fleet_size: usize,
    constraints: Constraints,
    policy: Box<dyn Policy>,
    matrix: Arc<TravelMatrix>,
    until: Seconds,
) -> Result<Dispatcher, SimError> {
    let mut dispatcher = Dispatcher::new(matrix, fleet_size, constraints, policy);
    for (t, r) in epochs {
        dispatcher.step(*t, r.clone())?;
    }
    dispatcher.advance_to(until);
    Ok(dispatcher)
}
