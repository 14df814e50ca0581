//! JSON documents exchanged over HTTP and the event stream. Times are
//! integer seconds of the day.

use std::path::PathBuf;

use paratransit_core::experiment::MctsConfig;
use paratransit_core::model::{FleetState, StopKind};
use paratransit_core::sim::DayMetrics;
use paratransit_core::{PolicyKind, Seconds};
use serde::{Deserialize, Serialize};

/// Body of `POST /session`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub fleet_size: usize,
    pub capacity: u32,
    pub policy: PolicyKind,
    pub mcts: MctsConfig,
    pub clock: ClockSpec,
    /// Append one JSON line per committed epoch to this file.
    pub audit_log: Option<PathBuf>,
    /// Interval between position ticks under the realtime clock.
    pub tick_ms: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            fleet_size: 3,
            capacity: 8,
            policy: PolicyKind::McvrpBudget,
            mcts: MctsConfig::default(),
            clock: ClockSpec::Manual,
            audit_log: None,
            tick_ms: 1000,
        }
    }
}

/// How the session decides what time it is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ClockSpec {
    /// Time moves only when told: a submission's `now` (default: its
    /// requested time minus the lead time) or `POST /clock`.
    Manual,
    /// Seconds of day `start` at session creation, then `speed` simulated
    /// seconds per wall-clock second.
    Realtime { start: Seconds, speed: f64 },
}

/// Body of `POST /requests`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub pickup: u32,
    pub dropoff: u32,
    pub t_req: Seconds,
    /// Manual clock only: when the call comes in.
    #[serde(default)]
    pub now: Option<Seconds>,
}

/// Body of `POST /clock`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockUpdate {
    pub now: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Queued behind the decision in flight, or being decided.
    Pending,
    Accepted,
    Rejected,
}

/// Everything known about one submission. Returned by `POST /requests`
/// (provisional fields filled, verdict pending unless `?wait=commit`), by
/// `GET /requests/{id}`, and pushed as `epoch` events once committed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestStatus {
    pub id: u32,
    pub pickup: u32,
    pub dropoff: u32,
    pub t_req: Seconds,
    /// `[earliest pickup, requested pickup]`.
    pub pickup_window: [Seconds; 2],
    /// Requested pickup plus the direct travel time.
    pub estimated_dropoff: Seconds,
    /// Whether any vehicle can insert the trip, from the last committed
    /// state. Available before the decision.
    pub feasible: bool,
    pub verdict: Verdict,
    pub vehicle_id: Option<u32>,
    /// Planned pickup and dropoff times on the committed plan.
    pub pickup_eta: Option<Seconds>,
    pub dropoff_eta: Option<Seconds>,
    pub epoch: Option<Seconds>,
    pub compute_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopView {
    pub request: u32,
    pub kind: StopKind,
    pub location: u32,
    pub eta: Seconds,
    pub earliest: Seconds,
    pub latest: Seconds,
    /// Passengers aboard after this stop.
    pub load: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleView {
    pub id: u32,
    pub last_location: u32,
    /// Where the vehicle is committed to be next, and when it is free there.
    pub heading_to: u32,
    pub free_at: Seconds,
    pub onboard: usize,
    pub capacity: u32,
    pub stops: Vec<StopView>,
}

/// `GET /fleet` and `tick` events: the last committed state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetView {
    pub session: u64,
    pub now: Seconds,
    pub epochs: usize,
    pub vehicles: Vec<VehicleView>,
}

impl FleetView {
    pub fn new(session: u64, epochs: usize, state: &FleetState) -> Self {
        let vehicles = state
            .vehicles
            .iter()
            .map(|v| {
                let p = v.position();
                VehicleView {
                    id: v.id.0,
                    last_location: p.last_location.0,
                    heading_to: p.heading_to.0,
                    free_at: p.free_at,
                    onboard: v.onboard.len(),
                    capacity: state.constraints.capacity,
                    stops: v
                        .plan
                        .stops
                        .iter()
                        .map(|s| StopView {
                            request: s.request.0,
                            kind: s.kind,
                            location: s.location.0,
                            eta: s.arrival,
                            earliest: s.earliest,
                            latest: s.latest,
                            load: s.load,
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            session,
            now: state.now,
            epochs,
            vehicles,
        }
    }
}

/// `GET /metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub session: u64,
    pub now: Seconds,
    pub total: usize,
    pub served: usize,
    pub rejected: usize,
    pub service_rate: f64,
    pub empty_day: bool,
    pub median_compute: f64,
    pub mean_compute: f64,
    /// Submissions not yet decided.
    pub pending: usize,
}

impl MetricsView {
    pub fn new(session: u64, now: Seconds, m: &DayMetrics, pending: usize) -> Self {
        Self {
            session,
            now,
            total: m.total,
            served: m.served,
            rejected: m.rejected,
            service_rate: m.service_rate,
            empty_day: m.empty_day,
            median_compute: m.median_compute,
            mean_compute: m.mean_compute,
            pending,
        }
    }
}

/// One line of the audit log: enough to replay the epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub epoch: Seconds,
    pub id: u32,
    pub pickup: u32,
    pub dropoff: u32,
    pub t_req: Seconds,
    /// Serving vehicle, or `None` for a rejection. Informational; replay
    /// recomputes it.
    pub vehicle: Option<u32>,
}

/// `GET /audit`: the log plus the clock it ended at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    pub session: u64,
    pub now: Seconds,
    pub entries: Vec<AuditEntry>,
}
