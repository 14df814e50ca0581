//! Route-based MDP vocabulary: requests with hard windows, annotated route
//! plans, fleet state and fleet actions.
//!
//! The clock is integer seconds from the start of the operating day. Time
//! window comparisons are inclusive: arriving exactly at `latest` is on time.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::TravelMatrix;

pub type Seconds = i64;

/// Start of the operating day; the default earliest service time of dropoffs.
pub const DAY_START: Seconds = 0;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Node of the location graph; also the row/column of the travel matrix.
    LocationId
);
id_type!(RequestId);
id_type!(
    /// Vehicles are numbered `0..fleet_size` and indexed directly.
    VehicleId
);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("request {0}: pickup and dropoff are the same location")]
    SameLocation(RequestId),
    #[error("request {id}: unknown location {location}")]
    UnknownLocation { id: RequestId, location: LocationId },
    #[error("request {id}: requested pickup time {t_req} is outside the operating day [0, {day_end}]")]
    OutsideDay {
        id: RequestId,
        t_req: Seconds,
        day_end: Seconds,
    },
    #[error("negative time window or lead time")]
    NegativeParameter,
}

/// Service parameters that turn a requested pickup time into hard windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestParams {
    /// Allowed early pickup and late dropoff slack, seconds.
    pub time_window: Seconds,
    /// How long before the requested pickup the request becomes known.
    pub lead_time: Seconds,
    /// Length of the operating day; also `t_max`.
    pub day_length: Seconds,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self {
            time_window: 15 * 60,
            lead_time: 60 * 60,
            day_length: 10 * 3600,
        }
    }
}

/// Fleet-wide limits shared by every route plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub capacity: u32,
    /// End of the operating day.
    pub t_max: Seconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub requested_pickup: Seconds,
    pub arrival_time: Seconds,
    pub earliest_pickup: Seconds,
    pub latest_dropoff: Seconds,
}

impl Request {
    pub fn new(
        id: RequestId,
        pickup: LocationId,
        dropoff: LocationId,
        requested_pickup: Seconds,
        matrix: &TravelMatrix,
        params: &RequestParams,
    ) -> Result<Self, ModelError> {
        if params.time_window < 0 || params.lead_time < 0 {
            return Err(ModelError::NegativeParameter);
        }
        if pickup == dropoff {
            return Err(ModelError::SameLocation(id));
        }
        for location in [pickup, dropoff] {
            if !matrix.contains(location) {
                return Err(ModelError::UnknownLocation { id, location });
            }
        }
        if !(0..=params.day_length).contains(&requested_pickup) {
            return Err(ModelError::OutsideDay {
                id,
                t_req: requested_pickup,
                day_end: params.day_length,
            });
        }
        let direct = matrix.tt(pickup, dropoff);
        Ok(Self {
            id,
            pickup,
            dropoff,
            requested_pickup,
            arrival_time: requested_pickup - params.lead_time,
            earliest_pickup: requested_pickup - params.time_window,
            latest_dropoff: requested_pickup + direct + params.time_window,
        })
    }

    pub fn trip(&self) -> Trip {
        Trip {
            id: self.id,
            pickup: self.pickup,
            dropoff: self.dropoff,
            earliest_pickup: self.earliest_pickup,
            latest_dropoff: self.latest_dropoff,
        }
    }
}

/// The part of a request route planning needs: endpoints and hard windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub id: RequestId,
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub earliest_pickup: Seconds,
    pub latest_dropoff: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopKind {
    Pickup,
    Dropoff,
}

impl fmt::Display for StopKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopKind::Pickup => "pickup",
            StopKind::Dropoff => "dropoff",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stop {
    pub location: LocationId,
    pub request: RequestId,
    pub kind: StopKind,
    /// Planned service time (after any waiting for `earliest`).
    pub arrival: Seconds,
    pub earliest: Seconds,
    pub latest: Seconds,
    /// Passengers on board when departing this stop.
    pub load: i32,
}

impl Stop {
    pub fn pickup(trip: &Trip, t_max: Seconds) -> Self {
        Self {
            location: trip.pickup,
            request: trip.id,
            kind: StopKind::Pickup,
            arrival: 0,
            earliest: trip.earliest_pickup,
            latest: t_max,
            load: 0,
        }
    }

    pub fn dropoff(trip: &Trip) -> Self {
        Self {
            location: trip.dropoff,
            request: trip.id,
            kind: StopKind::Dropoff,
            arrival: 0,
            earliest: DAY_START,
            latest: trip.latest_dropoff,
            load: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// Dropoff before pickup, or a pickup with no dropoff after it.
    Ordering { request: RequestId },
    Early { index: usize, request: RequestId },
    Late {
        index: usize,
        request: RequestId,
        arrival: Seconds,
        latest: Seconds,
    },
    OverCapacity { index: usize, load: i32, capacity: u32 },
    NegativeLoad { index: usize },
}

/// Ordered stops for one vehicle, anchored at the location the vehicle is
/// committed to and the time it is (or will be) free there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub vehicle: VehicleId,
    pub origin: LocationId,
    pub departure: Seconds,
    /// Passengers already on board at the anchor.
    pub initial_load: u32,
    pub stops: Vec<Stop>,
}

impl RoutePlan {
    pub fn empty(vehicle: VehicleId, origin: LocationId, departure: Seconds) -> Self {
        Self {
            vehicle,
            origin,
            departure,
            initial_load: 0,
            stops: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.stops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    /// Recomputes arrivals and loads: vehicles wait when early, load moves by
    /// one per stop starting from the on-board count.
    pub fn annotate(&mut self, matrix: &TravelMatrix) {
        let mut time = self.departure;
        let mut at = self.origin;
        let mut load = self.initial_load as i32;
        for stop in &mut self.stops {
            time = (time + matrix.tt(at, stop.location)).max(stop.earliest);
            stop.arrival = time;
            load += match stop.kind {
                StopKind::Pickup => 1,
                StopKind::Dropoff => -1,
            };
            stop.load = load;
            at = stop.location;
        }
    }

    pub fn annotated(mut self, matrix: &TravelMatrix) -> Self {
        self.annotate(matrix);
        self
    }

    /// Every violated constraint of an annotated plan; empty means feasible.
    pub fn validate(&self, capacity: u32) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, stop) in self.stops.iter().enumerate() {
            if stop.kind == StopKind::Pickup {
                let paired = self.stops[i + 1..]
                    .iter()
                    .any(|s| s.request == stop.request && s.kind == StopKind::Dropoff);
                let dropoff_before = self.stops[..i]
                    .iter()
                    .any(|s| s.request == stop.request && s.kind == StopKind::Dropoff);
                if !paired || dropoff_before {
                    out.push(Violation::Ordering { request: stop.request });
                }
                if stop.arrival < stop.earliest {
                    out.push(Violation::Early {
                        index: i,
                        request: stop.request,
                    });
                }
            }
            if stop.arrival > stop.latest {
                out.push(Violation::Late {
                    index: i,
                    request: stop.request,
                    arrival: stop.arrival,
                    latest: stop.latest,
                });
            }
            if stop.load > capacity as i32 {
                out.push(Violation::OverCapacity {
                    index: i,
                    load: stop.load,
                    capacity,
                });
            }
            if stop.load < 0 {
                out.push(Violation::NegativeLoad { index: i });
            }
        }
        out
    }

    pub fn is_feasible(&self, capacity: u32) -> bool {
        self.validate(capacity).is_empty()
    }

    pub fn contains(&self, request: RequestId) -> bool {
        self.stops.iter().any(|s| s.request == request)
    }

    /// Distinct requests in stop order.
    pub fn requests(&self) -> Vec<RequestId> {
        let mut seen = BTreeSet::new();
        self.stops
            .iter()
            .filter(|s| seen.insert(s.request))
            .map(|s| s.request)
            .collect()
    }

    /// Requests whose pickup is still ahead; only these may be moved.
    pub fn unpicked(&self) -> Vec<RequestId> {
        self.stops
            .iter()
            .filter(|s| s.kind == StopKind::Pickup)
            .map(|s| s.request)
            .collect()
    }

    /// Rebuilds the trip of an unpicked request from its two stops.
    pub fn trip_of(&self, request: RequestId) -> Option<Trip> {
        let pickup = self
            .stops
            .iter()
            .find(|s| s.request == request && s.kind == StopKind::Pickup)?;
        let dropoff = self
            .stops
            .iter()
            .find(|s| s.request == request && s.kind == StopKind::Dropoff)?;
        Some(Trip {
            id: request,
            pickup: pickup.location,
            dropoff: dropoff.location,
            earliest_pickup: pickup.earliest,
            latest_dropoff: dropoff.latest,
        })
    }

    /// The plan with both stops of `request` removed and re-annotated.
    pub fn without(&self, request: RequestId, matrix: &TravelMatrix) -> RoutePlan {
        let mut plan = RoutePlan {
            stops: self.stops.iter().filter(|s| s.request != request).cloned().collect(),
            ..self.clone()
        };
        plan.annotate(matrix);
        plan
    }
}

/// `[P3@11:540 D3@6:840]`: kind, request, location and planned arrival.
impl fmt::Display for RoutePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, s) in self.stops.iter().enumerate() {
            let tag = match s.kind {
                StopKind::Pickup => 'P',
                StopKind::Dropoff => 'D',
            };
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{tag}{}@{}:{}", s.request, s.location, s.arrival)?;
        }
        write!(f, "]")
    }
}

/// One executed stop, as observed by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecEvent {
    pub time: Seconds,
    pub vehicle: VehicleId,
    pub request: RequestId,
    pub kind: StopKind,
    pub location: LocationId,
}

/// Where a vehicle is between epochs: it last served a stop at
/// `last_location` and is committed to reach `heading_to` at `free_at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub last_location: LocationId,
    pub heading_to: LocationId,
    pub free_at: Seconds,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub last_location: LocationId,
    pub plan: RoutePlan,
    pub onboard: BTreeSet<RequestId>,
}

impl VehicleState {
    pub fn position(&self) -> Position {
        Position {
            last_location: self.last_location,
            heading_to: self.plan.origin,
            free_at: self.plan.departure,
        }
    }

    /// Requests assigned to this vehicle, on board or not.
    pub fn assigned(&self) -> BTreeSet<RequestId> {
        self.plan.stops.iter().map(|s| s.request).collect()
    }
}

/// Pre-decision state when `incoming` is set, post-decision otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetState {
    pub now: Seconds,
    pub incoming: Option<Request>,
    pub constraints: Constraints,
    pub vehicles: Vec<VehicleState>,
}

impl FleetState {
    /// All vehicles idle at `depot` at the start of the day.
    pub fn new(fleet_size: usize, depot: LocationId, constraints: Constraints) -> Self {
        let vehicles = (0..fleet_size as u32)
            .map(|v| VehicleState {
                id: VehicleId(v),
                last_location: depot,
                plan: RoutePlan::empty(VehicleId(v), depot, DAY_START),
                onboard: BTreeSet::new(),
            })
            .collect();
        Self {
            now: DAY_START,
            incoming: None,
            constraints,
            vehicles,
        }
    }

    pub fn fleet_size(&self) -> usize {
        self.vehicles.len()
    }

    pub fn plan(&self, vehicle: VehicleId) -> &RoutePlan {
        &self.vehicles[vehicle.index()].plan
    }

    /// Moves the clock to `t`, executing every stop whose planned service
    /// time is `<= t`. A vehicle already driving toward its next stop stays
    /// committed to that leg: its plan is re-anchored at the stop location.
    pub fn advance_to<F>(&mut self, t: Seconds, matrix: &TravelMatrix, mut on_event: F)
    where
        F: FnMut(ExecEvent),
    {
        for vehicle in &mut self.vehicles {
            let plan = &mut vehicle.plan;
            let done = plan.stops.iter().take_while(|s| s.arrival <= t).count();
            for stop in &plan.stops[..done] {
                match stop.kind {
                    StopKind::Pickup => vehicle.onboard.insert(stop.request),
                    StopKind::Dropoff => vehicle.onboard.remove(&stop.request),
                };
                on_event(ExecEvent {
                    time: stop.arrival,
                    vehicle: vehicle.id,
                    request: stop.request,
                    kind: stop.kind,
                    location: stop.location,
                });
            }
            if done > 0 {
                let last = &plan.stops[done - 1];
                vehicle.last_location = last.location;
                plan.origin = last.location;
                plan.departure = last.arrival;
                plan.initial_load = last.load.max(0) as u32;
                plan.stops.drain(..done);
            }
            match plan.stops.first() {
                None => plan.departure = plan.departure.max(t),
                Some(next) if plan.departure < t => {
                    let reach = plan.departure + matrix.tt(plan.origin, next.location);
                    plan.origin = next.location;
                    plan.departure = reach.max(t);
                }
                Some(_) => {}
            }
            plan.annotate(matrix);
        }
        self.now = self.now.max(t);
    }

    /// Pre-decision state for `request` at time `t`.
    pub fn begin_epoch(&mut self, t: Seconds, request: Request, matrix: &TravelMatrix) {
        self.advance_to(t, matrix, |_| {});
        self.incoming = Some(request);
    }

    /// Post-decision state: replacement plans installed, incoming cleared.
    pub fn apply(&mut self, action: &Action) {
        for plan in &action.plans {
            self.vehicles[plan.vehicle.index()].plan = plan.clone();
        }
        self.incoming = None;
    }

    pub fn applied(&self, action: &Action) -> FleetState {
        let mut next = self.clone();
        next.apply(action);
        next
    }

    /// Structural invariants: plan/vehicle alignment, onboard requests appear
    /// exactly once as a dropoff, unpicked requests appear exactly once as a
    /// pickup/dropoff pair, and each request lives in one plan only.
    pub fn check_consistency(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.id.index() != i || v.plan.vehicle != v.id {
                return Err(format!("vehicle slot {i} holds vehicle {} / plan {}", v.id, v.plan.vehicle));
            }
            if v.plan.initial_load as usize != v.onboard.len() {
                return Err(format!("vehicle {}: plan load {} != onboard {}", v.id, v.plan.initial_load, v.onboard.len()));
            }
            for r in v.assigned() {
                if !seen.insert(r) {
                    return Err(format!("request {r} appears in more than one plan"));
                }
                let pickups = v.plan.stops.iter().filter(|s| s.request == r && s.kind == StopKind::Pickup).count();
                let dropoffs = v.plan.stops.iter().filter(|s| s.request == r && s.kind == StopKind::Dropoff).count();
                let expected_pickups = usize::from(!v.onboard.contains(&r));
                if dropoffs != 1 || pickups != expected_pickups {
                    return Err(format!("vehicle {}: request {r} has {pickups} pickups / {dropoffs} dropoffs", v.id));
                }
            }
            for r in &v.onboard {
                if !v.plan.contains(*r) {
                    return Err(format!("vehicle {}: onboard request {r} has no dropoff", v.id));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fleet state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Swap {
    pub request: RequestId,
    pub from: VehicleId,
    pub to: VehicleId,
}

/// A fleet action: replacement plans for the vehicles it touches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    /// Vehicle that receives the incoming request; `None` rejects it.
    pub serving: Option<VehicleId>,
    pub plans: Vec<RoutePlan>,
    pub swaps: Vec<Swap>,
}

impl Action {
    pub fn reject() -> Self {
        Self {
            serving: None,
            plans: Vec::new(),
            swaps: Vec::new(),
        }
    }

    /// 1 when the incoming request is served, 0 when rejected.
    pub fn reward(&self) -> u32 {
        u32::from(self.serving.is_some())
    }

    pub fn plan_for(&self, vehicle: VehicleId) -> Option<&RoutePlan> {
        self.plans.iter().find(|p| p.vehicle == vehicle)
    }
}
