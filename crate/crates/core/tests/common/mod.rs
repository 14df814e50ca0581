//! The three-vehicle action-generation configuration shared by the golden
//! test and the acceptance suite.

use std::fmt::Write as _;
use std::path::PathBuf;

use paratransit_core::graphs::{build_rv_graph, build_vv_graph, select_actions};
use paratransit_core::model::Stop;
use paratransit_core::*;

const T_MAX: Seconds = 3600;

fn matrix() -> TravelMatrix {
    let rows = (0..12i64).map(|i| (0..12i64).map(|j| (i - j).unsigned_abs() as u32 * 60).collect()).collect();
    TravelMatrix::from_rows(LocationId(0), rows).unwrap()
}

fn request(id: u32, pickup: u32, dropoff: u32, t_req: Seconds, m: &TravelMatrix) -> Request {
    let params = RequestParams {
        time_window: 120,
        lead_time: 600,
        day_length: T_MAX,
    };
    Request::new(RequestId(id), LocationId(pickup), LocationId(dropoff), t_req, m, &params).unwrap()
}

pub fn scenario() -> (TravelMatrix, FleetState, Request) {
    let m = matrix();
    let mut s = FleetState::new(3, LocationId(0), Constraints { capacity: 2, t_max: T_MAX });
    let assigned = [(0, request(1, 10, 0, 660, &m)), (6, request(2, 8, 2, 780, &m)), (2, request(3, 11, 6, 540, &m))];
    for (v, (origin, r)) in assigned.into_iter().enumerate() {
        let trip = r.trip();
        let vehicle = &mut s.vehicles[v];
        vehicle.last_location = LocationId(origin);
        vehicle.plan = RoutePlan {
            vehicle: VehicleId(v as u32),
            origin: LocationId(origin),
            departure: 0,
            initial_load: 0,
            stops: vec![Stop::pickup(&trip, T_MAX), Stop::dropoff(&trip)],
        }
        .annotated(&m);
        assert!(vehicle.plan.is_feasible(2));
    }
    let incoming = request(0, 11, 9, 780, &m);
    s.incoming = Some(incoming.clone());
    (m, s, incoming)
}

pub fn dump() -> String {
    let (m, s, r) = scenario();
    let rv = build_rv_graph(&s, &r, &m, Metric::Budget);
    let vv = build_vv_graph(&s, &m, Metric::Budget);
    let mut out = format!("{rv}\n{vv}\nactions\n");
    for a in select_actions(&rv, &vv, 10) {
        let _ = writeln!(out, "  {a}");
        for p in &a.action.plans {
            let _ = writeln!(out, "    v{} {p}", p.vehicle);
        }
    }
    out
}

pub fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/three_vehicles.txt")
}
