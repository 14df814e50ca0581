//! Three vehicles, one incoming request: two insertions on v0, one on v1,
//! two on v2, and a swap edge between every vehicle pair. The emitted action
//! list is checked against a hand trace and a golden dump.

mod common;

use paratransit_core::graphs::{build_rv_graph, build_vv_graph};
use paratransit_core::model::Swap;
use paratransit_core::sim::check_action;
use paratransit_core::*;

use common::{dump, golden_path, scenario};

#[test]
fn graph_shape() {
    let (m, s, r) = scenario();
    let rv = build_rv_graph(&s, &r, &m, Metric::Budget);
    let degrees: Vec<usize> = (0..3).map(|v| rv.degree(VehicleId(v))).collect();
    assert_eq!(degrees, [2, 1, 2]);
    let vv = build_vv_graph(&s, &m, Metric::Budget);
    let pairs: Vec<(u32, u32)> = vv.edges.iter().map(|e| (e.from.0, e.to.0)).collect();
    assert_eq!(pairs, [(0, 1), (0, 2), (1, 2)]);
}

/// Budget utility of a plan is `t_max - now - (time with someone aboard)`;
/// with `now = 0` every figure below comes from the stop arrivals.
///
/// RV edges (occupied span -> utility):
///   v0 #0 [P0 660, P1 720, D0 780, D1 1320] 660..1320 -> 2940
///   v0 #1 [P1 600, P0 660, D0 780, D1 1320] 600..1320 -> 2880
///   v1 #0 [P0 660, D0 780, P2 840, D2 1200] 120 + 360 -> 3120
///   v2 #0 [P0 660, P3 660, D0 780, D3 960]  660..960  -> 3300
///   v2 #1 [P3 540, P0 660, D0 780, D3 960]  540..960  -> 3180
/// Current plans: v0 600..1200 -> 3000, v1 660..1020 -> 3240,
/// v2 420..840 -> 3180. Swaps (after minus before):
///   r1 v0->v1: 3600 + (3600 - 600) - 3000 - 3240 = 360
///   r1 v0->v2: 3600 + (3600 - 660) - 3000 - 3180 = 240
///   r2 v1->v2: 3600 + (3600 - 540) - 3240 - 3180 = 120
/// Each RV edge is recorded bare and then with the one swap that avoids its
/// vehicle: v0 takes v1->v2, v1 takes v0->v2, v2 takes v0->v1.
#[test]
fn hand_trace() {
    let (m, s, r) = scenario();
    let actions = generate_actions(&s, &r, &m, 10, Metric::Budget);
    let swap = |request, from, to| Swap {
        request: RequestId(request),
        from: VehicleId(from),
        to: VehicleId(to),
    };
    let expected: Vec<(u32, Vec<Swap>, i64)> = vec![
        (2, vec![swap(1, 0, 1)], 3300 + 360),
        (2, vec![swap(1, 0, 1)], 3180 + 360),
        (1, vec![swap(1, 0, 2)], 3120 + 240),
        (2, vec![], 3300),
        (2, vec![], 3180),
        (1, vec![], 3120),
        (0, vec![swap(2, 1, 2)], 2940 + 120),
        (0, vec![swap(2, 1, 2)], 2880 + 120),
        (0, vec![], 2940),
        (0, vec![], 2880),
    ];
    let got: Vec<(u32, Vec<Swap>, i64)> = actions
        .iter()
        .map(|a| (a.action.serving.unwrap().0, a.action.swaps.clone(), a.utility))
        .collect();
    assert_eq!(got, expected);
    for a in &actions {
        check_action(&s, &r, &a.action, &m).unwrap();
    }
    // truncation keeps the head of the same ordering
    let top = generate_actions(&s, &r, &m, 4, Metric::Budget);
    assert_eq!(top, actions[..4]);
}

#[test]
fn golden_dump() {
    let path = golden_path();
    let got = dump();
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).unwrap();
    assert_eq!(got, want, "golden mismatch; rerun with BLESS=1 after checking the diff");
}
