//! Shared fixture for the benchmarks in `benches/`: a mid-day fleet on the
//! default synthetic city with the next request incoming.

use std::sync::Arc;

use paratransit_core::{
    Dispatcher, ExperimentConfig, FleetState, PolicyKind, Request, Scenario, SearchBudget, SyntheticSetup,
};

pub struct Fixture {
    pub scenario: Scenario,
    pub state: FleetState,
    pub request: Request,
}

/// Replays the first half of the first test day with the greedy policy on
/// `fleet` vehicles and stops at the next arrival.
pub fn fixture(fleet: usize) -> Fixture {
    let config = ExperimentConfig::default();
    let scenario = SyntheticSetup::default().scenario(&config).expect("synthetic scenario");
    let day = &scenario.days[0].1;
    let half = day.len() / 2;
    let policy = PolicyKind::GreedyBudget.build(&SearchBudget::default(), 0, None).expect("greedy");
    let mut d = Dispatcher::new(Arc::clone(&scenario.matrix), fleet, config.constraints(), policy);
    for r in &day[..half] {
        d.step(r.arrival_time, r.clone()).expect("replay");
    }
    let request = day[half].clone();
    d.advance_to(request.arrival_time);
    let mut state = d.state().clone();
    state.incoming = Some(request.clone());
    Fixture { scenario, state, request }
}
