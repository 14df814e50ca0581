//! Online dynamic vehicle routing for paratransit services.
//!
//! Trip requests arrive one at a time. At each decision epoch the engine
//! enumerates feasible insertions of the new trip into every vehicle's route
//! (the request-vehicle graph), finds the best single-request swaps between
//! vehicle pairs (the vehicle-vehicle graph), combines them into a short list
//! of fleet-wide actions, and ranks those actions with root-parallel Monte
//! Carlo tree search over sampled future demand.
//!
//! Module map:
//!
//! * [`network`] - location graph, all-pairs travel-time matrix, congestion.
//! * [`model`] - requests, annotated route plans, fleet state, actions.
//! * [`insertion`] - pickup/dropoff insertion heuristic.
//! * [`utility`] - budget and passenger-travel-time route scores.
//! * [`graphs`] - RV/VV graphs and fleet action generation.
//! * [`demand`] - generative demand model and pre-sampled chains.
//! * [`mcts`] - root-parallel UCT evaluation of candidate actions.
//! * [`sim`] - decision loop, policies, day replay, trace audit.
//! * [`stream`] - request stream files.
//! * [`synth`] - synthetic city: hotspots, regular riders, history and test days.
//! * [`experiment`] - experiment matrix, results tables, summaries.

pub mod demand;
pub mod experiment;
pub mod graphs;
pub mod insertion;
pub mod mcts;
pub mod model;
pub mod network;
pub mod sim;
pub mod stream;
pub mod synth;
pub mod utility;

pub use demand::{ChainStore, DemandChain, DemandModel, HistoryRecord, Template};
pub use graphs::{generate_actions, RvGraph, ScoredAction, VvGraph};
pub use insertion::{best_feasible_plan, feasible_plans, InsertionCandidate};
pub use mcts::{evaluate, Evaluation, SearchBudget};
pub use experiment::{ExperimentConfig, Scenario, SyntheticSetup};
pub use model::{
    Action, Constraints, FleetState, LocationId, Request, RequestId, RequestParams, RoutePlan,
    Seconds, Stop, StopKind, Trip, VehicleId, VehicleState,
};
pub use network::{LocationGraph, TravelMatrix};
pub use sim::{run_day, ClockMode, DayMetrics, DayOutcome, Dispatcher, Policy, PolicyKind};
pub use utility::{Horizon, Metric};
