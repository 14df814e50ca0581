//! Root-parallel UCT over sampled futures.
//!
//! Each sampled chain gets its own tree rooted at the current epoch, with the
//! candidate actions as root edges. Within a tree the chain is the whole
//! future, so transitions are deterministic and there are no chance nodes.
//! Returns count future requests served (reward 1 each, undiscounted) up to
//! `depth` future requests, split between tree levels and a greedy rollout.
//! Root scores are averaged across trees and the best mean wins; ties go to
//! the lower action index, i.e. the higher myopic utility.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::{generate_actions, ScoredAction};
use crate::insertion::best_feasible_plan;
use crate::model::{Action, FleetState, Request, RequestId, RoutePlan, VehicleId};
use crate::network::TravelMatrix;
use crate::utility::{Horizon, Metric};

/// Sampled future requests are renumbered from here so they never collide
/// with real request ids.
pub const FUTURE_ID_BASE: u32 = 1 << 31;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("no candidate actions to evaluate")]
    NoActions,
    #[error("search budget needs a finite iteration count or cutoff")]
    Unbounded,
    #[error("incoming request is not set on the root state")]
    NoIncoming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Simulations per tree; `None` runs until the cutoff.
    pub iterations: Option<u64>,
    /// Wall-clock limit for the whole evaluation.
    pub cutoff: Option<Duration>,
    pub c_uct: f64,
    /// Future requests considered per simulation.
    pub depth: usize,
    /// Branching factor at interior nodes.
    pub k_max: usize,
    pub n_chains: usize,
    /// Simulations each tree runs before yielding to the next one.
    pub batch: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            iterations: Some(1000),
            cutoff: None,
            c_uct: std::f64::consts::SQRT_2,
            depth: 20,
            k_max: 10,
            n_chains: 25,
            batch: 8,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.iterations.is_none() && self.cutoff.is_none() {
            return Err(SearchError::Unbounded);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Index into the candidate list.
    pub chosen: usize,
    /// Mean root score per action across the trees that visited it.
    pub scores: Vec<f64>,
    /// Root score per tree (outer) and action (inner); `None` if unvisited.
    pub per_tree: Vec<Vec<Option<f64>>>,
    pub simulations: Vec<u64>,
    pub elapsed: Duration,
}

/// Visit statistics of one child as seen by its parent. `value` already
/// includes the edge reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildStats {
    pub visits: u64,
    pub value: f64,
}

/// First unvisited child in order, else argmax of `Q + c sqrt(ln N / n)`
/// (first index on ties).
pub fn uct_select(children: &[ChildStats], parent_visits: u64, c_uct: f64) -> usize {
    if let Some(k) = children.iter().position(|s| s.visits == 0) {
        return k;
    }
    let ln_n = (parent_visits.max(1) as f64).ln();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, s) in children.iter().enumerate() {
        let score = s.value + c_uct * (ln_n / s.visits as f64).sqrt();
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    best
}

pub(crate) fn as_future(r: &Request) -> Request {
    Request {
        id: RequestId(FUTURE_ID_BASE | r.id.0),
        ..r.clone()
    }
}

/// Highest-utility single insertion across the fleet: the best RV edge,
/// without building the graph. Ties go to the lower vehicle, then the lower
/// insertion point.
pub fn greedy_insertion(state: &FleetState, request: &Request, matrix: &TravelMatrix, metric: Metric) -> Option<RoutePlan> {
    let trip = request.trip();
    let horizon = Horizon::clamped(state.now, state.constraints.t_max);
    let mut best: Option<(i64, RoutePlan)> = None;
    for v in &state.vehicles {
        if let Some(c) = best_feasible_plan(&v.plan, &trip, matrix, &state.constraints, metric, &horizon) {
            if best.as_ref().is_none_or(|(u, _)| c.utility > *u) {
                best = Some((c.utility, c.candidate.plan));
            }
        }
    }
    best.map(|(_, plan)| plan)
}

/// Greedy default policy over the next `remaining_depth` requests of
/// `suffix`; returns how many it serves.
pub fn rollout(mut state: FleetState, suffix: &[Request], remaining_depth: usize, matrix: &TravelMatrix, metric: Metric) -> u64 {
    let mut served = 0;
    for r in suffix.iter().take(remaining_depth) {
        let r = as_future(r);
        state.advance_to(r.arrival_time, matrix, |_| {});
        if let Some(plan) = greedy_insertion(&state, &r, matrix, metric) {
            let v: VehicleId = plan.vehicle;
            state.vehicles[v.index()].plan = plan;
            served += 1;
        }
    }
    served
}

#[derive(Debug, Clone)]
struct Node {
    /// Post-decision state.
    state: FleetState,
    /// Future requests already decided on the path to this node.
    depth: usize,
    visits: u64,
    total: u64,
    /// Simulations that ended here (terminal or rollout start).
    leaf_visits: u64,
    leaf_total: u64,
    /// `(edge reward, child index)`; `None` until expanded.
    children: Option<Vec<(u64, usize)>>,
}

impl Node {
    fn new(state: FleetState, depth: usize) -> Self {
        Self {
            state,
            depth,
            visits: 0,
            total: 0,
            leaf_visits: 0,
            leaf_total: 0,
            children: None,
        }
    }
}

struct Tree<'a> {
    nodes: Vec<Node>,
    /// Root children in action order.
    roots: Vec<usize>,
    root_visits: u64,
    future: &'a [Request],
    simulations: u64,
}

struct Ctx<'a> {
    matrix: &'a TravelMatrix,
    metric: Metric,
    budget: &'a SearchBudget,
}

impl<'a> Tree<'a> {
    fn new(root: &FleetState, actions: &[ScoredAction], future: &'a [Request]) -> Self {
        let nodes: Vec<Node> = actions.iter().map(|a| Node::new(root.applied(&a.action), 0)).collect();
        Self {
            roots: (0..nodes.len()).collect(),
            nodes,
            root_visits: 0,
            future,
            simulations: 0,
        }
    }

    fn stats(&self, edges: impl Iterator<Item = (u64, usize)>) -> Vec<ChildStats> {
        edges
            .map(|(reward, k)| {
                let n = &self.nodes[k];
                ChildStats {
                    visits: n.visits,
                    value: if n.visits == 0 {
                        0.0
                    } else {
                        reward as f64 + n.total as f64 / n.visits as f64
                    },
                }
            })
            .collect()
    }

    fn simulate(&mut self, ctx: &Ctx) {
        let stats = self.stats(self.roots.iter().map(|&k| (0, k)));
        let pick = self.roots[uct_select(&stats, self.root_visits, ctx.budget.c_uct)];
        self.descend(pick, ctx);
        self.root_visits += 1;
        self.simulations += 1;
    }

    fn expand(&mut self, at: usize, ctx: &Ctx) {
        let node = &self.nodes[at];
        let request = as_future(&self.future[node.depth]);
        let mut pre = node.state.clone();
        pre.begin_epoch(request.arrival_time, request.clone(), ctx.matrix);
        let actions = generate_actions(&pre, &request, ctx.matrix, ctx.budget.k_max, ctx.metric);
        let depth = node.depth + 1;
        let children = if actions.is_empty() {
            vec![(0, Action::reject())]
        } else {
            actions.into_iter().map(|a| (1, a.action)).collect()
        };
        let mut edges = Vec::with_capacity(children.len());
        for (reward, action) in children {
            self.nodes.push(Node::new(pre.applied(&action), depth));
            edges.push((reward, self.nodes.len() - 1));
        }
        self.nodes[at].children = Some(edges);
    }

    /// Runs one simulation from node `at`; returns its return.
    fn descend(&mut self, at: usize, ctx: &Ctx) -> u64 {
        let node = &self.nodes[at];
        let horizon = ctx.budget.depth.min(self.future.len());
        let ret = if node.depth >= horizon || node.visits == 0 {
            // terminal, or a fresh leaf: evaluate by rollout
            let remaining = horizon.saturating_sub(node.depth);
            let ret = rollout(node.state.clone(), &self.future[node.depth..], remaining, ctx.matrix, ctx.metric);
            let node = &mut self.nodes[at];
            node.leaf_visits += 1;
            node.leaf_total += ret;
            ret
        } else {
            if node.children.is_none() {
                self.expand(at, ctx);
            }
            let edges = self.nodes[at].children.clone().expect("expanded");
            let stats = self.stats(edges.iter().copied());
            let (reward, child) = edges[uct_select(&stats, self.nodes[at].visits, ctx.budget.c_uct)];
            reward + self.descend(child, ctx)
        };
        let node = &mut self.nodes[at];
        node.visits += 1;
        node.total += ret;
        ret
    }

    fn root_scores(&self) -> Vec<Option<f64>> {
        self.roots
            .iter()
            .map(|&k| {
                let n = &self.nodes[k];
                (n.visits > 0).then(|| n.total as f64 / n.visits as f64)
            })
            .collect()
    }

    /// Checks that every node's counts equal the simulations that passed
    /// through it.
    fn audit(&self) -> Result<(), String> {
        for (k, n) in self.nodes.iter().enumerate() {
            let (mut visits, mut total) = (n.leaf_visits, n.leaf_total);
            for &(reward, c) in n.children.iter().flatten() {
                let child = &self.nodes[c];
                visits += child.visits;
                total += child.total + reward * child.visits;
            }
            if (visits, total) != (n.visits, n.total) {
                return Err(format!("node {k}: counts ({}, {}) != children ({visits}, {total})", n.visits, n.total));
            }
        }
        let root: u64 = self.roots.iter().map(|&k| self.nodes[k].visits).sum();
        if root != self.root_visits || root != self.simulations {
            return Err(format!("root visits {} vs simulations {}", root, self.simulations));
        }
        Ok(())
    }
}

/// Scores `actions` (sorted by myopic utility, best first) against the
/// sampled `futures`, one tree per future, and picks the best mean.
pub fn evaluate(
    actions: &[ScoredAction],
    state: &FleetState,
    futures: &[&[Request]],
    matrix: &TravelMatrix,
    metric: Metric,
    budget: &SearchBudget,
) -> Result<Evaluation, SearchError> {
    if actions.is_empty() {
        return Err(SearchError::NoActions);
    }
    budget.validate()?;
    if state.incoming.is_none() {
        return Err(SearchError::NoIncoming);
    }
    let start = Instant::now();
    let deadline = budget.cutoff.map(|c| start + c);
    let ctx = Ctx { matrix, metric, budget };
    let limit = budget.iterations.unwrap_or(u64::MAX);
    let mut trees: Vec<Tree> = if actions.len() == 1 {
        Vec::new()
    } else {
        futures.iter().map(|f| Tree::new(state, actions, f)).collect()
    };

    // Trees advance in rounds so each gets a fair share of the cutoff even
    // when there are fewer cores than trees.
    loop {
        let expired = || deadline.is_some_and(|d| Instant::now() >= d);
        if expired() || trees.iter().all(|t| t.simulations >= limit) {
            break;
        }
        trees.par_iter_mut().for_each(|tree| {
            for _ in 0..budget.batch.max(1) {
                if tree.simulations >= limit || expired() {
                    break;
                }
                tree.simulate(&ctx);
            }
        });
    }

    if cfg!(debug_assertions) {
        for t in &trees {
            if let Err(e) = t.audit() {
                panic!("search backup audit failed: {e}");
            }
        }
    }

    let per_tree: Vec<Vec<Option<f64>>> = trees.iter().map(Tree::root_scores).collect();
    let scores: Vec<f64> = (0..actions.len())
        .map(|a| {
            let seen: Vec<f64> = per_tree.iter().filter_map(|row| row[a]).collect();
            if seen.is_empty() {
                f64::NEG_INFINITY
            } else {
                seen.iter().sum::<f64>() / seen.len() as f64
            }
        })
        .collect();
    let mut chosen = 0;
    for (a, &s) in scores.iter().enumerate() {
        if s > scores[chosen] {
            chosen = a;
        }
    }
    Ok(Evaluation {
        chosen,
        scores,
        per_tree,
        simulations: trees.iter().map(|t| t.simulations).collect(),
        elapsed: start.elapsed(),
    })
}
