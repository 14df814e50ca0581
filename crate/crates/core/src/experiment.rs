//! Experiment matrix: every (fleet size, policy, day) cell is one replayed
//! day. Results are CSV rows keyed by a hash of the configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::demand::{ChainStore, DemandError, DemandModel};
use crate::mcts::SearchBudget;
use crate::model::{Constraints, Request, RequestParams, Seconds};
use crate::network::{build_travel_matrix, LocationGraph, NetworkError, TravelMatrix};
use crate::sim::{median, run_day, ClockMode, DayOutcome, PolicyKind, SimError};
use crate::stream::{self, StreamError};
use crate::synth::{SynthConfig, SyntheticCity};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("no chain store at {0}; run `mcvrp gen-chains` first")]
    MissingChains(PathBuf),
    #[error("day {day}, policy {policy}, fleet {fleet}: {source}")]
    Run {
        day: String,
        policy: PolicyKind,
        fleet: usize,
        #[source]
        source: SimError,
    },
    #[error("day {day}, policy {policy}, fleet {fleet}: execution trace audit failed: {details}")]
    Audit {
        day: String,
        policy: PolicyKind,
        fleet: usize,
        details: String,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("results table {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub iterations: Option<u64>,
    pub depth: usize,
    pub n_chains: usize,
    pub c_uct: f64,
    /// Wall-clock limit per decision; absent means no limit.
    pub cutoff_seconds: Option<f64>,
    pub seed: u64,
    pub k_max: usize,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            iterations: Some(1000),
            depth: 20,
            n_chains: 25,
            c_uct: std::f64::consts::SQRT_2,
            cutoff_seconds: None,
            seed: 0,
            k_max: 10,
        }
    }
}

impl MctsConfig {
    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            iterations: self.iterations,
            cutoff: self.cutoff_seconds.map(Duration::from_secs_f64),
            c_uct: self.c_uct,
            depth: self.depth,
            k_max: self.k_max,
            n_chains: self.n_chains,
            ..SearchBudget::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fleet_sizes: Vec<usize>,
    pub capacity: u32,
    /// Seconds between a request arriving and its requested pickup time.
    pub lead_time: Seconds,
    /// Seconds of slack on either side of the requested pickup.
    pub time_window: Seconds,
    pub day_length: Seconds,
    pub policies: Vec<PolicyKind>,
    pub clock: ClockMode,
    /// Uniform travel-time factor applied to the network (1 = free flow).
    pub congestion: f64,
    pub network: PathBuf,
    pub chains: PathBuf,
    /// Request stream files, one per test day.
    pub days: Vec<PathBuf>,
    pub mcts: MctsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            fleet_sizes: vec![3, 4, 5],
            capacity: 8,
            lead_time: 3600,
            time_window: 900,
            day_length: 36_000,
            policies: PolicyKind::ALL.to_vec(),
            clock: ClockMode::Serialized,
            congestion: 1.0,
            network: PathBuf::from("data/network.txt"),
            chains: PathBuf::from("data/chains"),
            days: Vec::new(),
            mcts: MctsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.fleet_sizes.is_empty() || self.fleet_sizes.contains(&0) {
            return fail("fleet_sizes must be non-empty and positive");
        }
        if self.capacity == 0 {
            return fail("capacity must be positive");
        }
        if self.policies.is_empty() {
            return fail("no policies selected");
        }
        if self.mcts.iterations.is_none() && self.mcts.cutoff_seconds.is_none() {
            return fail("mcts needs iterations or cutoff_seconds");
        }
        if self.mcts.cutoff_seconds.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return fail("mcts.cutoff_seconds must be positive");
        }
        if self.mcts.n_chains == 0 || self.mcts.k_max == 0 {
            return fail("mcts.n_chains and mcts.k_max must be positive");
        }
        if !(self.congestion >= 1.0) {
            return fail("congestion factor must be at least 1");
        }
        Ok(())
    }

    pub fn request_params(&self) -> RequestParams {
        RequestParams {
            time_window: self.time_window,
            lead_time: self.lead_time,
            day_length: self.day_length,
        }
    }

    pub fn constraints(&self) -> Constraints {
        Constraints {
            capacity: self.capacity,
            t_max: self.day_length,
        }
    }

    /// Short hex digest of the configuration and the day names it runs on.
    pub fn hash(&self, day_names: &[String]) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        for d in day_names {
            h.update(d.as_bytes());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Everything a run needs in memory: travel times, stored chains, test days.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub matrix: Arc<TravelMatrix>,
    pub chains: Arc<ChainStore>,
    pub days: Vec<(String, Vec<Request>)>,
}

impl Scenario {
    /// Loads the files named in `config`, with congestion applied before
    /// request windows are derived.
    pub fn load(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let graph = LocationGraph::load(&config.network)?;
        let matrix = build_travel_matrix(&graph)?.apply_congestion(config.congestion)?;
        let params = config.request_params();
        let needs_chains = config.policies.iter().any(|p| p.uses_search());
        let chains = if needs_chains {
            if !config.chains.is_dir() {
                return Err(ExperimentError::MissingChains(config.chains.clone()));
            }
            ChainStore::load_dir(&config.chains, &matrix, &params)?
        } else {
            ChainStore::default()
        };
        let days = config
            .days
            .iter()
            .map(|p| {
                let name = p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                let records = stream::load_stream(p)?;
                Ok((name, stream::materialize(&records, &matrix, &params)?))
            })
            .collect::<Result<_, ExperimentError>>()?;
        Ok(Self {
            matrix: Arc::new(matrix),
            chains: Arc::new(chains),
            days,
        })
    }
}

/// The synthetic desk-scale dataset: a grid city, a fitted demand model,
/// stored chains and held-out test days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSetup {
    pub city: SynthConfig,
    pub edge_seconds: u32,
    pub city_seed: u64,
    pub history_days: usize,
    pub history_seed: u64,
    pub chains: usize,
    pub chain_seed: u64,
    pub test_days: usize,
    pub test_seed: u64,
}

impl Default for SyntheticSetup {
    fn default() -> Self {
        Self {
            city: SynthConfig::default(),
            edge_seconds: 90,
            city_seed: 1,
            history_days: 114,
            history_seed: 10_000,
            chains: 100,
            chain_seed: 20_000,
            test_days: 15,
            test_seed: 30_000,
        }
    }
}

pub struct SyntheticData {
    pub graph: LocationGraph,
    pub model: DemandModel,
    pub city: SyntheticCity,
}

impl SyntheticSetup {
    pub fn build(&self) -> Result<SyntheticData, ExperimentError> {
        let graph = LocationGraph::grid(self.city.rows, self.city.cols, self.edge_seconds)?;
        let city = SyntheticCity::new(self.city.clone(), self.city_seed);
        let model = DemandModel::fit(&city.history(self.history_days, self.history_seed))?;
        Ok(SyntheticData { graph, model, city })
    }

    /// In-memory scenario under `config` (congestion included).
    pub fn scenario(&self, config: &ExperimentConfig) -> Result<Scenario, ExperimentError> {
        let data = self.build()?;
        let matrix = build_travel_matrix(&data.graph)?.apply_congestion(config.congestion)?;
        let params = config.request_params();
        let chains = ChainStore::generate(&data.model, self.chains, self.chain_seed, &matrix, &params)?;
        let days = (0..self.test_days)
            .map(|k| {
                let records = data.city.test_day(self.test_seed + k as u64);
                Ok((format!("test{k:02}"), stream::materialize(&records, &matrix, &params)?))
            })
            .collect::<Result<_, ExperimentError>>()?;
        Ok(Scenario {
            matrix: Arc::new(matrix),
            chains: Arc::new(chains),
            days,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub policy: PolicyKind,
    pub fleet: usize,
    pub day: String,
    pub total: usize,
    pub served: usize,
    pub service_rate: f64,
    pub median_compute: f64,
    pub mean_compute: f64,
    pub max_compute: f64,
    pub seed: u64,
    pub duplicate: bool,
}

/// One completed cell, with the full outcome for callers that need traces.
pub struct Cell {
    pub row: ResultRow,
    pub outcome: DayOutcome,
}

/// Runs the full cross product. A failed audit is an error, not a row.
pub fn run_experiment(config: &ExperimentConfig, scenario: &Scenario) -> Result<Vec<Cell>, ExperimentError> {
    config.validate()?;
    let names: Vec<String> = scenario.days.iter().map(|(n, _)| n.clone()).collect();
    let hash = config.hash(&names);
    let budget = config.mcts.budget();
    let cells: Vec<(usize, PolicyKind, usize)> = config
        .fleet_sizes
        .iter()
        .flat_map(|&f| config.policies.iter().flat_map(move |&p| (0..scenario.days.len()).map(move |d| (f, p, d))))
        .collect();
    cells
        .into_par_iter()
        .map(|(fleet, policy, d)| {
            let (day, requests) = &scenario.days[d];
            let fail = |source| ExperimentError::Run {
                day: day.clone(),
                policy,
                fleet,
                source,
            };
            let chains = policy.uses_search().then(|| scenario.chains.clone());
            let p = policy.build(&budget, config.mcts.seed, chains).map_err(fail)?;
            let outcome = run_day(requests, fleet, config.constraints(), p, scenario.matrix.clone(), config.clock).map_err(fail)?;
            if !outcome.audit.is_clean() {
                return Err(ExperimentError::Audit {
                    day: day.clone(),
                    policy,
                    fleet,
                    details: outcome.audit.details.join("; "),
                });
            }
            let m = &outcome.metrics;
            Ok(Cell {
                row: ResultRow {
                    config_hash: hash.clone(),
                    policy,
                    fleet,
                    day: day.clone(),
                    total: m.total,
                    served: m.served,
                    service_rate: m.service_rate,
                    median_compute: m.median_compute,
                    mean_compute: m.mean_compute,
                    max_compute: m.compute_seconds.iter().copied().fold(0.0, f64::max),
                    seed: config.mcts.seed,
                    duplicate: false,
                },
                outcome,
            })
        })
        .collect()
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

/// Appends `rows` to the CSV at `path`, creating it with a header if
/// needed. Rows whose (hash, policy, fleet, day) already exist are written
/// with `duplicate` set. Returns the rows as written.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<Vec<ResultRow>, ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    };
    let existing = if path.exists() { read_rows(path)? } else { Vec::new() };
    let mut seen: BTreeSet<(String, PolicyKind, usize, String)> = existing
        .iter()
        .map(|r| (r.config_hash.clone(), r.policy, r.fleet, r.day.clone()))
        .collect();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_error(path, e))?;
    let mut writer = csv::WriterBuilder::new().has_headers(existing.is_empty() && file.metadata().map_or(true, |m| m.len() == 0)).from_writer(file);
    let mut written = Vec::with_capacity(rows.len());
    for r in rows {
        let key = (r.config_hash.clone(), r.policy, r.fleet, r.day.clone());
        let row = ResultRow {
            duplicate: r.duplicate || !seen.insert(key),
            ..r.clone()
        };
        writer.serialize(&row).map_err(csv_err)?;
        written.push(row);
    }
    writer.flush().map_err(|e| io_error(path, e))?;
    Ok(written)
}

/// Linear-interpolation quantile (the common "type 7" definition) of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub fleet: usize,
    pub days: usize,
    pub median_rate: f64,
    pub q1_rate: f64,
    pub q3_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub median_compute: f64,
}

/// Per (policy, fleet) service-rate quantiles, ordered by policy then
/// fleet. Rows flagged as duplicates are left out.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(PolicyKind, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.duplicate) {
        let g = groups.entry((r.policy, r.fleet)).or_default();
        g.0.push(r.service_rate);
        g.1.push(r.median_compute);
    }
    groups
        .into_iter()
        .map(|((policy, fleet), (mut rates, mut compute))| {
            rates.sort_by(f64::total_cmp);
            compute.sort_by(f64::total_cmp);
            SummaryRow {
                policy,
                fleet,
                days: rates.len(),
                median_rate: quantile(&rates, 0.5),
                q1_rate: quantile(&rates, 0.25),
                q3_rate: quantile(&rates, 0.75),
                min_rate: rates[0],
                max_rate: rates[rates.len() - 1],
                median_compute: median(&compute),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub policy: PolicyKind,
    pub fleet: usize,
    pub day: String,
    pub base_rate: f64,
    pub congested_rate: f64,
    /// Congested minus base, in percentage points.
    pub delta_points: f64,
    /// Change relative to the base rate, in percent.
    pub delta_percent: f64,
}

/// Joins base and congested runs on (policy, fleet, day).
pub fn robustness(base: &[ResultRow], congested: &[ResultRow]) -> Vec<RobustnessRow> {
    let index: BTreeMap<(PolicyKind, usize, &str), f64> = congested
        .iter()
        .filter(|r| !r.duplicate)
        .map(|r| ((r.policy, r.fleet, r.day.as_str()), r.service_rate))
        .collect();
    let mut out: Vec<RobustnessRow> = base
        .iter()
        .filter(|r| !r.duplicate)
        .filter_map(|r| {
            let c = *index.get(&(r.policy, r.fleet, r.day.as_str()))?;
            Some(RobustnessRow {
                policy: r.policy,
                fleet: r.fleet,
                day: r.day.clone(),
                base_rate: r.service_rate,
                congested_rate: c,
                delta_points: c - r.service_rate,
                delta_percent: if r.service_rate > 0.0 { 100.0 * (c - r.service_rate) / r.service_rate } else { 0.0 },
            })
        })
        .collect();
    out.sort_by(|a, b| (a.policy, a.fleet, &a.day).cmp(&(b.policy, b.fleet, &b.day)));
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}
