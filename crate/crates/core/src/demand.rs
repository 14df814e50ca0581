//! Generative demand model: a Gaussian over the number of requests per day
//! plus a pool of historical trips weighted by how often each was seen.
//!
//! A chain is one synthetic day: draw a count, then draw that many trips
//! from the pool with replacement. Chains are generated offline and stored;
//! at decision time the planner only takes suffixes of stored chains.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LocationId, ModelError, Request, RequestId, RequestParams, Seconds};
use crate::network::TravelMatrix;
use crate::stream::{self, field, io_error, records, RequestRecord, StreamError};

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("history covers {0} distinct day(s); at least 2 are needed to fit the daily count")]
    TooFewDays(usize),
    #[error("demand model has an empty request pool")]
    EmptyPool,
    #[error("invalid daily count distribution: mean {mean}, std {std}")]
    BadCount { mean: f64, std: f64 },
    #[error("template weight must be at least 1")]
    ZeroWeight,
    #[error("chain store is empty; generate chains first (`mcvrp gen-chains`)")]
    EmptyStore,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One historical trip request and the day it was observed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub date: String,
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub t_req: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Template {
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub t_req: Seconds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub mean: f64,
    pub std: f64,
    /// Distinct templates with their multiplicities, ordered by template.
    pub pool: Vec<(Template, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandChain {
    pub id: u32,
    pub seed: u64,
    /// Gaussian draw before rounding; unknown for chains read from disk.
    pub raw_count: Option<f64>,
    /// Sorted by arrival time; ids are positions in the chain.
    pub requests: Vec<Request>,
}

impl DemandModel {
    pub fn new(mean: f64, std: f64, pool: Vec<(Template, u32)>) -> Result<Self, DemandError> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(DemandError::BadCount { mean, std });
        }
        if pool.is_empty() {
            return Err(DemandError::EmptyPool);
        }
        if pool.iter().any(|(_, w)| *w == 0) {
            return Err(DemandError::ZeroWeight);
        }
        Ok(Self { mean, std, pool })
    }

    /// Maximum-likelihood fit: mean and population standard deviation of
    /// the per-day counts, and identical trips merged into weighted
    /// templates.
    pub fn fit(history: &[HistoryRecord]) -> Result<Self, DemandError> {
        let mut per_day: BTreeMap<&str, usize> = BTreeMap::new();
        let mut pool: BTreeMap<Template, u32> = BTreeMap::new();
        for r in history {
            *per_day.entry(&r.date).or_default() += 1;
            *pool
                .entry(Template {
                    pickup: r.pickup,
                    dropoff: r.dropoff,
                    t_req: r.t_req,
                })
                .or_default() += 1;
        }
        if per_day.len() < 2 {
            return Err(DemandError::TooFewDays(per_day.len()));
        }
        let days = per_day.len() as f64;
        let mean = per_day.values().map(|&c| c as f64).sum::<f64>() / days;
        let var = per_day.values().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / days;
        Self::new(mean, var.sqrt(), pool.into_iter().collect())
    }

    fn count_distribution(&self) -> Normal<f64> {
        Normal::new(self.mean, self.std).expect("validated on construction")
    }

    fn pool_index(&self) -> WeightedIndex<u32> {
        WeightedIndex::new(self.pool.iter().map(|(_, w)| *w)).expect("validated on construction")
    }

    /// `m` templates drawn with replacement, probability proportional to weight.
    pub fn draw_templates<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<Template> {
        let index = self.pool_index();
        (0..m).map(|_| self.pool[index.sample(rng)].0).collect()
    }

    /// A synthetic day, fully determined by `seed`.
    pub fn generate_chain(
        &self,
        id: u32,
        seed: u64,
        matrix: &TravelMatrix,
        params: &RequestParams,
    ) -> Result<DemandChain, DemandError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = self.count_distribution().sample(&mut rng);
        let m = raw.round().max(0.0) as usize;
        let mut templates = self.draw_templates(m, &mut rng);
        templates.sort_by_key(|t| t.t_req);
        let requests = templates
            .iter()
            .enumerate()
            .map(|(k, t)| Request::new(RequestId(k as u32), t.pickup, t.dropoff, t.t_req, matrix, params))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DemandChain {
            id,
            seed,
            raw_count: Some(raw),
            requests,
        })
    }

    /// `gaussian <mean> <std>` followed by `template <pickup> <dropoff> <t_req> <weight>` lines.
    pub fn to_text(&self) -> String {
        let mut out = format!("gaussian {} {}\n", self.mean, self.std);
        for (t, w) in &self.pool {
            let _ = writeln!(out, "template {} {} {} {}", t.pickup, t.dropoff, t.t_req, w);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DemandError> {
        let mut count = None;
        let mut pool = Vec::new();
        for (line, fields) in records(text) {
            match (fields[0], fields.len()) {
                ("gaussian", 3) => count = Some((field(&fields, 1, line, "mean")?, field(&fields, 2, line, "std")?)),
                ("template", 5) => pool.push((
                    Template {
                        pickup: LocationId(field(&fields, 1, line, "pickup")?),
                        dropoff: LocationId(field(&fields, 2, line, "dropoff")?),
                        t_req: field(&fields, 3, line, "requested time")?,
                    },
                    field(&fields, 4, line, "weight")?,
                )),
                (other, _) => {
                    return Err(DemandError::Parse {
                        line,
                        message: format!("unexpected record {other:?}"),
                    })
                }
            }
        }
        let (mean, std) = count.ok_or(DemandError::Parse {
            line: 0,
            message: "missing `gaussian <mean> <std>` line".into(),
        })?;
        Self::new(mean, std, pool)
    }

    pub fn load(path: &Path) -> Result<Self, DemandError> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DemandError> {
        Ok(std::fs::write(path, self.to_text()).map_err(|e| io_error(path, e))?)
    }
}

/// `request <id> <pickup> <dropoff> <t_req> <date>` per line.
pub fn parse_history(text: &str) -> Result<Vec<HistoryRecord>, DemandError> {
    records(text)
        .map(|(line, fields)| {
            if fields[0] != "request" || fields.len() != 6 {
                return Err(DemandError::Parse {
                    line,
                    message: "expected `request <id> <pickup> <dropoff> <t_req> <date>`".into(),
                });
            }
            let r = stream::parse_request(&fields, line)?;
            Ok(HistoryRecord {
                date: fields[5].to_string(),
                pickup: r.pickup,
                dropoff: r.dropoff,
                t_req: r.t_req,
            })
        })
        .collect()
}

pub fn format_history(history: &[HistoryRecord]) -> String {
    let mut out = String::new();
    for (k, h) in history.iter().enumerate() {
        let _ = writeln!(out, "request {k} {} {} {} {}", h.pickup, h.dropoff, h.t_req, h.date);
    }
    out
}

impl DemandChain {
    pub fn to_text(&self) -> String {
        let mut out = format!("chain {} {}\n", self.id, self.seed);
        let recs: Vec<RequestRecord> = self
            .requests
            .iter()
            .map(|r| RequestRecord {
                id: r.id,
                pickup: r.pickup,
                dropoff: r.dropoff,
                t_req: r.requested_pickup,
            })
            .collect();
        out.push_str(&stream::format_stream(&recs));
        out
    }

    pub fn parse(text: &str, matrix: &TravelMatrix, params: &RequestParams) -> Result<Self, DemandError> {
        let mut header = None;
        let mut recs = Vec::new();
        for (line, fields) in records(text) {
            match (fields[0], fields.len(), header.is_some()) {
                ("chain", 3, false) => header = Some((field(&fields, 1, line, "chain id")?, field(&fields, 2, line, "seed")?)),
                ("request", 5, true) => recs.push(stream::parse_request(&fields, line)?),
                _ => {
                    return Err(DemandError::Parse {
                        line,
                        message: "expected a `chain <id> <seed>` header followed by request lines".into(),
                    })
                }
            }
        }
        let (id, seed) = header.ok_or(DemandError::Parse {
            line: 0,
            message: "missing `chain <id> <seed>` header".into(),
        })?;
        let requests = stream::materialize(&recs, matrix, params)?;
        Ok(Self {
            id,
            seed,
            raw_count: None,
            requests,
        })
    }

    /// Requests arriving strictly after `t`.
    pub fn suffix(&self, t: Seconds) -> &[Request] {
        let start = self.requests.partition_point(|r| r.arrival_time <= t);
        &self.requests[start..]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStore {
    pub chains: Vec<DemandChain>,
}

impl ChainStore {
    /// `count` chains with seeds `base_seed, base_seed + 1, ...`.
    pub fn generate(
        model: &DemandModel,
        count: usize,
        base_seed: u64,
        matrix: &TravelMatrix,
        params: &RequestParams,
    ) -> Result<Self, DemandError> {
        let chains = (0..count)
            .map(|k| model.generate_chain(k as u32, base_seed.wrapping_add(k as u64), matrix, params))
            .collect::<Result<_, _>>()?;
        Ok(Self { chains })
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    /// `n` chains chosen uniformly with replacement, each cut to the
    /// requests arriving after `t`.
    pub fn sample_futures<R: Rng + ?Sized>(&self, t: Seconds, n: usize, rng: &mut R) -> Result<Vec<&[Request]>, DemandError> {
        if self.chains.is_empty() {
            return Err(DemandError::EmptyStore);
        }
        Ok((0..n)
            .map(|_| self.chains[rng.random_range(0..self.chains.len())].suffix(t))
            .collect())
    }

    /// Writes `chain_<id>.txt` files into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), DemandError> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        for c in &self.chains {
            let path = dir.join(format!("chain_{:04}.txt", c.id));
            std::fs::write(&path, c.to_text()).map_err(|e| io_error(&path, e))?;
        }
        Ok(())
    }

    /// Reads every `chain_*.txt` in `dir`, ordered by file name.
    pub fn load_dir(dir: &Path, matrix: &TravelMatrix, params: &RequestParams) -> Result<Self, DemandError> {
        let entries = std::fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("chain_") && n.ends_with(".txt"))
            })
            .collect();
        paths.sort();
        let chains = paths
            .iter()
            .map(|p| {
                let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
                DemandChain::parse(&text, matrix, params)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if chains.is_empty() {
            return Err(DemandError::EmptyStore);
        }
        Ok(Self { chains })
    }
}
