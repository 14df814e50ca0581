//! Synthetic demand for a grid network: spatial hotspots, a two-peak
//! time-of-day profile, and a set of regular riders who repeat the same
//! trip on many days. History days and test days come from the same
//! process with disjoint seeds.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::demand::{HistoryRecord, Template};
use crate::model::{LocationId, RequestId, Seconds};
use crate::stream::RequestRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: u32,
    pub cols: u32,
    pub hotspots: usize,
    /// Grid cells around a hotspot that count as "near" it.
    pub hotspot_radius: u32,
    /// Share of trip ends placed near a hotspot.
    pub hotspot_share: f64,
    pub regular_riders: usize,
    /// Chance that a regular rider travels on a given day.
    pub regular_rate: f64,
    pub daily_mean: f64,
    pub daily_std: f64,
    pub day_length: Seconds,
    /// Requested times are rounded to this many seconds.
    pub time_step: Seconds,
    /// Requested times stay inside `[margin, day_length - margin]`.
    pub margin: Seconds,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 20,
            cols: 20,
            hotspots: 5,
            hotspot_radius: 2,
            hotspot_share: 0.6,
            regular_riders: 40,
            regular_rate: 0.7,
            daily_mean: 50.0,
            daily_std: 5.0,
            day_length: 36_000,
            time_step: 300,
            margin: 1800,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCity {
    config: SynthConfig,
    hotspots: Vec<(u32, u32)>,
    regulars: Vec<Template>,
}

const CITY_STREAM: u64 = 0x5eed_c17e;

impl SyntheticCity {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ CITY_STREAM);
        let hotspots = (0..config.hotspots)
            .map(|_| (rng.random_range(0..config.rows), rng.random_range(0..config.cols)))
            .collect();
        let mut city = Self {
            config,
            hotspots,
            regulars: Vec::new(),
        };
        city.regulars = (0..city.config.regular_riders).map(|_| city.trip(&mut rng)).collect();
        city
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    fn location<R: Rng>(&self, rng: &mut R) -> LocationId {
        let c = &self.config;
        let (r, col) = if !self.hotspots.is_empty() && rng.random_bool(c.hotspot_share) {
            let (hr, hc) = self.hotspots[rng.random_range(0..self.hotspots.len())];
            let jitter = |rng: &mut R, centre: u32, max: u32| {
                let d = rng.random_range(-(c.hotspot_radius as i64)..=c.hotspot_radius as i64);
                (centre as i64 + d).clamp(0, max as i64 - 1) as u32
            };
            (jitter(rng, hr, c.rows), jitter(rng, hc, c.cols))
        } else {
            (rng.random_range(0..c.rows), rng.random_range(0..c.cols))
        };
        LocationId(r * c.cols + col)
    }

    fn time<R: Rng>(&self, rng: &mut R) -> Seconds {
        let c = &self.config;
        let day = c.day_length as f64;
        // morning and afternoon peaks over a flat base
        let t = match rng.random_range(0..10) {
            0..=3 => Normal::new(0.2 * day, 0.08 * day).unwrap().sample(rng),
            4..=7 => Normal::new(0.7 * day, 0.1 * day).unwrap().sample(rng),
            _ => rng.random_range(0.0..day),
        };
        let t = (t / c.time_step as f64).round() as Seconds * c.time_step;
        t.clamp(c.margin, c.day_length - c.margin)
    }

    fn trip<R: Rng>(&self, rng: &mut R) -> Template {
        let pickup = self.location(rng);
        let dropoff = loop {
            let d = self.location(rng);
            if d != pickup {
                break d;
            }
        };
        Template {
            pickup,
            dropoff,
            t_req: self.time(rng),
        }
    }

    /// One day of trips, sorted by requested time.
    pub fn day(&self, seed: u64) -> Vec<Template> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trips: Vec<Template> = self
            .regulars
            .iter()
            .filter(|_| rng.random_bool(c.regular_rate))
            .copied()
            .collect();
        let expected_regulars = c.regular_riders as f64 * c.regular_rate;
        let others = Normal::new(c.daily_mean - expected_regulars, c.daily_std)
            .map(|n| n.sample(&mut rng).round().max(0.0) as usize)
            .unwrap_or(0);
        trips.extend((0..others).map(|_| self.trip(&mut rng)));
        trips.sort();
        trips.sort_by_key(|t| t.t_req);
        trips
    }

    /// `days` dated history days; day `k` uses seed `seed + k`.
    pub fn history(&self, days: usize, seed: u64) -> Vec<HistoryRecord> {
        (0..days)
            .flat_map(|k| {
                let date = format!("h{k:03}");
                self.day(seed.wrapping_add(k as u64)).into_iter().map(move |t| HistoryRecord {
                    date: date.clone(),
                    pickup: t.pickup,
                    dropoff: t.dropoff,
                    t_req: t.t_req,
                })
            })
            .collect()
    }

    /// A test day as a request stream with ids `0..n`.
    pub fn test_day(&self, seed: u64) -> Vec<RequestRecord> {
        self.day(seed)
            .into_iter()
            .enumerate()
            .map(|(k, t)| RequestRecord {
                id: RequestId(k as u32),
                pickup: t.pickup,
                dropoff: t.dropoff,
                t_req: t.t_req,
            })
            .collect()
    }
}
