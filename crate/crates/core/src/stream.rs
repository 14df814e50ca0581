//! Line-oriented request files.
//!
//! ```text
//! # comment
//! request <id> <pickup> <dropoff> <t_req_seconds>
//! ```
//!
//! History files append a date column to every request line. Windows are
//! not stored; they are derived when records are materialized.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LocationId, ModelError, Request, RequestId, RequestParams, Seconds};
use crate::network::TravelMatrix;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("stream is not sorted by arrival time: request {0} arrives before its predecessor")]
    Unsorted(RequestId),
    #[error("duplicate request id {0}")]
    DuplicateId(RequestId),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: RequestId,
    pub pickup: LocationId,
    pub dropoff: LocationId,
    pub t_req: Seconds,
}

impl RequestRecord {
    pub fn materialize(&self, matrix: &TravelMatrix, params: &RequestParams) -> Result<Request, ModelError> {
        Request::new(self.id, self.pickup, self.dropoff, self.t_req, matrix, params)
    }
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> StreamError {
    StreamError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Splits `text` into (line number, fields) for every non-blank,
/// non-comment line.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        (!line.is_empty()).then(|| (i + 1, line.split_whitespace().collect()))
    })
}

pub(crate) fn field<T: std::str::FromStr>(fields: &[&str], at: usize, line: usize, what: &str) -> Result<T, StreamError> {
    fields
        .get(at)
        .ok_or_else(|| StreamError::Parse {
            line,
            message: format!("missing {what}"),
        })?
        .parse()
        .map_err(|_| StreamError::Parse {
            line,
            message: format!("bad {what} {:?}", fields[at]),
        })
}

pub(crate) fn parse_request(fields: &[&str], line: usize) -> Result<RequestRecord, StreamError> {
    Ok(RequestRecord {
        id: RequestId(field(fields, 1, line, "request id")?),
        pickup: LocationId(field(fields, 2, line, "pickup")?),
        dropoff: LocationId(field(fields, 3, line, "dropoff")?),
        t_req: field(fields, 4, line, "requested time")?,
    })
}

pub(crate) fn format_request(out: &mut String, r: &RequestRecord) {
    let _ = write!(out, "request {} {} {} {}", r.id, r.pickup, r.dropoff, r.t_req);
}

pub fn parse_stream(text: &str) -> Result<Vec<RequestRecord>, StreamError> {
    records(text)
        .map(|(line, fields)| match fields[0] {
            "request" if fields.len() == 5 => parse_request(&fields, line),
            other => Err(StreamError::Parse {
                line,
                message: format!("expected `request <id> <pickup> <dropoff> <t_req>`, found {other:?}"),
            }),
        })
        .collect()
}

pub fn format_stream(records: &[RequestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        format_request(&mut out, r);
        out.push('\n');
    }
    out
}

pub fn load_stream(path: &Path) -> Result<Vec<RequestRecord>, StreamError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_stream(&text)
}

pub fn save_stream(path: &Path, records: &[RequestRecord]) -> Result<(), StreamError> {
    std::fs::write(path, format_stream(records)).map_err(|e| io_error(path, e))
}

/// Materializes records into requests sorted by arrival time (stable, so
/// equal arrivals keep file order). Ids must be unique.
pub fn materialize(records: &[RequestRecord], matrix: &TravelMatrix, params: &RequestParams) -> Result<Vec<Request>, StreamError> {
    let mut ids = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if !ids.insert(r.id) {
            return Err(StreamError::DuplicateId(r.id));
        }
        out.push(r.materialize(matrix, params)?);
    }
    out.sort_by_key(|r| r.arrival_time);
    Ok(out)
}

/// Errors unless arrival times are non-decreasing.
pub fn check_sorted(requests: &[Request]) -> Result<(), StreamError> {
    match requests.windows(2).find(|w| w[1].arrival_time < w[0].arrival_time) {
        Some(w) => Err(StreamError::Unsorted(w[1].id)),
        None => Ok(()),
    }
}
