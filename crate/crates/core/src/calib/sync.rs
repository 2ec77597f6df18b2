use serde::{Deserialize, Serialize};

use super::CalibError;

/// Largest timestamp gap (ms) accepted between matched frames.
pub const DEFAULT_MAX_GAP_MS: i64 = 17;

/// Per-frame UTC timestamps (milliseconds) of one sensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampStream {
    pub sensor_id: String,
    pub timestamps: Vec<i64>,
}

/// One line of a timestamp file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampRecord {
    pub sensor_id: String,
    pub frame: usize,
    pub utc_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub reference: usize,
    pub other: usize,
    /// `other - reference` in milliseconds.
    pub delta_ms: i64,
}

impl TimestampStream {
    pub fn new(sensor_id: impl Into<String>, timestamps: Vec<i64>) -> Result<Self, CalibError> {
        let sensor_id = sensor_id.into();
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(CalibError::NonMonotonicTimestamps { sensor_id, index: w + 1 });
        }
        Ok(Self { sensor_id, timestamps })
    }

    pub fn records(&self) -> Vec<TimestampRecord> {
        self.timestamps
            .iter()
            .enumerate()
            .map(|(frame, &utc_ms)| TimestampRecord { sensor_id: self.sensor_id.clone(), frame, utc_ms })
            .collect()
    }

    /// Groups records by sensor, in order of first appearance. Records within a
    /// sensor are ordered by frame index.
    pub fn from_records(records: &[TimestampRecord]) -> Result<Vec<TimestampStream>, CalibError> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: std::collections::HashMap<&str, Vec<(usize, i64)>> = Default::default();
        for r in records {
            if !grouped.contains_key(r.sensor_id.as_str()) {
                order.push(r.sensor_id.clone());
            }
            grouped.entry(&r.sensor_id).or_default().push((r.frame, r.utc_ms));
        }
        order
            .into_iter()
            .map(|id| {
                let mut v = grouped.remove(id.as_str()).unwrap_or_default();
                v.sort_by_key(|&(f, _)| f);
                TimestampStream::new(id, v.into_iter().map(|(_, t)| t).collect())
            })
            .collect()
    }
}

/// Matches every reference frame to the nearest timestamp of `other`,
/// dropping pairs further apart than `max_gap_ms`. Equidistant candidates
/// resolve to the earlier frame.
pub fn match_streams(reference: &TimestampStream, other: &TimestampStream, max_gap_ms: i64) -> Vec<MatchedPair> {
    let ts = &other.timestamps;
    if ts.is_empty() {
        return Vec::new();
    }
    reference
        .timestamps
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            let j = ts.partition_point(|&x| x < t);
            let candidates = [j.checked_sub(1), (j < ts.len()).then_some(j)];
            let best = candidates
                .into_iter()
                .flatten()
                .min_by_key(|&k| ((ts[k] - t).abs(), k))?;
            let delta = ts[best] - t;
            (delta.abs() <= max_gap_ms).then_some(MatchedPair { reference: i, other: best, delta_ms: delta })
        })
        .collect()
}
