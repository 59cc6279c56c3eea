//! CSV artifacts: per-trial rows, gap-bin summaries, paired comparisons and traces.

use std::io::{Read, Write};

use crosswalk_core::sim::TraceRecord;
use crosswalk_core::{ControllerKind, TrialResult};
use serde::{Deserialize, Serialize};

/// Column order of `trials.csv`; readers reject any other header.
pub const TRIAL_COLUMNS: [&str; 10] = [
    "trial_id",
    "method",
    "lane",
    "entry_side",
    "accepted_gap_s",
    "min_distance_m",
    "avg_velocity_mps",
    "peak_accel_mps2",
    "collision",
    "final_mode_sequence",
];

/// Mode sequence placeholder for controllers without discrete modes.
pub const NO_MODES: &str = "n/a";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial_id: usize,
    pub method: String,
    pub lane: String,
    pub entry_side: String,
    pub accepted_gap_s: f64,
    pub min_distance_m: f64,
    pub avg_velocity_mps: f64,
    pub peak_accel_mps2: f64,
    pub collision: bool,
    pub final_mode_sequence: String,
}

impl TrialRow {
    pub fn from_result(trial_id: usize, r: &TrialResult) -> Self {
        let modes = match r.controller_kind {
            ControllerKind::Pomdp => NO_MODES.to_string(),
            ControllerKind::Hybrid => r.mode_sequence().iter().map(|m| m.name()).collect::<Vec<_>>().join(">"),
        };
        TrialRow {
            trial_id,
            method: r.controller_kind.label().to_string(),
            lane: r.lane.label().to_string(),
            entry_side: r.entry_side.label().to_string(),
            accepted_gap_s: r.accepted_gap,
            min_distance_m: r.min_distance,
            avg_velocity_mps: r.avg_velocity,
            peak_accel_mps2: r.peak_accel,
            collision: r.collision,
            final_mode_sequence: modes,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("empty input: no trial rows")]
    Empty,
    #[error("unexpected header {found:?}")]
    Header { found: Vec<String> },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_trials<W: Write>(out: W, rows: &[TrialRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(TRIAL_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a trials table; an input without data rows is an error.
pub fn read_trials<R: Read>(input: R) -> Result<Vec<TrialRow>, CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Err(CsvError::Empty);
    }
    if header.iter().ne(TRIAL_COLUMNS) {
        return Err(CsvError::Header {
            found: header.iter().map(str::to_string).collect(),
        });
    }
    let rows = r.deserialize().collect::<Result<Vec<TrialRow>, _>>()?;
    if rows.is_empty() {
        return Err(CsvError::Empty);
    }
    Ok(rows)
}

/// Width of the summary gap bins in seconds; bins cover [0, 10) plus one overflow bin.
pub const BIN_WIDTH: f64 = 0.5;
pub const BIN_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub lane: String,
    pub entry_side: String,
    pub gap_lo_s: f64,
    pub gap_hi_s: f64,
    pub n: usize,
    pub collisions: usize,
    pub mean_min_distance_m: f64,
    pub mean_avg_velocity_mps: f64,
    pub mean_peak_accel_mps2: f64,
    pub max_peak_accel_mps2: f64,
}

fn bin_index(gap: f64) -> usize {
    let n_bins = (BIN_LIMIT / BIN_WIDTH).round() as usize;
    if gap >= BIN_LIMIT {
        n_bins
    } else {
        ((gap.max(0.0) / BIN_WIDTH).floor() as usize).min(n_bins - 1)
    }
}

/// Aggregates per (method, lane, side, gap bin); empty bins are omitted.
pub fn summarize(rows: &[TrialRow]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    let mut groups: BTreeMap<(String, String, String, usize), Vec<&TrialRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((
                row.method.clone(),
                row.lane.clone(),
                row.entry_side.clone(),
                bin_index(row.accepted_gap_s),
            ))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((method, lane, entry_side, bin), members)| {
            let n = members.len();
            let mean = |f: fn(&TrialRow) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            let lo = bin as f64 * BIN_WIDTH;
            let hi = if lo >= BIN_LIMIT { f64::INFINITY } else { lo + BIN_WIDTH };
            SummaryRow {
                method,
                lane,
                entry_side,
                gap_lo_s: lo,
                gap_hi_s: hi,
                n,
                collisions: members.iter().filter(|r| r.collision).count(),
                mean_min_distance_m: mean(|r| r.min_distance_m),
                mean_avg_velocity_mps: mean(|r| r.avg_velocity_mps),
                mean_peak_accel_mps2: mean(|r| r.peak_accel_mps2),
                max_peak_accel_mps2: members.iter().map(|r| r.peak_accel_mps2).fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One trial under both controllers with the same seed and gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedRow {
    pub trial_id: usize,
    pub lane: String,
    pub entry_side: String,
    pub accepted_gap_s: f64,
    pub hybrid_min_distance_m: f64,
    pub pomdp_min_distance_m: f64,
    pub hybrid_avg_velocity_mps: f64,
    pub pomdp_avg_velocity_mps: f64,
    pub hybrid_peak_accel_mps2: f64,
    pub pomdp_peak_accel_mps2: f64,
    pub hybrid_collision: bool,
    pub pomdp_collision: bool,
    pub hybrid_final_mode_sequence: String,
}

impl PairedRow {
    /// Rows must describe the same trial; panics otherwise, since pairing is a harness invariant.
    pub fn join(hybrid: &TrialRow, pomdp: &TrialRow) -> Self {
        assert_eq!(hybrid.trial_id, pomdp.trial_id);
        assert_eq!(hybrid.accepted_gap_s.to_bits(), pomdp.accepted_gap_s.to_bits());
        PairedRow {
            trial_id: hybrid.trial_id,
            lane: hybrid.lane.clone(),
            entry_side: hybrid.entry_side.clone(),
            accepted_gap_s: hybrid.accepted_gap_s,
            hybrid_min_distance_m: hybrid.min_distance_m,
            pomdp_min_distance_m: pomdp.min_distance_m,
            hybrid_avg_velocity_mps: hybrid.avg_velocity_mps,
            pomdp_avg_velocity_mps: pomdp.avg_velocity_mps,
            hybrid_peak_accel_mps2: hybrid.peak_accel_mps2,
            pomdp_peak_accel_mps2: pomdp.peak_accel_mps2,
            hybrid_collision: hybrid.collision,
            pomdp_collision: pomdp.collision,
            hybrid_final_mode_sequence: hybrid.final_mode_sequence.clone(),
        }
    }
}

pub fn write_paired<W: Write>(out: W, rows: &[PairedRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    t: f64,
    d: f64,
    v: f64,
    a_cmd: f64,
    a_actual: f64,
    x_p: f64,
    mode: &'a str,
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRecord]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    for rec in trace {
        w.serialize(TraceRow {
            t: rec.t,
            d: rec.d,
            v: rec.v,
            a_cmd: rec.a_cmd,
            a_actual: rec.a_actual,
            x_p: rec.x_p,
            mode: rec.mode.map_or(NO_MODES, |m| m.name()),
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
