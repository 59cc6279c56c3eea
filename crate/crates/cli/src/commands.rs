//! Command implementations. Each returns an [`Outcome`]; all files are written after the batch finishes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use crosswalk_core::pomdp::{build_model, ModelContext};
use crosswalk_core::sim::TrialOptions;
use crosswalk_core::{run_batch, run_trial, ControllerKind, EntrySide, Lane, Mode, PomdpPolicy, Scenario, TrialResult};

use crate::config::RunConfig;
use crate::csv_io::{
    read_trials, summarize, write_paired, write_summary, write_trace, write_trials, PairedRow, TrialRow,
};
use crate::stats::{paired_greater, PairedTest};
use crate::svg::{scatter, Axes, Series};

/// Name of the resolved-config echo written beside every output set.
pub const CONFIG_ECHO: &str = "config.toml";

/// Gaps above this are the long-gap regime where the two controllers are contrasted on speed.
pub const LONG_GAP_S: f64 = 7.0;

pub const QUADRANTS: [(Lane, EntrySide); 4] = [
    (Lane::A, EntrySide::Near),
    (Lane::A, EntrySide::Far),
    (Lane::B, EntrySide::Near),
    (Lane::B, EntrySide::Far),
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Outcome {
    pub trials: usize,
    pub collisions: usize,
    pub timeouts: usize,
    /// Scripted rows whose observed behavior differs from the expected one.
    pub mismatches: usize,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.collisions == 0 && self.timeouts == 0 && self.mismatches == 0
    }

    fn add(&mut self, results: &[TrialResult]) {
        self.trials += results.len();
        self.collisions += results.iter().filter(|r| r.collision).count();
        self.timeouts += results.iter().filter(|r| r.timed_out).count();
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join(CONFIG_ECHO), cfg.resolved().to_toml().as_bytes())
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), crate::csv_io::CsvError>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Loads the solved policy for `cfg` from the cache, solving and storing it on a miss.
pub fn load_policy(cfg: &RunConfig) -> Result<(Arc<PomdpPolicy>, PathBuf, bool)> {
    let context = ModelContext::new(
        &cfg.controller_params(),
        cfg.geometry(),
        cfg.gap_model(),
        cfg.pedestrian.gap_reference.into(),
    );
    let model = build_model(cfg.pomdp_config(), context)?;
    let path = cfg.pomdp.cache_dir.join(format!("qmdp-{}.csv", model.cache_key()));
    if let Ok(text) = fs::read_to_string(&path) {
        match PomdpPolicy::read_cache(model.clone(), &text) {
            Ok(policy) => return Ok((Arc::new(policy), path, true)),
            Err(e) => eprintln!("ignoring unreadable policy cache {}: {e}", path.display()),
        }
    }
    let (policy, residuals) = PomdpPolicy::solve(model)?;
    eprintln!(
        "solved policy in {} sweeps, final residual {:.3e}",
        residuals.len(),
        residuals.last().copied().unwrap_or(0.0)
    );
    prepare_out(&cfg.pomdp.cache_dir)?;
    write_file(&path, policy.write_cache().as_bytes())?;
    Ok((Arc::new(policy), path, false))
}

fn policy_for(cfg: &RunConfig, kind: ControllerKind) -> Result<Option<Arc<PomdpPolicy>>> {
    Ok(match kind {
        ControllerKind::Pomdp => Some(load_policy(cfg)?.0),
        ControllerKind::Hybrid => None,
    })
}

/// Runs the configured batch without touching the filesystem (except the policy cache).
pub fn simulate_results(cfg: &RunConfig) -> Result<Vec<TrialResult>> {
    let scenario = cfg.scenario();
    let source = cfg.gap_source().map_err(anyhow::Error::msg)?;
    let policy = policy_for(cfg, scenario.controller_kind)?;
    Ok(run_batch(&scenario, &source, policy.as_ref())?)
}

fn rows_of(results: &[TrialResult]) -> Vec<TrialRow> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| TrialRow::from_result(i, r))
        .collect()
}

fn one_line_summary(label: &str, results: &[TrialResult]) -> String {
    let n = results.len();
    let collisions = results.iter().filter(|r| r.collision).count();
    let timeouts = results.iter().filter(|r| r.timed_out).count();
    let mean_v = results.iter().map(|r| r.avg_velocity).sum::<f64>() / n.max(1) as f64;
    let max_a = results.iter().map(|r| r.peak_accel).fold(0.0, f64::max);
    format!(
        "{label}: n={n} collisions={collisions} timeouts={timeouts} mean_avg_velocity={mean_v:.3} m/s max_peak_accel={max_a:.3} m/s^2"
    )
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let results = simulate_results(cfg)?;
    let dir = &cfg.output.dir;
    prepare_out(dir)?;
    let rows = rows_of(&results);
    write_file(&dir.join("trials.csv"), &csv_bytes(|b| write_trials(b, &rows))?)?;
    write_file(
        &dir.join("summary.csv"),
        &csv_bytes(|b| write_summary(b, &summarize(&rows)))?,
    )?;
    echo_config(cfg, dir)?;
    let scenario = cfg.scenario();
    let label = format!(
        "{} lane {} {}",
        scenario.controller_kind.label(),
        scenario.lane.label(),
        scenario.entry_side.label()
    );
    println!("{}", one_line_summary(&label, &results));
    let mut outcome = Outcome::default();
    outcome.add(&results);
    Ok(outcome)
}

/// Both controllers on every quadrant with identical seeds and gaps.
#[derive(Debug, Clone)]
pub struct Comparison {
    /// Quadrant-major, hybrid before POMDP within a quadrant.
    pub rows: Vec<TrialRow>,
    pub paired: Vec<PairedRow>,
    pub outcome: Outcome,
    pub hybrid_collisions: usize,
    pub pomdp_collisions: usize,
}

impl Comparison {
    /// One-sided test that the hybrid controller is faster than the POMDP on long gaps.
    pub fn long_gap_speed_test(&self) -> Option<PairedTest> {
        let long: Vec<&PairedRow> = self.paired.iter().filter(|p| p.accepted_gap_s > LONG_GAP_S).collect();
        let hybrid: Vec<f64> = long.iter().map(|p| p.hybrid_avg_velocity_mps).collect();
        let pomdp: Vec<f64> = long.iter().map(|p| p.pomdp_avg_velocity_mps).collect();
        paired_greater(&hybrid, &pomdp)
    }
}

pub fn compare_results(cfg: &RunConfig) -> Result<Comparison> {
    let source = cfg.gap_source().map_err(anyhow::Error::msg)?;
    let policy = load_policy(cfg)?.0;
    let base = cfg.scenario();
    let mut rows = Vec::new();
    let mut paired = Vec::new();
    let mut outcome = Outcome::default();
    let mut collisions = [0usize; 2];
    for (lane, side) in QUADRANTS {
        let mut per_method = Vec::new();
        for (k, kind) in [ControllerKind::Hybrid, ControllerKind::Pomdp].into_iter().enumerate() {
            let scenario = Scenario {
                lane,
                entry_side: side,
                controller_kind: kind,
                ..base.clone()
            };
            let results = run_batch(&scenario, &source, Some(&policy))?;
            outcome.add(&results);
            collisions[k] += results.iter().filter(|r| r.collision).count();
            per_method.push(rows_of(&results));
        }
        paired.extend(
            per_method[0]
                .iter()
                .zip(&per_method[1])
                .map(|(h, p)| PairedRow::join(h, p)),
        );
        for method_rows in per_method {
            rows.extend(method_rows);
        }
    }
    Ok(Comparison {
        rows,
        paired,
        outcome,
        hybrid_collisions: collisions[0],
        pomdp_collisions: collisions[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    MinDistance,
    AvgVelocity,
    PeakAccel,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::MinDistance, Metric::AvgVelocity, Metric::PeakAccel];

    pub fn slug(self) -> &'static str {
        match self {
            Metric::MinDistance => "min_distance",
            Metric::AvgVelocity => "avg_velocity",
            Metric::PeakAccel => "peak_accel",
        }
    }

    pub fn axis_label(self) -> &'static str {
        match self {
            Metric::MinDistance => "closest vehicle-pedestrian distance (m)",
            Metric::AvgVelocity => "average vehicle velocity (m/s)",
            Metric::PeakAccel => "peak |acceleration| (m/s^2)",
        }
    }

    fn value(self, row: &TrialRow) -> f64 {
        match self {
            Metric::MinDistance => row.min_distance_m,
            Metric::AvgVelocity => row.avg_velocity_mps,
            Metric::PeakAccel => row.peak_accel_mps2,
        }
    }
}

/// Scatter of `metric` against accepted gap, one series per method in name order.
pub fn render_panel(rows: &[TrialRow], metric: Metric, title: &str) -> Result<String> {
    let mut by_method: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        by_method
            .entry(row.method.as_str())
            .or_default()
            .push((row.accepted_gap_s, metric.value(row)));
    }
    let series: Vec<Series> = by_method
        .into_iter()
        .map(|(name, points)| Series {
            name: name.to_string(),
            points,
        })
        .collect();
    let axes = Axes {
        title: title.to_string(),
        x_label: "accepted gap (s)".into(),
        y_label: metric.axis_label().into(),
    };
    Ok(scatter(&series, &axes)?)
}

pub fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let cmp = compare_results(cfg)?;
    let dir = &cfg.output.dir;
    prepare_out(dir)?;
    write_file(&dir.join("trials.csv"), &csv_bytes(|b| write_trials(b, &cmp.rows))?)?;
    write_file(&dir.join("paired.csv"), &csv_bytes(|b| write_paired(b, &cmp.paired))?)?;
    write_file(
        &dir.join("summary.csv"),
        &csv_bytes(|b| write_summary(b, &summarize(&cmp.rows)))?,
    )?;
    for (lane, side) in QUADRANTS {
        let quadrant: Vec<TrialRow> = cmp
            .rows
            .iter()
            .filter(|r| r.lane == lane.label() && r.entry_side == side.label())
            .cloned()
            .collect();
        for metric in Metric::ALL {
            let title = format!("{} entry, lane {}", side.label(), lane.label());
            let svg = render_panel(&quadrant, metric, &title)?;
            let name = format!("{}_lane{}_{}.svg", side.label(), lane.label(), metric.slug());
            write_file(&dir.join(name), svg.as_bytes())?;
        }
    }
    echo_config(cfg, dir)?;
    println!(
        "compare: n={} collisions hybrid={} pomdp={} timeouts={}",
        cmp.outcome.trials, cmp.hybrid_collisions, cmp.pomdp_collisions, cmp.outcome.timeouts
    );
    match cmp.long_gap_speed_test() {
        Some(t) => println!(
            "gaps > {LONG_GAP_S} s: pairs={} mean speed difference (hybrid - pomdp)={:.3} m/s t={:.3} p={:.3e}",
            t.n, t.mean_diff, t.t, t.p_value
        ),
        None => println!("gaps > {LONG_GAP_S} s: fewer than two pairs"),
    }
    Ok(cmp.outcome)
}

/// Renders `input` to `out`; nothing is written unless rendering succeeds.
pub fn plot(input: &Path, out: &Path, metric: Metric, lane: Option<Lane>, side: Option<EntrySide>) -> Result<()> {
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let rows = read_trials(file).with_context(|| format!("reading {}", input.display()))?;
    let rows: Vec<TrialRow> = rows
        .into_iter()
        .filter(|r| lane.is_none_or(|l| r.lane == l.label()))
        .filter(|r| side.is_none_or(|s| r.entry_side == s.label()))
        .collect();
    if rows.is_empty() {
        bail!("no rows of {} match the lane/side filter", input.display());
    }
    let mut title = metric.slug().replace('_', " ");
    if let Some(l) = lane {
        title.push_str(&format!(", lane {}", l.label()));
    }
    if let Some(s) = side {
        title.push_str(&format!(", {} entry", s.label()));
    }
    let svg = render_panel(&rows, metric, &title)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out(parent)?;
    }
    write_file(out, svg.as_bytes())
}

/// Interaction mode that characterizes a trial: the first non-driving mode, if any.
pub fn dominant_mode(result: &TrialResult) -> Mode {
    result
        .mode_sequence()
        .into_iter()
        .find(|&m| m != Mode::Driving)
        .unwrap_or(Mode::Driving)
}

pub fn replay_result(cfg: &RunConfig, gap: f64) -> Result<TrialResult> {
    let scenario = cfg.scenario();
    let policy = policy_for(cfg, scenario.controller_kind)?;
    Ok(run_trial(
        &scenario,
        policy.as_ref(),
        TrialOptions {
            accepted_gap: Some(gap),
            record_trace: true,
        },
    )?)
}

pub fn replay(cfg: &RunConfig, gap: f64) -> Result<Outcome> {
    if !(gap.is_finite() && gap >= 0.0) {
        bail!("gap must be a non-negative number of seconds, got {gap}");
    }
    let result = replay_result(cfg, gap)?;
    let dir = &cfg.output.dir;
    prepare_out(dir)?;
    let trace = result.trace.as_deref().unwrap_or(&[]);
    write_file(&dir.join("trace.csv"), &csv_bytes(|b| write_trace(b, trace))?)?;
    write_file(
        &dir.join("trials.csv"),
        &csv_bytes(|b| write_trials(b, &rows_of(std::slice::from_ref(&result))))?,
    )?;
    echo_config(cfg, dir)?;
    let modes: Vec<&str> = result.mode_sequence().iter().map(|m| m.name()).collect();
    println!(
        "replay gap={gap} s: modes={} min_distance={:.3} m collision={} stop_d={}",
        if modes.is_empty() {
            "n/a".to_string()
        } else {
            modes.join(">")
        },
        result.min_distance,
        result.collision,
        result.stop_d.map_or("none".to_string(), |d| format!("{d:.3} m")),
    );
    let mut outcome = Outcome::default();
    outcome.add(std::slice::from_ref(&result));
    Ok(outcome)
}

/// Scripted on-road trials: gap, pedestrian entry side and the expected interaction mode.
pub const FIELD_TRIALS: [(f64, EntrySide, Mode); 6] = [
    (4.0, EntrySide::Near, Mode::Yielding),
    (1.0, EntrySide::Near, Mode::SpeedUp),
    (7.0, EntrySide::Near, Mode::Yielding),
    (2.5, EntrySide::Near, Mode::HardBraking),
    (3.0, EntrySide::Far, Mode::Yielding),
    (1.0, EntrySide::Far, Mode::SpeedUp),
];

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FieldTrialRow {
    pub trial: usize,
    pub accepted_gap_s: f64,
    pub entry_side: &'static str,
    pub expected_mode: &'static str,
    pub observed_mode: &'static str,
    pub final_mode_sequence: String,
    pub stop_d_m: Option<f64>,
    pub min_distance_m: f64,
    pub collision: bool,
    pub matches: bool,
}

pub fn field_trial_rows(cfg: &RunConfig) -> Result<Vec<FieldTrialRow>> {
    let base = cfg.scenario();
    let policy = policy_for(cfg, base.controller_kind)?;
    FIELD_TRIALS
        .iter()
        .enumerate()
        .map(|(i, &(gap, side, expected))| {
            let scenario = Scenario {
                entry_side: side,
                ..base.clone()
            };
            let r = run_trial(
                &scenario,
                policy.as_ref(),
                TrialOptions {
                    accepted_gap: Some(gap),
                    record_trace: false,
                },
            )?;
            let observed = dominant_mode(&r);
            Ok(FieldTrialRow {
                trial: i + 1,
                accepted_gap_s: gap,
                entry_side: side.label(),
                expected_mode: expected.name(),
                observed_mode: observed.name(),
                final_mode_sequence: TrialRow::from_result(i, &r).final_mode_sequence,
                stop_d_m: r.stop_d,
                min_distance_m: r.min_distance,
                collision: r.collision,
                matches: observed == expected,
            })
        })
        .collect()
}

pub fn replay_field_trials(cfg: &RunConfig) -> Result<Outcome> {
    let rows = field_trial_rows(cfg)?;
    let dir = &cfg.output.dir;
    prepare_out(dir)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    write_file(&dir.join("field_trials.csv"), &w.into_inner()?)?;
    echo_config(cfg, dir)?;
    let mut outcome = Outcome::default();
    for row in &rows {
        println!(
            "trial {}: gap {} s {} entry, expected {} observed {} [{}]",
            row.trial,
            row.accepted_gap_s,
            row.entry_side,
            row.expected_mode,
            row.observed_mode,
            if row.matches { "ok" } else { "MISMATCH" }
        );
        outcome.trials += 1;
        outcome.collisions += row.collision as usize;
        outcome.mismatches += (!row.matches) as usize;
    }
    Ok(outcome)
}

pub fn solve_pomdp(cfg: &RunConfig) -> Result<Outcome> {
    let (policy, path, cached) = load_policy(cfg)?;
    println!(
        "{} policy with {} states x {} actions at {}",
        if cached { "cached" } else { "solved" },
        policy.model.n_states(),
        policy.model.n_actions(),
        path.display()
    );
    Ok(Outcome::default())
}
