//! Discretized crosswalk decision process solved by value iteration.
//!
//! State is (speed bin, pedestrian-in-crosswalk flag, distance bin, previous
//! action). Vehicle motion is a point-mass update spread over neighbouring
//! bins by linear interpolation; pedestrian entry follows the same
//! gap-acceptance distribution the simulator samples from.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::controller::{ControllerEvent, LongitudinalController};
use crate::domain::{ControllerParams, PedestrianState, VehicleState, WorldGeometry};
use crate::hybrid::in_crosswalk;
use crate::pedestrian::{GapAcceptanceModel, GapReference};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PomdpError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("policy cache: {0}")]
    Cache(String),
}

/// Uniform grid `lo, lo + step, ..., lo + (n - 1) * step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, step: f64, n: usize) -> Result<Self, PomdpError> {
        if n < 2 || !(step > 0.0) || !lo.is_finite() || !step.is_finite() {
            return Err(PomdpError::InvalidGrid(format!("lo={lo} step={step} n={n}")));
        }
        Ok(Grid { lo, step, n })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }

    pub fn hi(&self) -> f64 {
        self.value(self.n - 1)
    }

    /// Nearest bin and whether `x` had to be clamped into range.
    pub fn nearest(&self, x: f64) -> (usize, bool) {
        let f = (x - self.lo) / self.step;
        let clamped = x < self.lo || x > self.hi();
        let i = f.round().clamp(0.0, (self.n - 1) as f64) as usize;
        (i, clamped)
    }

    /// Two neighbouring bins with linear weights; `x` is clamped into range first.
    pub fn interpolate(&self, x: f64) -> [(usize, f64); 2] {
        let f = ((x - self.lo) / self.step).clamp(0.0, (self.n - 1) as f64);
        let i = (f.floor() as usize).min(self.n - 2);
        let w = f - i as f64;
        [(i, 1.0 - w), (i + 1, w)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub legality: f64,
    pub safety: f64,
    pub efficient: f64,
    pub smooth: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            legality: 10.0,
            safety: 50.0,
            efficient: 1.0,
            smooth: 2.0,
        }
    }
}

impl RewardWeights {
    pub fn scaled(&self, c: f64) -> Self {
        RewardWeights {
            legality: self.legality * c,
            safety: self.safety * c,
            efficient: self.efficient * c,
            smooth: self.smooth * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PomdpConfig {
    pub v_grid: Grid,
    pub d_grid: Grid,
    pub actions: Vec<f64>,
    pub dt: f64,
    pub discount: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub weights: RewardWeights,
    /// Distance to the stop point inside which a moving vehicle is penalized while the pedestrian crosses.
    pub safety_distance: f64,
}

impl Default for PomdpConfig {
    fn default() -> Self {
        PomdpConfig {
            v_grid: Grid {
                lo: 0.0,
                step: 0.5,
                n: 13,
            },
            d_grid: Grid {
                lo: -5.0,
                step: 1.0,
                n: 51,
            },
            actions: vec![-4.0, -2.0, -1.0, 0.0, 1.0, 2.0],
            dt: 0.25,
            discount: 0.99,
            tol: 1e-6,
            max_iters: 20_000,
            weights: RewardWeights::default(),
            safety_distance: 8.0,
        }
    }
}

/// Flattened decision state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscretizedState {
    pub v_bin: usize,
    pub c: bool,
    pub d_bin: usize,
    pub a_prev_bin: usize,
}

/// Everything the model depends on besides the grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelContext {
    pub v_speedlimit: f64,
    pub geometry: WorldGeometry,
    pub gap_model: GapAcceptanceModel,
    pub gap_reference: GapReference,
}

impl ModelContext {
    pub fn new(
        params: &ControllerParams,
        geometry: WorldGeometry,
        gap_model: GapAcceptanceModel,
        gap_reference: GapReference,
    ) -> Self {
        ModelContext {
            v_speedlimit: params.v_speedlimit,
            geometry,
            gap_model,
            gap_reference,
        }
    }
}

/// Probability that a gap drawn from `model` is at most `g`.
pub fn accepted_gap_cdf(model: &GapAcceptanceModel, g: f64) -> f64 {
    if g < model.min_gap {
        return 0.0;
    }
    Normal::new(model.mu_gap, model.sigma_gap)
        .expect("validated gap model")
        .cdf(g)
}

#[derive(Debug, Clone)]
pub struct PomdpModel {
    pub config: PomdpConfig,
    pub context: ModelContext,
    /// Per (v_bin, d_bin): chance that a waiting pedestrian steps out this step.
    entry_prob: Vec<f64>,
    pub exit_prob: f64,
    /// Sparse successor lists, one per (state, action).
    transitions: Vec<Vec<(u32, f64)>>,
    rewards: Vec<f64>,
}

impl PomdpModel {
    pub fn n_states(&self) -> usize {
        self.config.v_grid.n * 2 * self.config.d_grid.n * self.config.actions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.config.actions.len()
    }

    pub fn state_index(&self, s: DiscretizedState) -> usize {
        let cfg = &self.config;
        ((s.v_bin * 2 + s.c as usize) * cfg.d_grid.n + s.d_bin) * cfg.actions.len() + s.a_prev_bin
    }

    pub fn decode(&self, index: usize) -> DiscretizedState {
        let n_a = self.config.actions.len();
        let n_d = self.config.d_grid.n;
        let a_prev_bin = index % n_a;
        let rest = index / n_a;
        let d_bin = rest % n_d;
        let rest = rest / n_d;
        DiscretizedState {
            v_bin: rest / 2,
            c: rest % 2 == 1,
            d_bin,
            a_prev_bin,
        }
    }

    pub fn entry_prob(&self, v_bin: usize, d_bin: usize) -> f64 {
        self.entry_prob[v_bin * self.config.d_grid.n + d_bin]
    }

    pub fn transitions(&self, state: usize, action: usize) -> &[(u32, f64)] {
        &self.transitions[state * self.n_actions() + action]
    }

    pub fn reward_of(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.n_actions() + action]
    }

    /// Stable digest of everything that changes the solved table.
    pub fn cache_key(&self) -> String {
        let cfg = &self.config;
        let ctx = &self.context;
        let g = &ctx.geometry;
        let m = &ctx.gap_model;
        let w = &cfg.weights;
        let mut canon = String::new();
        let _ = write!(
            canon,
            "v:{:?},{:?},{};d:{:?},{:?},{};a:{:?};dt:{:?};gamma:{:?};tol:{:?};iters:{};w:{:?},{:?},{:?},{:?};safe:{:?};",
            cfg.v_grid.lo, cfg.v_grid.step, cfg.v_grid.n,
            cfg.d_grid.lo, cfg.d_grid.step, cfg.d_grid.n,
            cfg.actions, cfg.dt, cfg.discount, cfg.tol, cfg.max_iters,
            w.legality, w.safety, w.efficient, w.smooth, cfg.safety_distance,
        );
        let _ = write!(
            canon,
            "vlim:{:?};geo:{},{:?},{:?},{:?};gap:{:?},{:?},{:?},{:?};ref:{}",
            ctx.v_speedlimit,
            g.n_lanes,
            g.lane_width,
            g.x_f,
            g.delta,
            m.mu_gap,
            m.sigma_gap,
            m.min_gap,
            m.walk_speed,
            ctx.gap_reference.label(),
        );
        Sha256::digest(canon.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Penalty-shaped reward; every term is non-positive.
pub fn reward(state: &DiscretizedState, action: usize, config: &PomdpConfig, v_speedlimit: f64) -> f64 {
    let w = &config.weights;
    let v = config.v_grid.value(state.v_bin);
    let d = config.d_grid.value(state.d_bin);
    let moving = v > 0.0;
    let beyond_passed = d > config.d_grid.lo;
    let legality = if state.c && moving && beyond_passed && d <= 0.0 {
        -1.0
    } else {
        0.0
    };
    let safety = if state.c && moving && beyond_passed && d <= config.safety_distance {
        -1.0
    } else {
        0.0
    };
    let efficient = if state.c {
        0.0
    } else {
        -(v - v_speedlimit).abs() / v_speedlimit
    };
    let smooth = -(config.actions[action] - config.actions[state.a_prev_bin]).abs();
    w.legality * legality + w.safety * safety + w.efficient * efficient + w.smooth * smooth
}

/// Point-mass step without reversing.
fn point_mass(d: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    if v + a * dt < 0.0 {
        let t = -v / a;
        (d - v * t - 0.5 * a * t * t, 0.0)
    } else {
        (d - v * dt - 0.5 * a * dt * dt, v + a * dt)
    }
}

pub fn build_model(config: PomdpConfig, context: ModelContext) -> Result<PomdpModel, PomdpError> {
    Grid::new(config.v_grid.lo, config.v_grid.step, config.v_grid.n)?;
    Grid::new(config.d_grid.lo, config.d_grid.step, config.d_grid.n)?;
    if config.v_grid.lo != 0.0 {
        return Err(PomdpError::InvalidGrid("speed grid must start at 0".into()));
    }
    if config.actions.is_empty() || config.actions.iter().any(|a| !a.is_finite()) {
        return Err(PomdpError::InvalidGrid(
            "action grid must be non-empty and finite".into(),
        ));
    }
    if !(config.dt > 0.0) {
        return Err(PomdpError::InvalidGrid("dt must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.discount) {
        return Err(PomdpError::InvalidGrid("discount must lie in [0, 1)".into()));
    }
    context
        .gap_model
        .validate()
        .map_err(|e| PomdpError::InvalidGrid(e.to_string()))?;

    let (vg, dg) = (config.v_grid, config.d_grid);
    let n_a = config.actions.len();
    let geometry = context.geometry;

    let mut entry_prob = vec![0.0; vg.n * dg.n];
    for vi in 0..vg.n {
        for di in 0..dg.n {
            let v = vg.value(vi);
            let d = dg.value(di);
            // Mass of the accepted-gap distribution swept during one step; zero for a stopped vehicle.
            let p = if di == 0 || v <= 0.0 {
                0.0
            } else {
                let reference = context.gap_reference.distance(d, &geometry);
                if reference < 0.0 {
                    0.0
                } else {
                    let g1 = reference / v;
                    let f1 = accepted_gap_cdf(&context.gap_model, g1);
                    let f2 = accepted_gap_cdf(&context.gap_model, g1 - config.dt);
                    f1 - f2
                }
            };
            entry_prob[vi * dg.n + di] = p.clamp(0.0, 1.0);
        }
    }
    let crossing_time = geometry.road_width() / context.gap_model.walk_speed;
    let exit_prob = (config.dt / crossing_time).min(1.0);

    let n_states = vg.n * 2 * dg.n * n_a;
    let mut model = PomdpModel {
        config,
        context,
        entry_prob,
        exit_prob,
        transitions: Vec::with_capacity(n_states * n_a),
        rewards: Vec::with_capacity(n_states * n_a),
    };

    for s in 0..n_states {
        let st = model.decode(s);
        let v = vg.value(st.v_bin);
        let d = dg.value(st.d_bin);
        let p_c1 = if st.c {
            1.0 - model.exit_prob
        } else {
            model.entry_prob(st.v_bin, st.d_bin)
        };
        for ai in 0..n_a {
            let (d_next, v_next) = point_mass(d, v, model.config.actions[ai], model.config.dt);
            let mut row = Vec::with_capacity(8);
            for (vi, wv) in vg.interpolate(v_next) {
                for (di, wd) in dg.interpolate(d_next) {
                    let w = wv * wd;
                    if w == 0.0 {
                        continue;
                    }
                    for (c, pc) in [(false, 1.0 - p_c1), (true, p_c1)] {
                        if pc == 0.0 {
                            continue;
                        }
                        let next = model.state_index(DiscretizedState {
                            v_bin: vi,
                            c,
                            d_bin: di,
                            a_prev_bin: ai,
                        });
                        row.push((next as u32, w * pc));
                    }
                }
            }
            model.transitions.push(row);
            model
                .rewards
                .push(reward(&st, ai, &model.config, model.context.v_speedlimit));
        }
    }
    Ok(model)
}

/// Action values, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_actions: usize,
    pub q: Vec<f64>,
}

impl QTable {
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.q[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.q.len() / self.n_actions
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub qtable: QTable,
    /// Sup-norm change of Q per sweep.
    pub residuals: Vec<f64>,
}

fn max_of(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Synchronous value iteration until the sup-norm change drops below `tol`.
pub fn qmdp_solve(model: &PomdpModel, tol: f64, max_iters: usize) -> Result<SolveReport, PomdpError> {
    let n_a = model.n_actions();
    let n_s = model.n_states();
    let gamma = model.config.discount;
    let mut q = vec![0.0; n_s * n_a];
    let mut value = vec![0.0; n_s];
    let mut residuals = Vec::new();

    for _ in 0..max_iters {
        let next: Vec<f64> = (0..n_s * n_a)
            .into_par_iter()
            .map(|k| {
                let expected: f64 = model.transitions[k].iter().map(|&(s2, p)| p * value[s2 as usize]).sum();
                model.rewards[k] + gamma * expected
            })
            .collect();
        let residual = next
            .par_iter()
            .zip(q.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        q = next;
        value = q.par_chunks(n_a).map(max_of).collect();
        residuals.push(residual);
        if residual < tol {
            return Ok(SolveReport {
                qtable: QTable { n_actions: n_a, q },
                residuals,
            });
        }
    }
    Err(PomdpError::NotConverged {
        iterations: max_iters,
        residual: residuals.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Index of the best action; near-ties go to the smallest `|a|`, then the lower index.
pub fn greedy_action(row: &[f64], actions: &[f64]) -> usize {
    let best = max_of(row);
    let eps = 1e-9 * best.abs().max(1.0);
    (0..row.len())
        .filter(|&i| row[i] >= best - eps)
        .min_by(|&i, &j| actions[i].abs().total_cmp(&actions[j].abs()).then(i.cmp(&j)))
        .expect("non-empty action set")
}

/// Solved model plus greedy lookup.
#[derive(Debug, Clone)]
pub struct PomdpPolicy {
    pub model: PomdpModel,
    pub qtable: QTable,
}

impl PomdpPolicy {
    pub fn solve(model: PomdpModel) -> Result<(Self, Vec<f64>), PomdpError> {
        let report = qmdp_solve(&model, model.config.tol, model.config.max_iters)?;
        Ok((
            PomdpPolicy {
                model,
                qtable: report.qtable,
            },
            report.residuals,
        ))
    }

    pub fn action_index(&self, state: usize) -> usize {
        greedy_action(self.qtable.row(state), &self.model.config.actions)
    }

    /// Greedy action for a weighted set of states.
    pub fn action_for_belief(&self, belief: &[(usize, f64)]) -> usize {
        let n_a = self.model.n_actions();
        let mut row = vec![0.0; n_a];
        for &(s, b) in belief {
            for (acc, q) in row.iter_mut().zip(self.qtable.row(s)) {
                *acc += b * q;
            }
        }
        greedy_action(&row, &self.model.config.actions)
    }

    /// Discretize an observation; the flag reports whether any coordinate was clamped.
    pub fn discretize(&self, vehicle: &VehicleState, c: bool, a_prev_bin: usize) -> (DiscretizedState, bool) {
        let cfg = &self.model.config;
        let (v_bin, cv) = cfg.v_grid.nearest(vehicle.v);
        let (d_bin, cd) = cfg.d_grid.nearest(vehicle.d);
        (
            DiscretizedState {
                v_bin,
                c,
                d_bin,
                a_prev_bin,
            },
            cv || cd,
        )
    }

    pub fn write_cache(&self) -> String {
        let mut out = String::from("state_index,action_index,q_value\n");
        for s in 0..self.qtable.n_states() {
            for a in 0..self.qtable.n_actions {
                let _ = writeln!(out, "{s},{a},{}", self.qtable.get(s, a));
            }
        }
        out
    }

    pub fn read_cache(model: PomdpModel, text: &str) -> Result<Self, PomdpError> {
        let n_a = model.n_actions();
        let n_s = model.n_states();
        let mut q = vec![f64::NAN; n_s * n_a];
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("state_index,action_index,q_value") {
            return Err(PomdpError::Cache("missing header".into()));
        }
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || PomdpError::Cache(format!("line {}: malformed row", lineno + 2));
            let mut parts = line.split(',');
            let s: usize = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let a: usize = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            let v: f64 = parts.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
            if parts.next().is_some() || s >= n_s || a >= n_a {
                return Err(bad());
            }
            q[s * n_a + a] = v;
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(PomdpError::Cache("table incomplete or non-finite".into()));
        }
        Ok(PomdpPolicy {
            model,
            qtable: QTable { n_actions: n_a, q },
        })
    }
}

/// Closed-loop controller that re-plans once per model step and holds the action in between.
#[derive(Debug, Clone)]
pub struct PomdpController {
    policy: Arc<PomdpPolicy>,
    geometry: WorldGeometry,
    hold_ticks: usize,
    ticks_left: usize,
    a_prev_bin: usize,
    reported_clamp: bool,
    events: Vec<ControllerEvent>,
}

impl PomdpController {
    /// `tick` is the simulator step; commands are held for `round(model dt / tick)` ticks.
    pub fn new(policy: Arc<PomdpPolicy>, geometry: WorldGeometry, tick: f64) -> Self {
        let hold_ticks = ((policy.model.config.dt / tick).round() as usize).max(1);
        let a_prev_bin = nearest_action(&policy.model.config.actions, 0.0);
        PomdpController {
            policy,
            geometry,
            hold_ticks,
            ticks_left: 0,
            a_prev_bin,
            reported_clamp: false,
            events: Vec::new(),
        }
    }

    /// One greedy decision; pure in its inputs.
    pub fn decide(&self, vehicle: &VehicleState, ped: &PedestrianState, a_prev_bin: usize) -> (usize, bool) {
        let c = in_crosswalk(ped, &self.geometry);
        let (state, clamped) = self.policy.discretize(vehicle, c, a_prev_bin);
        let index = self.policy.model.state_index(state);
        (self.policy.action_index(index), clamped)
    }
}

fn nearest_action(actions: &[f64], a: f64) -> usize {
    (0..actions.len())
        .min_by(|&i, &j| (actions[i] - a).abs().total_cmp(&(actions[j] - a).abs()))
        .expect("non-empty action set")
}

impl LongitudinalController for PomdpController {
    fn command(&mut self, vehicle: &VehicleState, ped: &PedestrianState) -> f64 {
        if self.ticks_left == 0 {
            let (action, clamped) = self.decide(vehicle, ped, self.a_prev_bin);
            if clamped && !self.reported_clamp {
                self.reported_clamp = true;
                self.events.push(ControllerEvent::ObservationClamped {
                    d: vehicle.d,
                    v: vehicle.v,
                });
            }
            self.a_prev_bin = action;
            self.ticks_left = self.hold_ticks;
        }
        self.ticks_left -= 1;
        self.policy.model.config.actions[self.a_prev_bin]
    }

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::EntrySide;
    use std::sync::OnceLock;

    fn context() -> ModelContext {
        ModelContext::new(
            &ControllerParams::simulation_default(),
            WorldGeometry::simulation_default(),
            GapAcceptanceModel::default(),
            GapReference::default(),
        )
    }

    fn default_model() -> &'static PomdpModel {
        static MODEL: OnceLock<PomdpModel> = OnceLock::new();
        MODEL.get_or_init(|| build_model(PomdpConfig::default(), context()).unwrap())
    }

    fn default_policy() -> &'static (PomdpPolicy, Vec<f64>) {
        static POLICY: OnceLock<(PomdpPolicy, Vec<f64>)> = OnceLock::new();
        POLICY.get_or_init(|| PomdpPolicy::solve(default_model().clone()).unwrap())
    }

    #[test]
    fn state_index_is_a_bijection() {
        let m = default_model();
        assert_eq!(m.n_states(), 13 * 2 * 51 * 6);
        for s in 0..m.n_states() {
            assert_eq!(m.state_index(m.decode(s)), s);
        }
    }

    #[test]
    fn rows_are_distributions() {
        let m = default_model();
        for s in 0..m.n_states() {
            for a in 0..m.n_actions() {
                let row = m.transitions(s, a);
                let total: f64 = row.iter().map(|&(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-9, "state {s} action {a}: {total}");
                assert!(row.iter().all(|&(_, p)| (0.0..=1.0).contains(&p)));
            }
        }
    }

    #[test]
    fn stationary_vehicle_stays_put() {
        let m = default_model();
        let zero = m.config.actions.iter().position(|&a| a == 0.0).unwrap();
        for d_bin in [0, 10, 30] {
            let s = m.state_index(DiscretizedState {
                v_bin: 0,
                c: false,
                d_bin,
                a_prev_bin: zero,
            });
            let mass: f64 = m
                .transitions(s, zero)
                .iter()
                .filter(|&&(s2, _)| {
                    let t = m.decode(s2 as usize);
                    t.v_bin == 0 && t.d_bin == d_bin
                })
                .map(|&(_, p)| p)
                .sum();
            assert!((mass - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn entry_more_likely_near_mean_gap() {
        let m = default_model();
        let cfg = &m.config;
        let v_bin = cfg.v_grid.nearest(4.5).0;
        let delta = m.context.geometry.delta;
        // Crosswalk-referenced gaps of 4 s and 8 s at 4.5 m/s.
        let d4 = cfg.d_grid.nearest(4.0 * 4.5 - delta).0;
        let d8 = cfg.d_grid.nearest(8.0 * 4.5 - delta).0;
        assert!(m.entry_prob(v_bin, d4) > m.entry_prob(v_bin, d8));
        assert_eq!(m.entry_prob(0, 20), 0.0);
        assert_eq!(m.entry_prob(v_bin, 0), 0.0);
    }

    #[test]
    fn censored_cdf() {
        let g = GapAcceptanceModel::default();
        assert_eq!(accepted_gap_cdf(&g, 0.49), 0.0);
        assert!((accepted_gap_cdf(&g, 4.0) - 0.5).abs() < 1e-12);
        assert!(accepted_gap_cdf(&g, 0.5) > 0.0);
    }

    #[test]
    fn reward_examples() {
        let cfg = PomdpConfig::default();
        let v_bin = cfg.v_grid.nearest(4.5).0;
        let zero = 3;
        let calm = DiscretizedState {
            v_bin,
            c: false,
            d_bin: 30,
            a_prev_bin: zero,
        };
        assert_eq!(reward(&calm, zero, &cfg, 4.5), 0.0);
        let crossing = DiscretizedState {
            c: true,
            d_bin: cfg.d_grid.nearest(1.0).0,
            ..calm
        };
        assert!(reward(&crossing, zero, &cfg, 4.5) < 0.0);
        let r1 = reward(&calm, 4, &cfg, 4.5);
        let r2 = reward(&calm, 5, &cfg, 4.5);
        assert!(r2 < r1 && r1 < 0.0);
    }

    #[test]
    fn zero_discount_returns_reward() {
        let cfg = PomdpConfig {
            discount: 0.0,
            ..PomdpConfig::default()
        };
        let m = build_model(cfg, context()).unwrap();
        let report = qmdp_solve(&m, 1e-6, 10).unwrap();
        for s in (0..m.n_states()).step_by(7) {
            for a in 0..m.n_actions() {
                assert_eq!(report.qtable.get(s, a), m.reward_of(s, a));
            }
        }
    }

    #[test]
    fn zero_reward_gives_zero_table() {
        let cfg = PomdpConfig {
            weights: RewardWeights::default().scaled(0.0),
            ..PomdpConfig::default()
        };
        let m = build_model(cfg, context()).unwrap();
        let report = qmdp_solve(&m, 1e-6, 10).unwrap();
        assert!(report.qtable.q.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn residuals_converge_monotonically() {
        let residuals = &default_policy().1;
        assert!(*residuals.last().unwrap() < 1e-6);
        for w in residuals[1..].windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let err = qmdp_solve(default_model(), 1e-6, 3).unwrap_err();
        match err {
            PomdpError::NotConverged { iterations, residual } => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_examples() {
        let (policy, _) = default_policy();
        let geometry = WorldGeometry::simulation_default();
        let ctrl = PomdpController::new(Arc::new(policy.clone()), geometry, 0.05);
        let zero = nearest_action(&policy.model.config.actions, 0.0);
        let cruising = VehicleState {
            d: 40.0,
            v: 4.5,
            x_v: 1.75,
        };
        let waiting = PedestrianState::waiting(-1.0, EntrySide::Near);
        let (a, _) = ctrl.decide(&cruising, &waiting, zero);
        assert_eq!(policy.model.config.actions[a], 0.0);

        let crossing = PedestrianState {
            x_p: 0.5,
            xdot_p: 1.2,
            entry_side: EntrySide::Near,
        };
        let near = VehicleState { d: 12.0, ..cruising };
        let (a, _) = ctrl.decide(&near, &crossing, zero);
        assert!(policy.model.config.actions[a] < 0.0);
        assert_eq!(ctrl.decide(&near, &crossing, zero), ctrl.decide(&near, &crossing, zero));
    }

    #[test]
    fn tie_break_prefers_small_magnitude() {
        let actions = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0];
        assert_eq!(greedy_action(&[1.0, 1.0, 1.0, 1.0, 1.0, 1.0], &actions), 3);
        assert_eq!(greedy_action(&[0.0, 0.0, 5.0, 0.0, 5.0, 0.0], &actions), 2);
        assert_eq!(greedy_action(&[0.0, 0.0, 0.0, 0.0, 0.0, 7.0], &actions), 5);
    }

    #[test]
    fn cache_round_trips_exactly() {
        let (policy, _) = default_policy();
        let text = policy.write_cache();
        let back = PomdpPolicy::read_cache(policy.model.clone(), &text).unwrap();
        assert_eq!(back.qtable, policy.qtable);
        assert!(PomdpPolicy::read_cache(policy.model.clone(), "state_index,action_index,q_value\n0,0,1\n").is_err());
    }

    #[test]
    fn cache_key_tracks_parameters() {
        let m = default_model();
        let other = build_model(
            PomdpConfig {
                discount: 0.98,
                ..PomdpConfig::default()
            },
            context(),
        )
        .unwrap();
        assert_eq!(m.cache_key().len(), 64);
        assert_eq!(m.cache_key(), default_model().clone().cache_key());
        assert_ne!(m.cache_key(), other.cache_key());
    }

    #[test]
    fn held_action_between_replans() {
        let (policy, _) = default_policy();
        let geometry = WorldGeometry::simulation_default();
        let mut ctrl = PomdpController::new(Arc::new(policy.clone()), geometry, 0.05);
        let waiting = PedestrianState::waiting(-1.0, EntrySide::Near);
        let first = ctrl.command(
            &VehicleState {
                d: 40.0,
                v: 4.5,
                x_v: 1.75,
            },
            &waiting,
        );
        for k in 1..5 {
            let a = ctrl.command(
                &VehicleState {
                    d: 40.0 - k as f64,
                    v: 0.0,
                    x_v: 1.75,
                },
                &waiting,
            );
            assert_eq!(a, first);
        }
        assert!(ctrl.drain_events().is_empty());
        ctrl.command(
            &VehicleState {
                d: 80.0,
                v: 4.5,
                x_v: 1.75,
            },
            &waiting,
        );
        assert_eq!(ctrl.drain_events().len(), 1);
    }
}
