//! Fixed-step world engine and batch runner.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::controller::{ControllerEvent, LongitudinalController};
use crate::domain::{ControllerParams, EntrySide, Lane, ParamError, PedestrianState, VehicleState, WorldGeometry};
use crate::hybrid::{HybridController, Mode, STOPPED_SPEED};
use crate::pedestrian::{sample_accepted_gap, GapAcceptanceModel, GapReference, PedestrianAgent, Phase};
use crate::pomdp::{PomdpController, PomdpPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("scenario uses the POMDP controller but no solved policy was supplied")]
    MissingPolicy,
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControllerKind {
    Hybrid,
    Pomdp,
}

impl ControllerKind {
    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Hybrid => "hybrid",
            ControllerKind::Pomdp => "pomdp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geometry: WorldGeometry,
    pub controller: ControllerParams,
    pub gap_model: GapAcceptanceModel,
    pub gap_reference: GapReference,
    pub lane: Lane,
    pub entry_side: EntrySide,
    pub controller_kind: ControllerKind,
    pub initial_d: f64,
    pub initial_v: f64,
    pub dt: f64,
    /// Actuation delay between command and plant response.
    pub t_delay_plant: f64,
    pub max_sim_time: f64,
    pub collision_radius: f64,
    pub seed: u64,
    /// With no pedestrian the vehicle only has to clear the crosswalk.
    pub pedestrian_enabled: bool,
}

impl Scenario {
    /// Four-lane simulation setup.
    pub fn simulation_default() -> Self {
        let controller = ControllerParams::simulation_default();
        Scenario {
            geometry: WorldGeometry::simulation_default(),
            controller,
            gap_model: GapAcceptanceModel::default(),
            gap_reference: GapReference::default(),
            lane: Lane::A,
            entry_side: EntrySide::Near,
            controller_kind: ControllerKind::Hybrid,
            initial_d: 25.0,
            initial_v: controller.v_speedlimit,
            dt: 0.05,
            t_delay_plant: 0.0,
            max_sim_time: 60.0,
            collision_radius: 1.0,
            seed: 0,
            pedestrian_enabled: true,
        }
    }

    /// Two-lane test-vehicle setup with a delayed brake response.
    pub fn experiment_default() -> Self {
        let controller = ControllerParams::experiment_default();
        Scenario {
            geometry: WorldGeometry::experiment_default(),
            controller,
            initial_d: 60.0,
            initial_v: controller.v_speedlimit,
            t_delay_plant: 0.5,
            ..Scenario::simulation_default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.geometry.validate()?;
        self.controller.validate()?;
        self.gap_model.validate()?;
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(SimError::Param(ParamError::Invalid {
                    field,
                    reason: reason.into(),
                }))
            }
        };
        check(self.dt > 0.0 && self.dt.is_finite(), "dt", "must be positive")?;
        check(
            self.max_sim_time > 0.0 && self.max_sim_time.is_finite(),
            "max_sim_time",
            "must be positive",
        )?;
        check(
            self.t_delay_plant >= 0.0 && self.t_delay_plant.is_finite(),
            "t_delay_plant",
            "must be non-negative",
        )?;
        check(
            self.initial_d > 0.0 && self.initial_d.is_finite(),
            "initial_d",
            "must be positive",
        )?;
        check(
            self.initial_v >= 0.0 && self.initial_v.is_finite(),
            "initial_v",
            "must be non-negative",
        )?;
        check(self.collision_radius >= 0.0, "collision_radius", "must be non-negative")?;
        Ok(())
    }

    pub fn vehicle_x(&self) -> f64 {
        self.geometry.vehicle_lane_center_x(self.lane)
    }
}

/// Delays commands by a whole number of ticks; starts filled with zero commands.
#[derive(Debug, Clone)]
pub struct DelayBuffer {
    queue: VecDeque<f64>,
}

impl DelayBuffer {
    pub fn new(delay: f64, dt: f64) -> Self {
        let n = (delay / dt).round() as usize;
        DelayBuffer {
            queue: std::iter::repeat_n(0.0, n).collect(),
        }
    }

    pub fn push_pop(&mut self, command: f64) -> f64 {
        self.queue.push_back(command);
        self.queue.pop_front().expect("just pushed")
    }
}

/// Advance the point mass one tick. Returns the new state and the acceleration actually realized.
pub fn plant_tick(vehicle: &VehicleState, commanded_a: f64, dt: f64, delay: &mut DelayBuffer) -> (VehicleState, f64) {
    let mut a = delay.push_pop(commanded_a);
    if vehicle.v + a * dt < 0.0 {
        a = -vehicle.v / dt;
    }
    let v = vehicle.v + a * dt;
    let d = vehicle.d - vehicle.v * dt - 0.5 * a * dt * dt;
    (VehicleState { d, v, x_v: vehicle.x_v }, a)
}

/// Point-to-point distance between vehicle front and pedestrian.
pub fn vehicle_pedestrian_distance(vehicle: &VehicleState, ped: &PedestrianState, geometry: &WorldGeometry) -> f64 {
    let dx = vehicle.x_v - ped.x_p;
    let dy = geometry.vehicle_y(vehicle.d);
    dx.hypot(dy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafetyEventKind {
    Controller(ControllerEvent),
    Collision { distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyEvent {
    pub t: f64,
    pub kind: SafetyEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub d: f64,
    pub v: f64,
    pub a_cmd: f64,
    pub a_actual: f64,
    pub x_p: f64,
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub accepted_gap: f64,
    pub lane: Lane,
    pub entry_side: EntrySide,
    pub controller_kind: ControllerKind,
    pub min_distance: f64,
    /// Smallest `|x_v - x_p|` over ticks where the vehicle body overlaps the crosswalk.
    pub min_lateral_in_crosswalk: Option<f64>,
    pub avg_velocity: f64,
    pub peak_accel: f64,
    pub collision: bool,
    pub timed_out: bool,
    pub mode_trace: Vec<(f64, Mode)>,
    pub safety_events: Vec<SafetyEvent>,
    /// Distance to the stop point when the vehicle first came to rest.
    pub stop_d: Option<f64>,
    pub duration: f64,
    pub trace: Option<Vec<TraceRecord>>,
}

impl TrialResult {
    /// Distinct consecutive modes, e.g. `[Driving, Yielding, Driving]`.
    pub fn mode_sequence(&self) -> Vec<Mode> {
        let mut seq: Vec<Mode> = Vec::new();
        for &(_, m) in &self.mode_trace {
            if seq.last() != Some(&m) {
                seq.push(m);
            }
        }
        seq
    }

    pub fn visited(&self, mode: Mode) -> bool {
        self.mode_trace.iter().any(|&(_, m)| m == mode)
    }
}

/// Deterministic per-trial random stream.
pub fn trial_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn make_controller(
    scenario: &Scenario,
    policy: Option<&Arc<PomdpPolicy>>,
) -> Result<Box<dyn LongitudinalController>, SimError> {
    Ok(match scenario.controller_kind {
        ControllerKind::Hybrid => Box::new(HybridController::new(
            scenario.controller,
            scenario.geometry,
            scenario.dt,
        )?),
        ControllerKind::Pomdp => {
            let policy = policy.ok_or(SimError::MissingPolicy)?;
            Box::new(PomdpController::new(Arc::clone(policy), scenario.geometry, scenario.dt))
        }
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrialOptions {
    pub accepted_gap: Option<f64>,
    pub record_trace: bool,
}

pub fn run_trial(
    scenario: &Scenario,
    policy: Option<&Arc<PomdpPolicy>>,
    options: TrialOptions,
) -> Result<TrialResult, SimError> {
    scenario.validate()?;
    let mut controller = make_controller(scenario, policy)?;
    let accepted_gap = options
        .accepted_gap
        .unwrap_or_else(|| sample_accepted_gap(&scenario.gap_model, &mut trial_rng(scenario.seed)));
    let geometry = scenario.geometry;
    let dt = scenario.dt;

    let mut vehicle = VehicleState {
        d: scenario.initial_d,
        v: scenario.initial_v,
        x_v: scenario.vehicle_x(),
    };
    let mut agent = PedestrianAgent::new(
        scenario.entry_side,
        accepted_gap,
        &scenario.gap_model,
        scenario.gap_reference,
        geometry,
    );
    let mut delay = DelayBuffer::new(scenario.t_delay_plant, dt);

    let mut mode_trace = Vec::new();
    let mut safety_events = Vec::new();
    let mut trace = options.record_trace.then(Vec::new);
    let mut min_distance = vehicle_pedestrian_distance(&vehicle, &agent.state, &geometry);
    let mut min_lateral: Option<f64> = None;
    let mut peak_accel: f64 = 0.0;
    let mut speed_sum = 0.0;
    let mut stop_d = None;
    let mut collided = false;
    let mut ticks = 0usize;
    let max_ticks = (scenario.max_sim_time / dt).ceil() as usize;

    let timed_out = loop {
        if ticks >= max_ticks {
            break true;
        }
        let t = ticks as f64 * dt;
        let a_cmd = controller.command(&vehicle, &agent.state);
        for e in controller.drain_events() {
            safety_events.push(SafetyEvent {
                t,
                kind: SafetyEventKind::Controller(e),
            });
        }
        if let Some(m) = controller.mode() {
            if mode_trace.last().map(|&(_, last)| last) != Some(m) {
                mode_trace.push((t, m));
            }
        }
        let (next, a_actual) = plant_tick(&vehicle, a_cmd, dt, &mut delay);
        vehicle = next;
        if scenario.pedestrian_enabled {
            agent.tick(&vehicle, dt);
        }
        ticks += 1;
        let t = ticks as f64 * dt;

        speed_sum += vehicle.v;
        peak_accel = peak_accel.max(a_actual.abs());
        let distance = vehicle_pedestrian_distance(&vehicle, &agent.state, &geometry);
        min_distance = min_distance.min(distance);
        if distance < scenario.collision_radius && !collided {
            collided = true;
            safety_events.push(SafetyEvent {
                t,
                kind: SafetyEventKind::Collision { distance },
            });
        }
        if geometry.vehicle_overlaps_crosswalk(vehicle.d) {
            let lateral = (vehicle.x_v - agent.state.x_p).abs();
            min_lateral = Some(min_lateral.map_or(lateral, |m: f64| m.min(lateral)));
        }
        if stop_d.is_none() && vehicle.v <= STOPPED_SPEED {
            stop_d = Some(vehicle.d);
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(TraceRecord {
                t,
                d: vehicle.d,
                v: vehicle.v,
                a_cmd,
                a_actual,
                x_p: agent.state.x_p,
                mode: controller.mode(),
            });
        }

        let ped_done = !scenario.pedestrian_enabled || agent.phase == Phase::Done;
        if ped_done && vehicle.d < geometry.d_clear() {
            break false;
        }
    };

    Ok(TrialResult {
        accepted_gap,
        lane: scenario.lane,
        entry_side: scenario.entry_side,
        controller_kind: scenario.controller_kind,
        min_distance,
        min_lateral_in_crosswalk: min_lateral,
        avg_velocity: if ticks > 0 { speed_sum / ticks as f64 } else { vehicle.v },
        peak_accel,
        collision: collided,
        timed_out,
        mode_trace,
        safety_events,
        stop_d,
        duration: ticks as f64 * dt,
        trace,
    })
}

/// Where a batch gets its accepted gaps from.
#[derive(Debug, Clone, PartialEq)]
pub enum GapSource {
    /// `n` trials, trial `i` seeded with `base_seed + i`.
    Random(usize),
    Sweep(Vec<f64>),
}

/// Values `lo, lo + step, ...` up to `hi` inclusive, rounded to 1e-9.
pub fn sweep_values(lo: f64, step: f64, hi: f64) -> Result<Vec<f64>, SimError> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(SimError::Sweep(format!("{lo}:{step}:{hi}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| ((lo + step * i as f64) * 1e9).round() / 1e9).collect())
}

pub fn run_batch(
    scenario: &Scenario,
    source: &GapSource,
    policy: Option<&Arc<PomdpPolicy>>,
) -> Result<Vec<TrialResult>, SimError> {
    scenario.validate()?;
    let jobs: Vec<(u64, Option<f64>)> = match source {
        GapSource::Random(n) => (0..*n as u64).map(|i| (scenario.seed.wrapping_add(i), None)).collect(),
        GapSource::Sweep(gaps) => gaps
            .iter()
            .enumerate()
            .map(|(i, &g)| (scenario.seed.wrapping_add(i as u64), Some(g)))
            .collect(),
    };
    jobs.into_par_iter()
        .map(|(seed, gap)| {
            let s = Scenario {
                seed,
                ..scenario.clone()
            };
            run_trial(
                &s,
                policy,
                TrialOptions {
                    accepted_gap: gap,
                    record_trace: false,
                },
            )
        })
        .collect()
}
