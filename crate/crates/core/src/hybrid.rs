//! Four-mode hybrid yielding controller.
//!
//! Each tick the controller first evaluates the Driving guards (pedestrian in
//! the crosswalk, time advantage, available braking distance), then computes
//! the feedforward-plus-feedback command of whichever mode is active, and
//! finally checks that mode's exit guard. Exits take effect on the next tick.

use std::fmt;

use crate::controller::{ControllerEvent, LongitudinalController};
use crate::domain::{ControllerParams, ParamError, PedestrianState, VehicleState, WorldGeometry};
use crate::kinematics::{comfort_brake_distance, max_brake_distance};

/// Below this speed the vehicle counts as stopped.
pub const STOPPED_SPEED: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Driving,
    Yielding,
    HardBraking,
    SpeedUp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Driving => "Driving",
            Mode::Yielding => "Yielding",
            Mode::HardBraking => "HardBraking",
            Mode::SpeedUp => "SpeedUp",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "Driving" => Some(Mode::Driving),
            "Yielding" => Some(Mode::Yielding),
            "HardBraking" => Some(Mode::HardBraking),
            "SpeedUp" => Some(Mode::SpeedUp),
            _ => None,
        }
    }

    /// Transitions allowed by the mode graph: Driving fans out to the three
    /// interaction modes, and each of those only returns to Driving.
    pub fn can_transition_to(self, next: Mode) -> bool {
        match (self, next) {
            (a, b) if a == b => true,
            (Mode::Driving, _) => true,
            (_, Mode::Driving) => true,
            _ => false,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Vehicle state captured at a mode switch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latch {
    pub d_o: f64,
    pub v_o: f64,
}

/// Whether the pedestrian holds the vehicle: inside the span `[0, x_F]`, or
/// outside it and walking towards it.
pub fn in_crosswalk(ped: &PedestrianState, geometry: &WorldGeometry) -> bool {
    let x = ped.x_p;
    let in_span = (0.0..=geometry.x_f).contains(&x);
    let approaching = (x < 0.0 && ped.xdot_p > 0.0) || (x > geometry.x_f && ped.xdot_p < 0.0);
    in_span || approaching
}

/// Pedestrian time to reach the vehicle's lane center minus vehicle time to the stop point.
///
/// Infinite when the pedestrian is stationary or has already walked past the
/// lane center. A stopped vehicle never arrives, giving negative infinity.
pub fn time_advantage(vehicle: &VehicleState, ped: &PedestrianState) -> f64 {
    if ped.xdot_p == 0.0 {
        return f64::INFINITY;
    }
    let remaining = (vehicle.x_v - ped.x_p) * ped.xdot_p.signum();
    if remaining < 0.0 {
        return f64::INFINITY;
    }
    let ped_time = remaining / ped.xdot_p.abs();
    if vehicle.v <= 0.0 {
        return f64::NEG_INFINITY;
    }
    ped_time - vehicle.d / vehicle.v
}

/// Speed-limit tracking command used while Driving, bounded by the comfort limit.
pub fn driving_command(vehicle: &VehicleState, params: &ControllerParams) -> f64 {
    (params.k_s * (params.v_speedlimit - vehicle.v)).clamp(-params.a_cmf, params.a_cmf)
}

pub fn speed_up_command(params: &ControllerParams) -> f64 {
    params.a_cmf
}

/// Constant-deceleration profile through `(d_o, v_o)`.
pub fn yielding_desired_speed(d: f64, latch: Latch, a_cmf: f64) -> f64 {
    (2.0 * a_cmf * (d - latch.d_o) + latch.v_o * latch.v_o).max(0.0).sqrt()
}

/// Square-root profile through `(d_o, v_o)` and `(0, 0)`.
pub fn hard_braking_desired_speed(d: f64, latch: Latch) -> f64 {
    latch.v_o / latch.d_o.sqrt() * d.max(0.0).sqrt()
}

/// Deceleration that stops the vehicle exactly at the stop point.
pub fn hard_braking_feedforward(vehicle: &VehicleState) -> f64 {
    -vehicle.v * vehicle.v / (2.0 * vehicle.d)
}

#[derive(Debug, Clone)]
pub struct HybridController {
    params: ControllerParams,
    geometry: WorldGeometry,
    /// Control tick; braking starts on the last tick before the comfort point.
    period: f64,
    mode: Mode,
    entry: Option<Latch>,
    brake_anchor: Option<Latch>,
    reported_overrun: bool,
    events: Vec<ControllerEvent>,
}

impl HybridController {
    pub fn new(params: ControllerParams, geometry: WorldGeometry, period: f64) -> Result<Self, ParamError> {
        params.validate()?;
        geometry.validate()?;
        if !(period >= 0.0 && period.is_finite()) {
            return Err(ParamError::invalid("period", "must be non-negative"));
        }
        Ok(HybridController {
            params,
            geometry,
            period,
            mode: Mode::Driving,
            entry: None,
            brake_anchor: None,
            reported_overrun: false,
            events: Vec::new(),
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn current_mode(&self) -> Mode {
        self.mode
    }

    /// `(d_o, v_o)` captured when Yielding or HardBraking was entered.
    pub fn latch(&self) -> Option<Latch> {
        self.entry
    }

    /// Start of the Yielding deceleration phase, once it has begun.
    pub fn brake_anchor(&self) -> Option<Latch> {
        self.brake_anchor
    }

    /// Comfortable stopping distance including the brake-delay lead.
    pub fn comfort_threshold(&self, v: f64) -> f64 {
        comfort_brake_distance(v, self.params.a_cmf) + self.params.t_delay * v
    }

    pub fn max_threshold(&self, v: f64) -> f64 {
        max_brake_distance(v, self.params.a_max) + self.params.t_delay * v
    }

    /// Mode chosen when the pedestrian trigger fires with insufficient time advantage.
    pub fn select_interaction_mode(&self, d: f64, v: f64) -> Mode {
        if d >= self.comfort_threshold(v) {
            Mode::Yielding
        } else if d > self.max_threshold(v) {
            Mode::HardBraking
        } else {
            Mode::SpeedUp
        }
    }

    /// One pass of the control loop; returns the saturated acceleration command.
    pub fn step(&mut self, vehicle: &VehicleState, ped: &PedestrianState) -> f64 {
        let ped_holds = in_crosswalk(ped, &self.geometry);

        if self.mode == Mode::Driving
            && vehicle.d > 0.0
            && ped_holds
            && !(time_advantage(vehicle, ped) > self.params.tau_max)
        {
            let next = self.select_interaction_mode(vehicle.d, vehicle.v);
            self.enter(next, vehicle);
        }

        let command = match self.mode {
            Mode::Driving => driving_command(vehicle, &self.params),
            Mode::Yielding => self.yielding_command(vehicle),
            Mode::HardBraking => self.hard_braking_command(vehicle),
            Mode::SpeedUp => speed_up_command(&self.params),
        };

        let exit = match self.mode {
            Mode::Driving => false,
            Mode::Yielding | Mode::HardBraking => !ped_holds,
            Mode::SpeedUp => !ped_holds || vehicle.d < 0.0,
        };
        if exit {
            self.enter(Mode::Driving, vehicle);
        }

        command.clamp(-self.params.a_max, self.params.a_cmf)
    }

    fn enter(&mut self, mode: Mode, vehicle: &VehicleState) {
        debug_assert!(self.mode.can_transition_to(mode));
        self.mode = mode;
        self.brake_anchor = None;
        self.reported_overrun = false;
        self.entry = match mode {
            Mode::Yielding | Mode::HardBraking => Some(Latch {
                d_o: vehicle.d,
                v_o: vehicle.v,
            }),
            _ => None,
        };
    }

    /// Coast at the speed limit until the comfort braking point, then track
    /// the constant-deceleration profile anchored where braking began.
    pub fn yielding_command(&mut self, vehicle: &VehicleState) -> f64 {
        let p = self.params;
        if self.brake_anchor.is_none() {
            let coast = (p.k_s * (p.v_speedlimit - vehicle.v)).clamp(-p.a_max, p.a_cmf);
            let t = self.period;
            let next_v = vehicle.v + coast * t;
            let next_d = vehicle.d - vehicle.v * t - 0.5 * coast * t * t;
            if next_d > self.comfort_threshold(next_v) {
                return coast;
            }
            self.brake_anchor = Some(Latch {
                d_o: vehicle.d,
                v_o: vehicle.v,
            });
        }
        let anchor = self.brake_anchor.expect("anchor set above");
        let v_des = yielding_desired_speed(vehicle.d, anchor, p.a_cmf);
        (-p.a_cmf + p.k_s * (v_des - vehicle.v)).clamp(-p.a_max, p.a_cmf)
    }

    pub fn hard_braking_command(&mut self, vehicle: &VehicleState) -> f64 {
        let p = self.params;
        if vehicle.d <= 0.0 {
            if vehicle.v > STOPPED_SPEED && !self.reported_overrun {
                self.reported_overrun = true;
                self.events.push(ControllerEvent::HardBrakePastStopPoint {
                    d: vehicle.d,
                    v: vehicle.v,
                });
            }
            return -p.a_max;
        }
        let latch = self.entry.unwrap_or(Latch {
            d_o: vehicle.d,
            v_o: vehicle.v,
        });
        let v_des = hard_braking_desired_speed(vehicle.d, latch);
        (hard_braking_feedforward(vehicle) + p.k_s * (v_des - vehicle.v)).clamp(-p.a_max, p.a_cmf)
    }
}

impl LongitudinalController for HybridController {
    fn command(&mut self, vehicle: &VehicleState, ped: &PedestrianState) -> f64 {
        self.step(vehicle, ped)
    }

    fn mode(&self) -> Option<Mode> {
        Some(self.mode)
    }

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        std::mem::take(&mut self.events)
    }
}
