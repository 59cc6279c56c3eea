//! Gap-acceptance pedestrian.
//!
//! The agent draws an accepted time gap once, waits at the curb, and walks
//! across at constant speed once the ego vehicle's time gap shrinks to it.
//! If the very first gap it sees is already too short it lets the vehicle
//! pass and crosses behind it.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::domain::{EntrySide, ParamError, PedestrianState, VehicleState, WorldGeometry};
use crate::kinematics::gap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapAcceptanceModel {
    pub mu_gap: f64,
    pub sigma_gap: f64,
    /// Draws below this floor are raised to it.
    pub min_gap: f64,
    pub walk_speed: f64,
}

impl Default for GapAcceptanceModel {
    fn default() -> Self {
        GapAcceptanceModel {
            mu_gap: 4.0,
            sigma_gap: 2.5f64.sqrt(),
            min_gap: 0.5,
            walk_speed: 1.2,
        }
    }
}

impl GapAcceptanceModel {
    pub fn from_variance(mu_gap: f64, variance: f64, min_gap: f64, walk_speed: f64) -> Result<Self, ParamError> {
        if !(variance > 0.0) {
            return Err(ParamError::invalid("gap_variance", "must be positive"));
        }
        let model = GapAcceptanceModel {
            mu_gap,
            sigma_gap: variance.sqrt(),
            min_gap,
            walk_speed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.sigma_gap > 0.0 && self.sigma_gap.is_finite()) {
            return Err(ParamError::invalid("sigma_gap", "must be positive"));
        }
        if !(self.min_gap > 0.0 && self.min_gap < self.mu_gap) {
            return Err(ParamError::invalid("min_gap", "must lie in (0, mu_gap)"));
        }
        if !(self.walk_speed > 0.0 && self.walk_speed.is_finite()) {
            return Err(ParamError::invalid("walk_speed", "must be positive"));
        }
        Ok(())
    }
}

/// One accepted gap: a normal draw, raised to `min_gap` if it falls below.
pub fn sample_accepted_gap<R: Rng + ?Sized>(model: &GapAcceptanceModel, rng: &mut R) -> f64 {
    let normal = Normal::new(model.mu_gap, model.sigma_gap.max(0.0)).expect("finite, non-negative sigma");
    normal.sample(rng).max(model.min_gap)
}

/// Point the pedestrian measures the vehicle's time gap to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapReference {
    /// Near edge of the crosswalk, `delta` beyond the stop point.
    #[default]
    Crosswalk,
    StopPoint,
}

impl GapReference {
    pub fn distance(self, d: f64, geometry: &WorldGeometry) -> f64 {
        match self {
            GapReference::Crosswalk => d + geometry.delta,
            GapReference::StopPoint => d,
        }
    }

    /// Time gap as perceived by the pedestrian; infinite for a stopped vehicle.
    pub fn perceived_gap(self, vehicle: &VehicleState, geometry: &WorldGeometry) -> Option<f64> {
        if vehicle.v <= 0.0 {
            return Some(f64::INFINITY);
        }
        gap(self.distance(vehicle.d, geometry), vehicle.v).ok()
    }

    pub fn label(self) -> &'static str {
        match self {
            GapReference::Crosswalk => "crosswalk",
            GapReference::StopPoint => "stop_point",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Waiting,
    Crossing,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianAgent {
    pub state: PedestrianState,
    pub accepted_gap: f64,
    pub phase: Phase,
    walk_speed: f64,
    reference: GapReference,
    geometry: WorldGeometry,
    /// `None` until the first observation; then whether the gap trigger is live.
    armed: Option<bool>,
    clock: f64,
    entered_road_at: Option<f64>,
    crossing_duration: Option<f64>,
}

impl PedestrianAgent {
    pub fn new(
        side: EntrySide,
        accepted_gap: f64,
        model: &GapAcceptanceModel,
        reference: GapReference,
        geometry: WorldGeometry,
    ) -> Self {
        PedestrianAgent {
            state: PedestrianState::waiting(geometry.pedestrian_start_x(side), side),
            accepted_gap,
            phase: Phase::Waiting,
            walk_speed: model.walk_speed,
            reference,
            geometry,
            armed: None,
            clock: 0.0,
            entered_road_at: None,
            crossing_duration: None,
        }
    }

    /// Seconds from stepping onto the road to leaving it on the far side.
    pub fn crossing_duration(&self) -> Option<f64> {
        self.crossing_duration
    }

    /// Whether the pedestrian let the vehicle pass because the first gap it saw was too short.
    pub fn declined_first_gap(&self) -> bool {
        self.armed == Some(false)
    }

    fn should_start(&mut self, vehicle: &VehicleState) -> bool {
        if vehicle.d < self.geometry.d_clear() {
            return true;
        }
        let perceived = self.reference.perceived_gap(vehicle, &self.geometry);
        let armed = *self
            .armed
            .get_or_insert_with(|| perceived.is_none_or(|g| g >= self.accepted_gap));
        match perceived {
            Some(g) if g.is_infinite() => true,
            Some(g) => armed && g <= self.accepted_gap,
            None => false,
        }
    }

    pub fn tick(&mut self, vehicle: &VehicleState, dt: f64) {
        debug_assert!(dt > 0.0);
        if self.phase == Phase::Waiting && self.should_start(vehicle) {
            self.phase = Phase::Crossing;
            self.state.xdot_p = self.state.entry_side.direction() * self.walk_speed;
        }
        if self.phase == Phase::Crossing {
            self.state.x_p += self.state.xdot_p * dt;
            let road = self.geometry.road_width();
            let on_road = (0.0..=road).contains(&self.state.x_p);
            if on_road && self.entered_road_at.is_none() {
                self.entered_road_at = Some(self.clock + dt);
            }
            let exited = match self.state.entry_side {
                EntrySide::Near => self.state.x_p >= road,
                EntrySide::Far => self.state.x_p <= 0.0,
            };
            if exited {
                self.phase = Phase::Done;
                self.state.xdot_p = 0.0;
                self.crossing_duration = self.entered_road_at.map(|t| self.clock + dt - t);
            }
        }
        self.clock += dt;
    }
}
