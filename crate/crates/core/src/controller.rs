//! Common interface for the longitudinal controllers driven by the simulator.

use crate::domain::{PedestrianState, VehicleState};
use crate::hybrid::Mode;

/// Noteworthy conditions a controller reports back to the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerEvent {
    /// Hard braking reached the stop point while still moving; the command was clamped to `-a_max`.
    HardBrakePastStopPoint { d: f64, v: f64 },
    /// The observed state fell outside the policy grid and was clamped to the nearest bin.
    ObservationClamped { d: f64, v: f64 },
}

pub trait LongitudinalController {
    /// Advance one control tick and return the commanded acceleration.
    fn command(&mut self, vehicle: &VehicleState, ped: &PedestrianState) -> f64;

    /// Discrete mode, for controllers that have one.
    fn mode(&self) -> Option<Mode> {
        None
    }

    fn drain_events(&mut self) -> Vec<ControllerEvent> {
        Vec::new()
    }
}
