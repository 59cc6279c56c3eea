//! Pedestrian-yielding longitudinal control at unsignalized crosswalks.
//!
//! The crate holds the hybrid controller, a gap-acceptance pedestrian, a
//! discretized decision-process baseline, and the simulator that pits them
//! against each other.

// Negated float comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod domain;
pub mod hybrid;
pub mod kinematics;
pub mod pedestrian;
pub mod pomdp;
pub mod sim;

pub use controller::{ControllerEvent, LongitudinalController};
pub use domain::{ControllerParams, EntrySide, Lane, ParamError, PedestrianState, VehicleState, WorldGeometry};
pub use hybrid::{HybridController, Mode};
pub use pedestrian::{GapAcceptanceModel, GapReference, PedestrianAgent, Phase};
pub use pomdp::{PomdpConfig, PomdpController, PomdpPolicy};
pub use sim::{run_batch, run_trial, ControllerKind, GapSource, Scenario, TrialOptions, TrialResult};
