//! Shared domain types and the crosswalk coordinate frame.
//!
//! The x axis runs along the crosswalk with its origin at the near-side curb.
//! The y axis runs along the road: the near crosswalk edge (the line the
//! pedestrian walks on) is `y = 0` and the approaching vehicle sits at
//! `y = -d - delta`, where `d` is its signed distance to the stop point.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl ParamError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ParamError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

fn require(cond: bool, field: &'static str, reason: &str) -> Result<(), ParamError> {
    if cond {
        Ok(())
    } else {
        Err(ParamError::invalid(field, reason))
    }
}

/// Ego lane. Lane A is the lane nearest the near-side curb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lane {
    A,
    B,
}

impl Lane {
    pub fn index(self) -> usize {
        match self {
            Lane::A => 0,
            Lane::B => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Lane::A => "A",
            Lane::B => "B",
        }
    }
}

/// Side of the road the pedestrian enters from. `Near` is the `x = 0` curb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntrySide {
    Near,
    Far,
}

impl EntrySide {
    pub fn label(self) -> &'static str {
        match self {
            EntrySide::Near => "near",
            EntrySide::Far => "far",
        }
    }

    /// Sign of the crossing velocity for a pedestrian entering from this side.
    pub fn direction(self) -> f64 {
        match self {
            EntrySide::Near => 1.0,
            EntrySide::Far => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldGeometry {
    pub n_lanes: usize,
    pub lane_width: f64,
    /// End of the legally relevant crosswalk span, measured from the near curb.
    pub x_f: f64,
    /// Safety offset between the stop point and the near crosswalk edge.
    pub delta: f64,
    /// Extent of the painted crosswalk along the road.
    pub crosswalk_width: f64,
    /// The vehicle reference point is its front bumper; this is how far the body trails it.
    pub vehicle_length: f64,
}

impl WorldGeometry {
    pub fn new(
        n_lanes: usize,
        lane_width: f64,
        x_f: f64,
        delta: f64,
        crosswalk_width: f64,
        vehicle_length: f64,
    ) -> Result<Self, ParamError> {
        let geometry = WorldGeometry {
            n_lanes,
            lane_width,
            x_f,
            delta,
            crosswalk_width,
            vehicle_length,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Four 3.5 m lanes, full-span crosswalk, 5 m stop offset.
    pub fn simulation_default() -> Self {
        Self::with_lanes(4)
    }

    /// Two-lane road used by the experimental preset.
    pub fn experiment_default() -> Self {
        Self::with_lanes(2)
    }

    fn with_lanes(n_lanes: usize) -> Self {
        let lane_width = 3.5;
        WorldGeometry {
            n_lanes,
            lane_width,
            x_f: n_lanes as f64 * lane_width,
            delta: 5.0,
            crosswalk_width: 3.0,
            vehicle_length: 4.5,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        require(
            self.n_lanes >= 2,
            "n_lanes",
            "must be at least 2 (ego uses lane A or B)",
        )?;
        require(
            self.lane_width.is_finite() && self.lane_width > 0.0,
            "lane_width",
            "must be positive",
        )?;
        require(
            self.x_f > 0.0 && self.x_f <= self.road_width() + 1e-12,
            "x_f",
            "must lie in (0, n_lanes * lane_width]",
        )?;
        require(self.delta.is_finite() && self.delta > 0.0, "delta", "must be positive")?;
        require(
            self.crosswalk_width.is_finite() && self.crosswalk_width >= 0.0,
            "crosswalk_width",
            "must be non-negative",
        )?;
        require(
            self.vehicle_length.is_finite() && self.vehicle_length >= 0.0,
            "vehicle_length",
            "must be non-negative",
        )?;
        Ok(())
    }

    pub fn road_width(&self) -> f64 {
        self.n_lanes as f64 * self.lane_width
    }

    /// Lateral position of the center of lane `index` (0-based from the near curb).
    pub fn lane_center_x(&self, index: usize) -> f64 {
        (index as f64 + 0.5) * self.lane_width
    }

    pub fn vehicle_lane_center_x(&self, lane: Lane) -> f64 {
        self.lane_center_x(lane.index())
    }

    /// Longitudinal coordinate of the vehicle front for a given `d`.
    pub fn vehicle_y(&self, d: f64) -> f64 {
        -d - self.delta
    }

    /// Value of `d` at which the vehicle's rear clears the far crosswalk edge.
    pub fn d_clear(&self) -> f64 {
        -(self.delta + self.crosswalk_width + self.vehicle_length)
    }

    /// Whether the vehicle body `[y - length, y]` overlaps the crosswalk band `[0, width]`.
    pub fn vehicle_overlaps_crosswalk(&self, d: f64) -> bool {
        let front = self.vehicle_y(d);
        front >= 0.0 && front - self.vehicle_length <= self.crosswalk_width
    }

    /// Pedestrian spawn point on the sidewalk, one meter back from the curb.
    pub fn pedestrian_start_x(&self, side: EntrySide) -> f64 {
        match side {
            EntrySide::Near => -1.0,
            EntrySide::Far => self.road_width() + 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Signed distance to the stop point; negative once past it.
    pub d: f64,
    pub v: f64,
    /// Lateral crosswalk coordinate of the vehicle's lane center.
    pub x_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianState {
    pub x_p: f64,
    pub xdot_p: f64,
    pub entry_side: EntrySide,
}

impl PedestrianState {
    pub fn waiting(x_p: f64, entry_side: EntrySide) -> Self {
        PedestrianState {
            x_p,
            xdot_p: 0.0,
            entry_side,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerParams {
    pub k_s: f64,
    pub t_delay: f64,
    pub v_speedlimit: f64,
    pub a_cmf: f64,
    pub a_max: f64,
    pub tau_max: f64,
}

impl ControllerParams {
    /// Simulation parameter set.
    pub fn simulation_default() -> Self {
        ControllerParams {
            k_s: 2.0,
            t_delay: 0.0,
            v_speedlimit: 4.5,
            a_cmf: 2.0,
            a_max: 9.0,
            tau_max: 4.0,
        }
    }

    /// Parameter set used on the test vehicle.
    pub fn experiment_default() -> Self {
        ControllerParams {
            k_s: 1.0,
            t_delay: 0.5,
            v_speedlimit: 7.0,
            a_cmf: 2.0,
            a_max: 9.0,
            tau_max: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.k_s.is_finite() && self.k_s > 0.0, "k_s", "must be positive")?;
        require(
            self.t_delay.is_finite() && self.t_delay >= 0.0,
            "t_delay",
            "must be non-negative",
        )?;
        require(
            self.v_speedlimit.is_finite() && self.v_speedlimit > 0.0,
            "v_speedlimit",
            "must be positive",
        )?;
        require(self.a_cmf > 0.0, "a_cmf", "must be positive")?;
        require(
            self.a_max.is_finite() && self.a_max > self.a_cmf,
            "a_max",
            "must exceed a_cmf",
        )?;
        require(
            self.tau_max.is_finite() && self.tau_max > 0.0,
            "tau_max",
            "must be positive",
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_centers_follow_lane_width() {
        let g = WorldGeometry::simulation_default();
        let centers: Vec<f64> = (0..g.n_lanes).map(|k| g.lane_center_x(k)).collect();
        assert_eq!(centers, vec![1.75, 5.25, 8.75, 12.25]);
        assert!(centers.windows(2).all(|w| w[0] < w[1]));
        assert!(centers.iter().all(|&c| (0.0..=g.road_width()).contains(&c)));
    }

    #[test]
    fn rejects_span_beyond_road() {
        let err = WorldGeometry::new(4, 3.5, 14.5, 5.0, 3.0, 4.5).unwrap_err();
        assert!(matches!(err, ParamError::Invalid { field: "x_f", .. }));
        assert!(WorldGeometry::new(4, 3.5, 7.0, 0.0, 3.0, 4.5).is_err());
    }

    #[test]
    fn params_require_comfort_below_max() {
        let mut p = ControllerParams::simulation_default();
        assert!(p.validate().is_ok());
        p.a_max = p.a_cmf;
        assert!(p.validate().is_err());
    }

    #[test]
    fn overlap_window() {
        let g = WorldGeometry::simulation_default();
        assert!(!g.vehicle_overlaps_crosswalk(0.0));
        assert!(g.vehicle_overlaps_crosswalk(-g.delta));
        assert!(g.vehicle_overlaps_crosswalk(g.d_clear() + 1e-9));
        assert!(!g.vehicle_overlaps_crosswalk(g.d_clear() - 1e-3));
    }
}
