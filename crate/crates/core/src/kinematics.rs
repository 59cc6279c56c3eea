//! Closed-form kinematic quantities shared by the controllers and the pedestrian model.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GapError {
    /// A stopped vehicle never arrives; callers treat this as an infinite gap.
    #[error("gap undefined for non-positive speed {0} m/s")]
    UndefinedGap(f64),
    #[error("vehicle is already past the reference point (d = {0} m)")]
    PastStopPoint(f64),
}

/// Time until the vehicle reaches a point `d` meters ahead at constant speed `v`.
pub fn gap(d: f64, v: f64) -> Result<f64, GapError> {
    if !(v > 0.0) {
        return Err(GapError::UndefinedGap(v));
    }
    if d < 0.0 {
        return Err(GapError::PastStopPoint(d));
    }
    Ok(d / v)
}

/// Distance needed to stop from `v` at the comfort deceleration.
pub fn comfort_brake_distance(v: f64, a_cmf: f64) -> f64 {
    debug_assert!(a_cmf > 0.0);
    v * v / (2.0 * a_cmf)
}

/// Distance needed to stop from `v` at the maximum deceleration.
pub fn max_brake_distance(v: f64, a_max: f64) -> f64 {
    debug_assert!(a_max > 0.0);
    v * v / (2.0 * a_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gap_examples() {
        assert_eq!(gap(18.0, 4.5), Ok(4.0));
        assert_eq!(gap(0.0, 4.5), Ok(0.0));
        assert_eq!(gap(10.0, 0.0), Err(GapError::UndefinedGap(0.0)));
        assert!(matches!(gap(-1.0, 4.5), Err(GapError::PastStopPoint(_))));
    }

    #[test]
    fn brake_distance_examples() {
        assert_eq!(comfort_brake_distance(4.5, 2.0), 5.0625);
        assert_eq!(comfort_brake_distance(0.0, 2.0), 0.0);
        assert_eq!(comfort_brake_distance(7.0, 2.0), 12.25);
        assert_eq!(max_brake_distance(4.5, 9.0), 1.125);
        assert_eq!(max_brake_distance(0.0, 9.0), 0.0);
        assert_eq!(max_brake_distance(9.0, 9.0), 4.5);
    }

    proptest! {
        #[test]
        fn max_braking_is_shorter(v in 0.0f64..40.0, a_cmf in 0.1f64..5.0, extra in 0.1f64..10.0) {
            let a_max = a_cmf + extra;
            let dm = max_brake_distance(v, a_max);
            let dc = comfort_brake_distance(v, a_cmf);
            if v == 0.0 {
                prop_assert_eq!(dm, dc);
            } else {
                prop_assert!(dm < dc);
            }
        }

        #[test]
        fn gap_is_homogeneous(d in 0.0f64..200.0, v in 0.1f64..40.0, c in 0.01f64..100.0) {
            let g1 = gap(d, v).unwrap();
            let g2 = gap(c * d, c * v).unwrap();
            prop_assert!((g1 - g2).abs() <= 1e-12 * g1.max(1.0));
        }
    }
}
