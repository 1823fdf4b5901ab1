//! Mapping a data series onto actuator heights.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ShapeError;
use crate::model::ActuatorSpec;
use crate::num::clamp;

/// Samples of `(position, value)` and the value and height ranges mapped
/// onto each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalizationSeries {
    pub samples: Vec<(f64, f64)>,
    pub v_min: f64,
    pub v_max: f64,
    pub h_min: f64,
    pub h_max: f64,
}

impl PhysicalizationSeries {
    pub fn validate(&self) -> Result<(), ShapeError> {
        if !(self.v_min < self.v_max) {
            return Err(ShapeError::Series("v_min must be below v_max"));
        }
        if !(self.h_min < self.h_max) {
            return Err(ShapeError::Series("h_min must be below h_max"));
        }
        if self.samples.is_empty() {
            return Err(ShapeError::Series("no samples"));
        }
        if self.samples.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(ShapeError::Series("positions must strictly increase"));
        }
        if self.samples.iter().any(|s| !s.0.is_finite() || !s.1.is_finite()) {
            return Err(ShapeError::Series("samples must be finite"));
        }
        Ok(())
    }

    /// Also checks the height range fits the actuator's stroke.
    pub fn validate_for(&self, spec: &ActuatorSpec) -> Result<(), ShapeError> {
        self.validate()?;
        if spec.contains_height(self.h_min) && spec.contains_height(self.h_max) {
            Ok(())
        } else {
            Err(ShapeError::Series("height range outside the actuator stroke"))
        }
    }

    /// Value at `position` by linear interpolation between the bracketing
    /// samples.
    pub fn value_at(&self, position: f64) -> Result<f64, ShapeError> {
        self.validate()?;
        let (first, last) = (self.samples[0], self.samples[self.samples.len() - 1]);
        if !(position >= first.0 && position <= last.0) {
            return Err(ShapeError::ProbeOutOfRange {
                probe: position,
                min: first.0,
                max: last.0,
            });
        }
        let k = self.samples.partition_point(|s| s.0 <= position);
        if k == 0 || k >= self.samples.len() {
            return Ok(if k == 0 { first.1 } else { last.1 });
        }
        let ((x0, y0), (x1, y1)) = (self.samples[k - 1], self.samples[k]);
        Ok(y0 + (position - x0) / (x1 - x0) * (y1 - y0))
    }

    /// Height for a data value.
    pub fn height_for(&self, value: f64) -> f64 {
        let v = clamp(value, self.v_min, self.v_max);
        self.h_min + (v - self.v_min) / (self.v_max - self.v_min) * (self.h_max - self.h_min)
    }
}

/// Target height at `probe_position`.
pub fn physicalize(series: &PhysicalizationSeries, probe_position: f64) -> Result<f64, ShapeError> {
    let v = series.value_at(probe_position)?;
    Ok(series.height_for(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series() -> PhysicalizationSeries {
        PhysicalizationSeries {
            samples: vec![(0.0, 150.0), (1000.0, 170.0), (2000.0, 160.0)],
            v_min: 150.0,
            v_max: 170.0,
            h_min: 15.0,
            h_max: 150.0,
        }
    }

    #[test]
    fn endpoints_and_midpoint() {
        let s = series();
        assert_eq!(physicalize(&s, 0.0).unwrap(), 15.0);
        assert_eq!(physicalize(&s, 1000.0).unwrap(), 150.0);
        assert_eq!(physicalize(&s, 2000.0).unwrap(), 82.5);
        assert_eq!(s.height_for(160.0), 82.5);
    }

    #[test]
    fn interpolates_between_samples() {
        let s = series();
        assert_eq!(s.value_at(500.0).unwrap(), 160.0);
        assert_eq!(s.value_at(1500.0).unwrap(), 165.0);
    }

    #[test]
    fn clamps_values_outside_the_range() {
        let s = series();
        assert_eq!(s.height_for(100.0), 15.0);
        assert_eq!(s.height_for(500.0), 150.0);
    }

    #[test]
    fn no_extrapolation() {
        assert!(matches!(
            physicalize(&series(), 2000.5),
            Err(ShapeError::ProbeOutOfRange { .. })
        ));
        assert!(physicalize(&series(), -1.0).is_err());
    }

    #[test]
    fn invalid_series() {
        let mut s = series();
        s.v_max = s.v_min;
        assert!(s.validate().is_err());
        let mut s = series();
        s.samples.swap(0, 1);
        assert!(s.validate().is_err());
        let mut s = series();
        s.h_max = 200.0;
        assert!(s.validate_for(&ActuatorSpec::default()).is_err());
    }
}
