//! Geometry of the tracked part: a circular arc (surgical needle) rigidly
//! defined in its own body frame.
//!
//! The body frame puts the supporting circle in the `z = 0` plane, centered
//! at the origin, so a point on the arc at parameter `theta` is
//! `r (cos theta, sin theta, 0)`. The arc runs from `theta_tail` to
//! `theta_tip`; the grasp parameter marks where the jaws hold the wire.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::Vector3;
use thiserror::Error;

/// Tolerance (radians) when checking that a parameter lies on the arc.
const ARC_EPS: f64 = 1e-9;

/// Errors from needle-model queries.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NeedleError {
    /// The query parameter lies outside `[theta_tail, theta_tip]`.
    #[error("arc parameter {theta} outside [{tail}, {tip}]")]
    OutOfArc { theta: f64, tail: f64, tip: f64 },
    /// The model fields are mutually inconsistent (see [`NeedleModel::validate`]).
    #[error("inconsistent needle model: {reason}")]
    InvalidModel { reason: &'static str },
}

/// Rigid model of a circular-arc needle.
///
/// Defaults correspond to a 3/8-circle needle of 9 mm nominal size:
/// 4.5 mm radius, 0.4 mm wire, grasped off-center at `-pi/8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleModel {
    /// Radius of the supporting circle, meters.
    pub radius: f64,
    /// Angular extent of the arc, radians.
    pub arc_span: f64,
    /// Arc parameter of the tip (piercing end), radians.
    pub theta_tip: f64,
    /// Arc parameter of the tail (swage end), radians.
    pub theta_tail: f64,
    /// Arc parameter of the grasp point, radians.
    pub theta_grasp: f64,
    /// Wire diameter, meters (used only for rendering-scale heuristics).
    pub wire_diameter: f64,
}

impl Default for NeedleModel {
    fn default() -> Self {
        NeedleModel {
            radius: 4.5e-3,
            arc_span: 3.0 * PI / 4.0,
            theta_tip: 3.0 * PI / 8.0,
            theta_tail: -3.0 * PI / 8.0,
            theta_grasp: -PI / 8.0,
            wire_diameter: 0.4e-3,
        }
    }
}

impl NeedleModel {
    /// Checks internal consistency: positive radius, span in `(0, 2*pi)`,
    /// tip/tail delimiting exactly that span, grasp on the arc.
    pub fn validate(&self) -> Result<(), NeedleError> {
        if !(self.radius > 0.0) {
            return Err(NeedleError::InvalidModel {
                reason: "radius must be positive",
            });
        }
        if !(self.arc_span > 0.0 && self.arc_span < 2.0 * PI) {
            return Err(NeedleError::InvalidModel {
                reason: "arc span must lie in (0, 2*pi)",
            });
        }
        if ((self.theta_tip - self.theta_tail) - self.arc_span).abs() > 1e-9 {
            return Err(NeedleError::InvalidModel {
                reason: "tip minus tail must equal the arc span",
            });
        }
        if self.theta_grasp < self.theta_tail - ARC_EPS
            || self.theta_grasp > self.theta_tip + ARC_EPS
        {
            return Err(NeedleError::InvalidModel {
                reason: "grasp parameter must lie on the arc",
            });
        }
        if self.wire_diameter < 0.0 {
            return Err(NeedleError::InvalidModel {
                reason: "wire diameter cannot be negative",
            });
        }
        Ok(())
    }

    fn check_on_arc(&self, theta: f64) -> Result<(), NeedleError> {
        if theta < self.theta_tail - ARC_EPS || theta > self.theta_tip + ARC_EPS {
            Err(NeedleError::OutOfArc {
                theta,
                tail: self.theta_tail,
                tip: self.theta_tip,
            })
        } else {
            Ok(())
        }
    }

    /// Body-frame point on the arc at parameter `theta`.
    pub fn point_at(&self, theta: f64) -> Result<Vector3<f64>, NeedleError> {
        self.check_on_arc(theta)?;
        Ok(Vector3::new(
            self.radius * theta.cos(),
            self.radius * theta.sin(),
            0.0,
        ))
    }

    /// Unit tangent of the arc at parameter `theta` (direction of
    /// increasing `theta`).
    pub fn tangent_at(&self, theta: f64) -> Result<Vector3<f64>, NeedleError> {
        self.check_on_arc(theta)?;
        Ok(Vector3::new(-theta.sin(), theta.cos(), 0.0))
    }

    /// `n >= 2` evenly spaced body-frame points from tail to tip.
    pub fn sample_backbone(&self, n: usize) -> Vec<Vector3<f64>> {
        assert!(n >= 2, "backbone sampling needs at least two points");
        let mut pts = Vec::with_capacity(n);
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64;
            let theta = self.theta_tail + s * (self.theta_tip - self.theta_tail);
            pts.push(
                self.point_at(theta)
                    .expect("interpolated parameter stays on the arc"),
            );
        }
        pts
    }

    pub fn tip_point(&self) -> Vector3<f64> {
        self.point_at(self.theta_tip).expect("tip is on the arc")
    }

    pub fn tail_point(&self) -> Vector3<f64> {
        self.point_at(self.theta_tail).expect("tail is on the arc")
    }

    pub fn grasp_point(&self) -> Vector3<f64> {
        self.point_at(self.theta_grasp).expect("grasp is on the arc")
    }

    /// Unit tangent at the grasp point (body frame).
    pub fn grasp_tangent(&self) -> Vector3<f64> {
        self.tangent_at(self.theta_grasp).expect("grasp is on the arc")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn defaults_are_consistent() {
        let m = NeedleModel::default();
        m.validate().unwrap();
        assert_abs_diff_eq!(m.theta_tip - m.theta_tail, m.arc_span, epsilon = 1e-15);
    }

    #[test]
    fn points_lie_on_circle_in_plane() {
        let m = NeedleModel::default();
        for &theta in &[m.theta_tail, m.theta_grasp, 0.0, m.theta_tip] {
            let p = m.point_at(theta).unwrap();
            assert_abs_diff_eq!(p.norm(), m.radius, epsilon = 1e-15);
            assert_eq!(p.z, 0.0);
        }
    }

    #[test]
    fn tangent_is_unit_and_orthogonal_to_radius() {
        let m = NeedleModel::default();
        for i in 0..20 {
            let theta = m.theta_tail + m.arc_span * (i as f64 / 19.0);
            let p = m.point_at(theta).unwrap();
            let t = m.tangent_at(theta).unwrap();
            assert_abs_diff_eq!(t.norm(), 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p.dot(&t), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn out_of_arc_is_rejected() {
        let m = NeedleModel::default();
        assert!(matches!(
            m.point_at(m.theta_tip + 0.01),
            Err(NeedleError::OutOfArc { .. })
        ));
        assert!(matches!(
            m.tangent_at(m.theta_tail - 0.01),
            Err(NeedleError::OutOfArc { .. })
        ));
    }

    #[test]
    fn backbone_spans_tail_to_tip() {
        let m = NeedleModel::default();
        let pts = m.sample_backbone(100);
        assert_eq!(pts.len(), 100);
        assert_abs_diff_eq!((pts[0] - m.tail_point()).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((pts[99] - m.tip_point()).norm(), 0.0, epsilon = 1e-15);
        // Chord lengths are equal for equal parameter steps.
        let d01 = (pts[1] - pts[0]).norm();
        let d50 = (pts[50] - pts[49]).norm();
        assert_abs_diff_eq!(d01, d50, epsilon = 1e-12);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let mut m = NeedleModel::default();
        m.radius = 0.0;
        assert!(m.validate().is_err());
        let mut m = NeedleModel::default();
        m.theta_grasp = m.theta_tip + 0.5;
        assert!(m.validate().is_err());
        let mut m = NeedleModel::default();
        m.arc_span = m.arc_span * 0.5;
        assert!(m.validate().is_err());
    }
}
