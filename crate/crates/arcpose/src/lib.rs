//! Monocular 6-DoF pose inference for a rigidly grasped circular-arc object.
//!
//! The crate estimates the pose of a thin circular-arc part (e.g. a surgical
//! needle held by a robotic grasper) from a single pinhole camera, fusing
//! four measurement channels into one Gauss-Newton-ready residual stack:
//!
//! * sparse endpoint keypoints (tip / tail reprojection),
//! * a dense conic term (Sampson distance of backbone pixels to the
//!   projected circle),
//! * a grasp-point position anchor from the robot's kinematics,
//! * a grasper-axis perpendicularity constraint on the arc tangent.
//!
//! Inference maintains a particle ensemble on SE(3) and moves it with a
//! Stein variational Newton transport ([`svn`]): particles share
//! Gauss-Newton curvature through a scaled RBF kernel, so the ensemble
//! converges like a second-order optimizer while the kernel repulsion keeps
//! it spread over the posterior -- including both basins of the two-fold
//! perspective ambiguity a near-planar arc exhibits. A bootstrap particle
//! filter ([`pf`]) is included as a baseline, a synthetic-scene generator
//! ([`synth`]) provides ground-truthed data, and [`analysis`] carries the
//! evaluation toolkit (pose errors, calibration scores, mixture-based
//! bimodality detection).
//!
//! The crate is `no_std` (with `alloc`); all file formats, serialization and
//! the command-line driver live in the companion `arcpose-cli` crate.
//!
//! Conventions used throughout: twists are ordered translation-first
//! `[v; omega]`, pose perturbations are left-multiplicative
//! `T' = exp(delta^) * T`, units are meters / radians / pixels / seconds,
//! and `vec(.)` stacks matrices column-major.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod camera;
pub mod geometry;
pub mod needle;
pub mod pf;
pub mod residuals;
pub mod stats;
pub mod svn;
pub mod synth;
