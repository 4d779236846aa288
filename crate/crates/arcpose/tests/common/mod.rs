//! Shared fixtures for the integration suites: exact noise-free
//! observations of a pose and seeded random twists.

use arcpose::camera;
use arcpose::geometry::{exp_se3, Pose, Twist};
use arcpose::needle::NeedleModel;
use arcpose::residuals::Observation;
use arcpose::synth;
use nalgebra::{Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_twist<R: Rng + ?Sized>(rng: &mut R, sigma_t: f64, sigma_r: f64) -> Twist {
    let mut x = Vector6::zeros();
    for i in 0..3 {
        x[i] = sigma_t * rng.sample::<f64, _>(StandardNormal);
        x[i + 3] = sigma_r * rng.sample::<f64, _>(StandardNormal);
    }
    Twist(x)
}

#[allow(dead_code)]
pub fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Noise-free observation of `pose` with every channel populated:
/// exact keypoint and backbone projections, exact grasp position, and the
/// needle-plane normal as the grasper axis (exactly perpendicular to the
/// grasp tangent, so the perpendicularity residual vanishes at `pose`).
pub fn exact_observation(pose: &Pose, timestamp: f64) -> Observation {
    let intr = synth::default_intrinsics();
    let model = NeedleModel::default();
    let backbone = model
        .sample_backbone(synth::BACKBONE_SAMPLES)
        .iter()
        .map(|p| camera::project(&intr, &pose.transform_point(p)).unwrap())
        .collect();
    Observation {
        tip_px: Some(camera::project(&intr, &pose.transform_point(&model.tip_point())).unwrap()),
        tail_px: Some(camera::project(&intr, &pose.transform_point(&model.tail_point())).unwrap()),
        backbone_px: backbone,
        grasp_pos: Some(pose.transform_point(&model.grasp_point())),
        grasper_axis: Some(pose.transform_direction(&Vector3::z())),
        robot_twist: None,
        timestamp,
    }
}

/// A pose in front of the camera, randomly displaced from the nominal one.
#[allow(dead_code)]
pub fn random_scene_pose<R: Rng + ?Sized>(rng: &mut R) -> Pose {
    exp_se3(&random_twist(rng, 4e-3, 0.25)).compose(&synth::base_pose())
}
