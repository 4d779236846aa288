//! Bootstrap particle-filter baseline sharing the transport engine's
//! likelihood stack.
//!
//! Propagation applies the measured robot twist plus an isotropic
//! random-walk perturbation, importance weights accumulate the assembled
//! negative log-likelihood in log domain, and systematic resampling fires
//! when the effective sample size drops below a configured fraction of the
//! ensemble. The MAP estimate is the highest-weight particle after the
//! update and before resampling, mirroring the transport engine's rule, and
//! summaries reuse the same weighted tangent statistics so the two methods
//! are compared on identical terms.

use crate::geometry::{Pose, Twist};
use crate::residuals::{Observation, ResidualContext, ResidualError};
use crate::svn::{self, ParticleSet, PosteriorSummary, SvnConfig, SvnError};
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::Matrix6;
use rand::Rng;

/// Baseline filter configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfConfig {
    pub n_particles: usize,
    /// Random-walk translation standard deviation, meters.
    pub rw_sigma_t: f64,
    /// Random-walk rotation standard deviation, radians.
    pub rw_sigma_r: f64,
    /// Resample when `ess < ess_frac * n_particles`.
    pub ess_frac: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            n_particles: 3000,
            rw_sigma_t: 1e-3,
            rw_sigma_r: 5.0f64.to_radians(),
            ess_frac: 0.30,
        }
    }
}

impl PfConfig {
    /// Random-walk covariance `diag(sigma_t^2 I3, sigma_r^2 I3)`.
    pub fn process_noise(&self) -> Matrix6<f64> {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = self.rw_sigma_t * self.rw_sigma_t;
            q[(i + 3, i + 3)] = self.rw_sigma_r * self.rw_sigma_r;
        }
        q
    }
}

/// Per-frame filter diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfDiag {
    /// Effective sample size after the weight update.
    pub ess: f64,
    pub resampled: bool,
    /// Best (lowest) NLL over particles in this frame's update, infinite
    /// when the frame carried no terms.
    pub best_nll: f64,
}

/// Ensemble initialization shared with the transport engine for fairness.
pub fn init_particles<R: Rng + ?Sized>(
    obs: &Observation,
    model: &crate::needle::NeedleModel,
    cfg: &PfConfig,
    rng: &mut R,
) -> Result<ParticleSet, SvnError> {
    let adapter = SvnConfig {
        n_particles: cfg.n_particles,
        process_noise: cfg.process_noise(),
        ..SvnConfig::default()
    };
    svn::init_particles(obs, model, &adapter, rng)
}

/// Random-walk propagation: `T <- exp((xi_robot + eta)^) T`, with
/// `eta ~ N(0, diag(sigma_t^2 I3, sigma_r^2 I3))`.
pub fn pf_predict<R: Rng + ?Sized>(
    particles: &mut ParticleSet,
    robot_twist: Option<&Twist>,
    cfg: &PfConfig,
    rng: &mut R,
) {
    svn::predict(particles, robot_twist, &cfg.process_noise(), rng);
}

/// Importance-weight update: `log w_i <- log w_i - nll_i`, renormalized in
/// log domain. A frame with no usable terms leaves the weights unchanged;
/// if every particle's likelihood is non-finite the weights reset to
/// uniform (with a warning) rather than degenerate.
///
/// Returns the best (lowest) per-particle NLL seen this frame.
pub fn pf_update(particles: &mut ParticleSet, frame: &Observation, ctx: &ResidualContext) -> f64 {
    let n = particles.len();
    let mut nlls = Vec::with_capacity(n);
    let mut any_finite = false;
    let mut any_terms = false;
    for pose in particles.poses() {
        match ctx.assemble(pose, frame) {
            Ok(bundle) => {
                any_terms = true;
                if bundle.nll.is_finite() {
                    any_finite = true;
                }
                nlls.push(bundle.nll);
            }
            Err(ResidualError::EmptyObservation) => nlls.push(0.0),
            Err(_) => {
                any_terms = true;
                nlls.push(f64::INFINITY);
            }
        }
    }
    if !any_terms {
        return f64::INFINITY;
    }
    if !any_finite {
        log::warn!("particle filter: all likelihoods non-finite; resetting weights to uniform");
        particles.set_log_post(vec![0.0; n]);
        return f64::INFINITY;
    }
    let mut best = f64::INFINITY;
    let log_post: Vec<f64> = particles
        .log_post()
        .iter()
        .zip(&nlls)
        .map(|(&lp, &nll)| {
            if nll < best {
                best = nll;
            }
            lp - nll
        })
        .collect();
    particles.set_log_post(log_post);
    best
}

/// Effective sample size `1 / sum w_i^2` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().map(|w| w * w).sum();
    if s <= 0.0 {
        0.0
    } else {
        1.0 / s
    }
}

/// Systematic resampling: one uniform offset, a stratified comb of `N`
/// points through the cumulative weights. Offspring counts deviate from
/// `N * w_i` by less than one deterministically.
pub fn systematic_resample<R: Rng + ?Sized>(
    poses: &[Pose],
    weights: &[f64],
    rng: &mut R,
) -> Vec<Pose> {
    let n = poses.len();
    assert_eq!(n, weights.len());
    if n == 0 {
        return Vec::new();
    }
    let total: f64 = weights.iter().sum();
    let u0 = rng.random_range(0.0..1.0) / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut idx = 0usize;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while idx < n - 1 && cum + weights[idx] / total <= u {
            cum += weights[idx] / total;
            idx += 1;
        }
        out.push(poses[idx]);
    }
    out
}

/// One filter step: predict, update, resample if depleted, summarize.
/// The MAP (and the summary chart) comes from the post-update,
/// pre-resample weights.
pub fn pf_step<R: Rng + ?Sized>(
    particles: &mut ParticleSet,
    frame: &Observation,
    ctx: &ResidualContext,
    cfg: &PfConfig,
    rng: &mut R,
) -> (PosteriorSummary, PfDiag) {
    pf_predict(particles, frame.robot_twist.as_ref(), cfg, rng);
    let best_nll = pf_update(particles, frame, ctx);
    let map = svn::extract_map(particles);
    let summary = svn::summarize(particles, &map);
    let e = ess(particles.weights());
    let resampled = e < cfg.ess_frac * particles.len() as f64;
    if resampled {
        let new_poses = systematic_resample(particles.poses(), particles.weights(), rng);
        particles.poses_mut().copy_from_slice(&new_poses);
        let n = particles.len();
        particles.set_log_post(vec![0.0; n]);
    }
    (
        summary,
        PfDiag {
            ess: e,
            resampled,
            best_nll,
        },
    )
}
