//! Evaluation suite: pose errors, uncertainty scores, and the
//! multimodality classifier.
//!
//! Pose accuracy uses the Euclidean translation error and the geodesic
//! rotation angle. Calibration of the reported uncertainty is scored with
//! the Gaussian negative log-likelihood score and the interval score.
//! Multimodality is detected by fitting one- and two-component Gaussian
//! mixtures to the particle ensemble in a normalized tangent chart at the
//! MAP pose (1 mm and 5 degrees map to one unit), selecting by BIC, and
//! accepting a bimodal verdict only when Ashman's D exceeds 2 and the
//! minor mode carries at least 10% of the mass.

// Float-math methods for the standalone no_std build; builds whose
// dependency graph links std resolve these inherently and would flag
// the import as unused.
#[allow(unused_imports)]
use num_traits::Float;
use crate::geometry::{log_se3_saturating, log_so3, log_so3_saturating, Pose};
use crate::stats;
use crate::svn::ParticleSet;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Matrix6, Vector3, Vector6};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Tangent normalization: one translational unit, meters.
pub const NORM_TRANS: f64 = 1e-3;
/// Tangent normalization: one rotational unit, radians (5 degrees).
pub const NORM_ROT: f64 = core::f64::consts::PI * 5.0 / 180.0;

/// Minimum points for a mixture fit (two per dimension per component).
const MIN_POINTS: usize = 12;
/// Covariance regularization added every M step.
const COV_JITTER: f64 = 1e-9;
/// EM stops when the log-likelihood improves by less than this.
const EM_TOL: f64 = 1e-8;
const EM_MAX_ITERS: usize = 200;

/// Errors from the evaluation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("sigma must be positive")]
    NonPositiveSigma,
    #[error("invalid interval: need low <= upp and alpha in (0,1)")]
    InvalidInterval,
    #[error("mixture fit needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate mixture fit: a component holds fewer than 2 points of mass")]
    DegenerateFit,
    #[error("Ashman's D undefined for coincident component means")]
    CoincidentMeans,
}

/// Translation and rotation error between an estimate and ground truth:
/// `e_t = |t - t_gt|`, `e_r = acos((trace(R_gt^T R) - 1) / 2)`.
pub fn pose_error(estimate: &Pose, gt: &Pose) -> (f64, f64) {
    let e_t = (estimate.translation() - gt.translation()).norm();
    let rel = gt.rotation().transpose() * estimate.rotation();
    let e_r = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
    (e_t, e_r)
}

/// Signed per-axis error components: the translation difference and the
/// rotation log of `R_gt^T R`. Their norms equal the `pose_error` pair.
pub fn pose_error_components(estimate: &Pose, gt: &Pose) -> (Vector3<f64>, Vector3<f64>) {
    let dt = estimate.translation() - gt.translation();
    let rel = gt.rotation().transpose() * estimate.rotation();
    let dr = log_so3(&rel).unwrap_or_else(|_| log_so3_saturating(&rel));
    (dt, dr)
}

/// Gaussian negative log-likelihood score:
/// `NLL-S = 1/2 log(2 pi sigma^2) + err^2 / (2 sigma^2)`.
pub fn nll_score(err: f64, sigma: f64) -> Result<f64, AnalysisError> {
    if !(sigma > 0.0) {
        return Err(AnalysisError::NonPositiveSigma);
    }
    Ok(0.5 * (2.0 * core::f64::consts::PI * sigma * sigma).ln() + err * err / (2.0 * sigma * sigma))
}

/// Interval score at miscoverage level `alpha`:
/// `(upp - low) + (2/alpha) max(0, low - err) + (2/alpha) max(0, err - upp)`.
pub fn interval_score(err: f64, low: f64, upp: f64, alpha: f64) -> Result<f64, AnalysisError> {
    if low > upp || !(alpha > 0.0 && alpha < 1.0) {
        return Err(AnalysisError::InvalidInterval);
    }
    let penalty = 2.0 / alpha;
    Ok((upp - low) + penalty * (low - err).max(0.0) + penalty * (err - upp).max(0.0))
}

/// Gaussian mixture with one or two full-covariance components.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    pub means: Vec<Vector6<f64>>,
    pub covariances: Vec<Matrix6<f64>>,
    pub weights: Vec<f64>,
    /// Total log-likelihood of the fitted points.
    pub log_lik: f64,
}

impl Gmm {
    pub fn k(&self) -> usize {
        self.means.len()
    }
}

/// Modality label of a particle ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Unimodal,
    Bimodal,
}

/// Outcome of the modality classifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalityVerdict {
    pub label: Modality,
    pub bic_1: f64,
    /// Infinite when the two-component fit was degenerate.
    pub bic_2: f64,
    /// Zero when no valid two-component fit exists.
    pub ashman_d: f64,
    pub minor_weight: f64,
    /// Whether the ground truth sits in the heavier mode; `None` without a
    /// ground-truth pose or under a unimodal label.
    pub gt_in_dominant: Option<bool>,
}

/// Cholesky-based multivariate normal log-density. `None` when the
/// covariance is not positive definite.
fn gaussian_log_density(x: &Vector6<f64>, mean: &Vector6<f64>, cov: &Matrix6<f64>) -> Option<f64> {
    let chol = nalgebra::Cholesky::new(*cov)?;
    let l = chol.l();
    let mut log_det = 0.0;
    for i in 0..6 {
        log_det += l[(i, i)].ln();
    }
    let d = x - mean;
    let y = l.solve_lower_triangular(&d)?;
    Some(-0.5 * 6.0 * (2.0 * core::f64::consts::PI).ln() - log_det - 0.5 * y.norm_squared())
}

/// Log-density of the mixture at a point.
pub fn gmm_log_density(gmm: &Gmm, x: &Vector6<f64>) -> f64 {
    let mut terms = Vec::with_capacity(gmm.k());
    for k in 0..gmm.k() {
        let ld = gaussian_log_density(x, &gmm.means[k], &gmm.covariances[k])
            .unwrap_or(f64::NEG_INFINITY);
        terms.push(gmm.weights[k].max(0.0).ln() + ld);
    }
    stats::log_sum_exp(&terms)
}

/// Negative log mixture density, the "evaluated under the fitted
/// posterior" uncertainty variant.
pub fn gmm_nll(gmm: &Gmm, x: &Vector6<f64>) -> f64 {
    -gmm_log_density(gmm, x)
}

fn mean_and_cov(points: &[Vector6<f64>]) -> (Vector6<f64>, Matrix6<f64>) {
    let n = points.len() as f64;
    let mut mean = Vector6::zeros();
    for p in points {
        mean += p;
    }
    mean /= n;
    let mut cov = Matrix6::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    (mean, cov + Matrix6::identity() * COV_JITTER)
}

fn total_log_lik(points: &[Vector6<f64>], gmm: &Gmm) -> f64 {
    points.iter().map(|p| gmm_log_density(gmm, p)).sum()
}

/// One EM run from a pair of seed means. `None` signals a degenerate fit.
fn em_two_components(points: &[Vector6<f64>], seeds: [Vector6<f64>; 2]) -> Option<Gmm> {
    let n = points.len();
    // Hard-assign to the nearest seed for the initial statistics.
    let mut clusters: [Vec<Vector6<f64>>; 2] = [Vec::new(), Vec::new()];
    for p in points {
        let d0 = (p - seeds[0]).norm_squared();
        let d1 = (p - seeds[1]).norm_squared();
        clusters[usize::from(d1 < d0)].push(*p);
    }
    if clusters[0].len() < 2 || clusters[1].len() < 2 {
        return None;
    }
    let mut means = Vec::with_capacity(2);
    let mut covs = Vec::with_capacity(2);
    let mut weights = Vec::with_capacity(2);
    for c in &clusters {
        let (m, s) = mean_and_cov(c);
        means.push(m);
        covs.push(s);
        weights.push(c.len() as f64 / n as f64);
    }
    let mut gmm = Gmm {
        means,
        covariances: covs,
        weights,
        log_lik: 0.0,
    };
    gmm.log_lik = total_log_lik(points, &gmm);

    let mut prev_ll = gmm.log_lik;
    for _ in 0..EM_MAX_ITERS {
        let prev = gmm.clone();
        // E step: responsibilities in log domain.
        let mut resp = vec![[0.0f64; 2]; n];
        for (i, p) in points.iter().enumerate() {
            let mut lp = [0.0f64; 2];
            for k in 0..2 {
                lp[k] = gmm.weights[k].max(1e-300).ln()
                    + gaussian_log_density(p, &gmm.means[k], &gmm.covariances[k])
                        .unwrap_or(f64::NEG_INFINITY);
            }
            let lse = stats::log_sum_exp(&lp);
            for k in 0..2 {
                resp[i][k] = if lse.is_finite() {
                    (lp[k] - lse).exp()
                } else {
                    0.5
                };
            }
        }
        // M step.
        for k in 0..2 {
            let mass: f64 = resp.iter().map(|r| r[k]).sum();
            if mass < 2.0 {
                return None;
            }
            let mut mean = Vector6::zeros();
            for (p, r) in points.iter().zip(&resp) {
                mean += p * r[k];
            }
            mean /= mass;
            let mut cov = Matrix6::zeros();
            for (p, r) in points.iter().zip(&resp) {
                let d = p - mean;
                cov += (d * d.transpose()) * r[k];
            }
            cov /= mass;
            gmm.means[k] = mean;
            gmm.covariances[k] = cov + Matrix6::identity() * COV_JITTER;
            gmm.weights[k] = mass / n as f64;
        }
        let ll = total_log_lik(points, &gmm);
        // The covariance jitter keeps components full-rank but voids the
        // exact-EM monotonicity guarantee; a decreasing step means the
        // jitter dominates the update, so keep the better previous iterate.
        if ll < prev_ll {
            gmm = prev;
            gmm.log_lik = prev_ll;
            break;
        }
        gmm.log_lik = ll;
        if (ll - prev_ll).abs() < EM_TOL {
            break;
        }
        prev_ll = ll;
    }
    Some(gmm)
}

/// Fits a one- or two-component full-covariance Gaussian mixture.
///
/// The single component is the closed-form maximum-likelihood Gaussian.
/// The two-component fit runs EM from a farthest-pair seeding plus three
/// random-pair restarts, keeping the highest log-likelihood. A run stops at
/// the previous iterate if the covariance jitter ever makes the likelihood
/// decrease. Components whose responsibility mass drops below two points
/// are treated as degenerate.
pub fn fit_gmm<R: Rng + ?Sized>(
    points: &[Vector6<f64>],
    k: usize,
    rng: &mut R,
) -> Result<Gmm, AnalysisError> {
    assert!(k == 1 || k == 2, "only one or two components are supported");
    let n = points.len();
    if n < MIN_POINTS {
        return Err(AnalysisError::InsufficientPoints {
            needed: MIN_POINTS,
            got: n,
        });
    }
    if k == 1 {
        let (mean, cov) = mean_and_cov(points);
        let mut gmm = Gmm {
            means: vec![mean],
            covariances: vec![cov],
            weights: vec![1.0],
            log_lik: 0.0,
        };
        gmm.log_lik = total_log_lik(points, &gmm);
        return Ok(gmm);
    }

    // Farthest-pair seeding.
    let mut best_pair = (0usize, 1usize);
    let mut best_d = -1.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (points[i] - points[j]).norm_squared();
            if d > best_d {
                best_d = d;
                best_pair = (i, j);
            }
        }
    }
    let mut candidates = vec![[points[best_pair.0], points[best_pair.1]]];
    for _ in 0..3 {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n);
        if b == a {
            b = (b + 1) % n;
        }
        candidates.push([points[a], points[b]]);
    }

    let mut best: Option<Gmm> = None;
    for seeds in candidates {
        if let Some(gmm) = em_two_components(points, seeds) {
            if best.as_ref().is_none_or(|b| gmm.log_lik > b.log_lik) {
                best = Some(gmm);
            }
        }
    }
    best.ok_or(AnalysisError::DegenerateFit)
}

/// Bayesian information criterion: `-2 log_lik + p ln n` with
/// `p = k (6 + 21) + (k - 1)` free parameters.
pub fn bic(gmm: &Gmm, points: &[Vector6<f64>]) -> f64 {
    let k = gmm.k() as f64;
    let p = k * 27.0 + (k - 1.0);
    -2.0 * gmm.log_lik + p * (points.len() as f64).ln()
}

/// Ashman's D between the two components, measured along the axis
/// connecting the means: `D = sqrt(2) |mu1 - mu2| / sqrt(s1^2 + s2^2)`
/// with `s_k^2 = u^T Sigma_k u`.
pub fn ashman_d(gmm: &Gmm) -> Result<f64, AnalysisError> {
    assert_eq!(gmm.k(), 2, "Ashman's D needs exactly two components");
    let diff = gmm.means[1] - gmm.means[0];
    let dist = diff.norm();
    if dist <= 1e-12 {
        return Err(AnalysisError::CoincidentMeans);
    }
    let u = diff / dist;
    let s0 = (u.transpose() * gmm.covariances[0] * u)[0];
    let s1 = (u.transpose() * gmm.covariances[1] * u)[0];
    Ok(core::f64::consts::SQRT_2 * dist / (s0 + s1).sqrt())
}

/// Particle tangent coordinates at `map_pose`, normalized to commensurable
/// units (1 mm and 5 degrees per unit).
pub fn normalized_tangent_points(particles: &ParticleSet, map_pose: &Pose) -> Vec<Vector6<f64>> {
    let map_inv = map_pose.inverse();
    particles
        .poses()
        .iter()
        .map(|p| {
            let xi = log_se3_saturating(&map_inv.compose(p)).0;
            let mut v = Vector6::zeros();
            for c in 0..3 {
                v[c] = xi[c] / NORM_TRANS;
                v[c + 3] = xi[c + 3] / NORM_ROT;
            }
            v
        })
        .collect()
}

fn mahalanobis_or_euclidean(x: &Vector6<f64>, mean: &Vector6<f64>, cov: &Matrix6<f64>) -> f64 {
    let d = x - mean;
    match nalgebra::Cholesky::new(*cov).and_then(|ch| ch.l().solve_lower_triangular(&d)) {
        Some(y) => y.norm_squared(),
        None => d.norm_squared(),
    }
}

/// Classifies the ensemble as unimodal or bimodal.
///
/// Fits one- and two-component mixtures to the normalized tangent cloud at
/// the MAP pose; the label is bimodal only when BIC prefers two
/// components, Ashman's D exceeds 2, and the minor weight is at least
/// 0.10. A degenerate two-component fit yields a unimodal verdict. With a
/// ground-truth pose and a bimodal label, the ground truth is assigned to
/// the nearest component mean under that component's Mahalanobis metric
/// (Euclidean if near-singular) and compared against the heavier mode.
/// Restart seeding is internally fixed, so the verdict is deterministic.
pub fn classify_modality(
    particles: &ParticleSet,
    map_pose: &Pose,
    gt_pose: Option<&Pose>,
) -> Result<ModalityVerdict, AnalysisError> {
    let points = normalized_tangent_points(particles, map_pose);
    let mut rng = ChaCha12Rng::seed_from_u64(0x6d0d_a11);
    let g1 = fit_gmm(&points, 1, &mut rng)?;
    let bic_1 = bic(&g1, &points);
    let (bic_2, ashman, minor, g2) = match fit_gmm(&points, 2, &mut rng) {
        Ok(g2) => {
            let b = bic(&g2, &points);
            let d = ashman_d(&g2).unwrap_or(0.0);
            let minor = g2.weights[0].min(g2.weights[1]);
            (b, d, minor, Some(g2))
        }
        Err(AnalysisError::DegenerateFit) => (f64::INFINITY, 0.0, 0.0, None),
        Err(e) => return Err(e),
    };
    let bimodal = bic_2 < bic_1 && ashman > 2.0 && minor >= 0.10;
    let label = if bimodal {
        Modality::Bimodal
    } else {
        Modality::Unimodal
    };
    let gt_in_dominant = match (gt_pose, &g2, bimodal) {
        (Some(gt), Some(g2), true) => {
            let map_inv = map_pose.inverse();
            let xi = log_se3_saturating(&map_inv.compose(gt)).0;
            let mut x = Vector6::zeros();
            for c in 0..3 {
                x[c] = xi[c] / NORM_TRANS;
                x[c + 3] = xi[c + 3] / NORM_ROT;
            }
            let d0 = mahalanobis_or_euclidean(&x, &g2.means[0], &g2.covariances[0]);
            let d1 = mahalanobis_or_euclidean(&x, &g2.means[1], &g2.covariances[1]);
            let assigned = usize::from(d1 < d0);
            Some(g2.weights[assigned] >= g2.weights[1 - assigned])
        }
        _ => None,
    };
    Ok(ModalityVerdict {
        label,
        bic_1,
        bic_2,
        ashman_d: ashman,
        minor_weight: minor,
        gt_in_dominant,
    })
}
